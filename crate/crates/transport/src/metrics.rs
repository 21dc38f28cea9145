use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Severity of one monitoring record.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricLevel {
    Heartbeat,
    Warning,
    Error,
    Critical,
}

/// One monitoring record emitted by a module: a common part (module name,
/// timestamp, severity) plus module-specific counters.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct MetricRecord {
    pub module: String,
    pub timestamp_ms: u64,
    pub level: MetricLevel,
    #[serde(default)]
    pub detail: String,
    #[serde(default)]
    pub counters: BTreeMap<String, u64>,
}

/// Appends metric records for one module to `<dir>/<module>.jsonl`.
/// Writing is best-effort: monitoring must never take a component down.
pub struct MetricsWriter {
    module: String,
    path: PathBuf,
}

impl MetricsWriter {
    pub fn new(dir: &Path, module: &str) -> Self {
        MetricsWriter {
            module: module.to_string(),
            path: dir.join(format!("{module}.jsonl")),
        }
    }

    pub fn emit(&self, timestamp_ms: u64, level: MetricLevel, detail: &str) {
        self.emit_counters(timestamp_ms, level, detail, BTreeMap::new());
    }

    pub fn emit_counters(
        &self,
        timestamp_ms: u64,
        level: MetricLevel,
        detail: &str,
        counters: BTreeMap<String, u64>,
    ) {
        let record = MetricRecord {
            module: self.module.clone(),
            timestamp_ms,
            level,
            detail: detail.to_string(),
            counters,
        };
        if let Err(e) = self.append(&record) {
            log::warn!("metric append failed for {}: {e}", self.module);
        }
    }

    fn append(&self, record: &MetricRecord) -> std::io::Result<()> {
        if let Some(parent) = self.path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)?;
        let line = serde_json::to_string(record).map_err(std::io::Error::other)?;
        writeln!(file, "{line}")
    }
}

/// Read every metric record under a metrics directory, keyed by module.
/// Unparseable lines are skipped: monitoring reads must stay robust.
pub fn read_module_metrics(dir: &Path) -> BTreeMap<String, Vec<MetricRecord>> {
    let mut by_module: BTreeMap<String, Vec<MetricRecord>> = BTreeMap::new();
    let Ok(entries) = std::fs::read_dir(dir) else {
        return by_module;
    };
    for entry in entries.flatten() {
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
            continue;
        }
        let Ok(text) = std::fs::read_to_string(&path) else {
            continue;
        };
        for line in text.lines() {
            if let Ok(record) = serde_json::from_str::<MetricRecord>(line) {
                by_module.entry(record.module.clone()).or_default().push(record);
            }
        }
    }
    by_module
}
