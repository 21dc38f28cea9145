use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::{DatasetName, Guid, ModelError};

/// Replication/health status of a dataset as recorded by the bookkeeping
/// authority. Only `Valid` datasets are eligible for indexing.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum RegistryStatus {
    Valid,
    Bad,
    Obsolete,
}

impl FromStr for RegistryStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "VALID" => Ok(RegistryStatus::Valid),
            "BAD" => Ok(RegistryStatus::Bad),
            "OBSOLETE" => Ok(RegistryStatus::Obsolete),
            other => Err(format!("unknown status {other:?}")),
        }
    }
}

impl fmt::Display for RegistryStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegistryStatus::Valid => "VALID",
            RegistryStatus::Bad => "BAD",
            RegistryStatus::Obsolete => "OBSOLETE",
        })
    }
}

/// One constituent file of a registered dataset.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct RegistryFile {
    pub guid: Guid,
    pub expected_events: u64,
}

/// Bookkeeping record for one dataset: its constituent files with expected
/// per-file event counts.
#[derive(Clone, PartialEq, Debug)]
pub struct RegistryEntry {
    pub dataset: DatasetName,
    pub status: RegistryStatus,
    pub created_ms: u64,
    pub files: Vec<RegistryFile>,
}

impl RegistryEntry {
    pub fn total_expected_events(&self) -> u64 {
        self.files.iter().map(|f| f.expected_events).sum()
    }

    pub fn expected_by_guid(&self) -> BTreeMap<Guid, u64> {
        self.files
            .iter()
            .map(|f| (f.guid, f.expected_events))
            .collect()
    }

    pub fn is_indexable(&self) -> bool {
        self.status == RegistryStatus::Valid
    }
}

/// In-memory dataset registry, loaded from a tab-separated file with one
/// dataset per line:
///
/// ```text
/// <dataset-name> \t <VALID|BAD|OBSOLETE> \t <created-ms> \t <guid>:<count> [\t <guid>:<count> ...]
/// ```
///
/// Blank lines and lines starting with `#` are ignored.
#[derive(Clone, Debug, Default)]
pub struct Registry {
    entries: BTreeMap<String, RegistryEntry>,
}

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        Registry::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self, ModelError> {
        let mut registry = Registry::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let entry = parse_line(line, line_no)?;
            let name = entry.dataset.to_string();
            if registry.entries.contains_key(&name) {
                return Err(ModelError::MalformedRegistry {
                    line_no,
                    reason: format!("duplicate dataset {name}"),
                });
            }
            registry.entries.insert(name, entry);
        }
        Ok(registry)
    }

    pub fn insert(&mut self, entry: RegistryEntry) {
        self.entries.insert(entry.dataset.to_string(), entry);
    }

    /// Look up a dataset by canonical name.
    pub fn lookup(&self, name: &str) -> Result<&RegistryEntry, ModelError> {
        self.entries.get(name).ok_or_else(|| ModelError::UnknownDataset {
            name: name.to_string(),
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &RegistryEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn parse_line(line: &str, line_no: usize) -> Result<RegistryEntry, ModelError> {
    let bad = |reason: String| ModelError::MalformedRegistry { line_no, reason };
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() < 4 {
        return Err(bad(format!(
            "expected at least 4 tab-separated fields, got {}",
            fields.len()
        )));
    }
    let dataset = DatasetName::parse(fields[0])
        .map_err(|e| bad(format!("bad dataset name: {e}")))?;
    let status: RegistryStatus = fields[1].parse().map_err(|e| bad(e))?;
    let created_ms: u64 = fields[2]
        .parse()
        .map_err(|_| bad(format!("bad created-ms {:?}", fields[2])))?;
    let mut files = Vec::new();
    for spec in &fields[3..] {
        let (guid_text, count_text) = spec
            .split_once(':')
            .ok_or_else(|| bad(format!("bad file spec {spec:?}, expected guid:count")))?;
        let guid = Guid::from_text(guid_text).map_err(|e| bad(format!("bad file spec: {e}")))?;
        let expected_events: u64 = count_text
            .parse()
            .map_err(|_| bad(format!("bad event count {count_text:?}")))?;
        files.push(RegistryFile {
            guid,
            expected_events,
        });
    }
    Ok(RegistryEntry {
        dataset,
        status,
        created_ms,
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# bookkeeping snapshot
data17_13TeV.00330079.physics_BphysLS.merge.AOD.f843_m1824\tVALID\t1500000000000\t21EC2020-3AEA-4069-A2DD-08002B30309D:120\t31EC2020-3AEA-4069-A2DD-08002B30309D:80

data17_13TeV.00330079.physics_Main.merge.AOD.f843_m1824\tBAD\t1500000000001\t41EC2020-3AEA-4069-A2DD-08002B30309D:10
";

    #[test]
    fn sample_registry_parses() {
        let reg = Registry::parse_str(SAMPLE).unwrap();
        assert_eq!(reg.len(), 2);
        let entry = reg
            .lookup("data17_13TeV.00330079.physics_BphysLS.merge.AOD.f843_m1824")
            .unwrap();
        assert_eq!(entry.status, RegistryStatus::Valid);
        assert!(entry.is_indexable());
        assert_eq!(entry.created_ms, 1_500_000_000_000);
        assert_eq!(entry.files.len(), 2);
        assert_eq!(entry.total_expected_events(), 200);
        let by_guid = entry.expected_by_guid();
        let g = Guid::from_text("31EC2020-3AEA-4069-A2DD-08002B30309D").unwrap();
        assert_eq!(by_guid[&g], 80);

        let bad = reg
            .lookup("data17_13TeV.00330079.physics_Main.merge.AOD.f843_m1824")
            .unwrap();
        assert!(!bad.is_indexable());
    }

    #[test]
    fn unknown_dataset_is_an_error() {
        let reg = Registry::parse_str(SAMPLE).unwrap();
        let err = reg.lookup("data17_13TeV.00330080.physics_Main.merge.AOD.x1").unwrap_err();
        assert!(matches!(err, ModelError::UnknownDataset { .. }));
    }

    #[test]
    fn malformed_lines_are_rejected_with_line_numbers() {
        for (text, needle) in [
            ("only_one_field", "at least 4"),
            ("a.00000001.s.p.AOD.t\tVALID\t0\tnope", "file spec"),
            ("a.00000001.s.p.AOD.t\tMEH\t0\tg:1", "status"),
            (
                "a.00000001.s.p.AOD.t\tVALID\tz\t21EC2020-3AEA-4069-A2DD-08002B30309D:1",
                "created-ms",
            ),
            (
                "a.00000001.s.p.AOD.t\tVALID\t0\t21EC2020-3AEA-4069-A2DD-08002B30309D:x",
                "event count",
            ),
        ] {
            let err = Registry::parse_str(text).unwrap_err();
            let msg = err.to_string();
            assert!(msg.contains("line 1"), "{msg}");
            assert!(msg.contains(needle), "{msg} missing {needle}");
        }
    }

    #[test]
    fn duplicate_dataset_lines_are_rejected() {
        let line = "a.00000001.s.p.AOD.t\tVALID\t0\t21EC2020-3AEA-4069-A2DD-08002B30309D:1";
        let text = format!("{line}\n{line}\n");
        let err = Registry::parse_str(&text).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
    }
}
