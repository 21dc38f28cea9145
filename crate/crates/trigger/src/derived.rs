//! Dataset-level trigger passes: materialising decoded chain names into the
//! stored rows, and building the per-chain fire-count and pairwise overlap
//! tables that sit next to a dataset as derived map files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use ei_mapstore::{
    EntryKind, EventRow, EventStore, MapFileOptions, MapFileReader, MapFileSet, MapFileWriter,
};
use ei_model::{BitMask, DatasetName};

use crate::decode::decode_masks;
use crate::error::{Result, TriggerError};
use crate::menu::MenuTables;

/// Suffix of the per-chain fire-count table.
pub const STATS_SUFFIX: &str = "trigstats";
/// Suffix of the pairwise overlap table.
pub const OVERLAP_SUFFIX: &str = "trigoverlap";

/// What one dataset decode pass did.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DecodeReport {
    pub dataset: String,
    pub n_events: u64,
    /// Events that fired at least one chain.
    pub n_events_fired: u64,
    /// Chain names written across all events.
    pub n_chain_hits: u64,
    /// How many of those names were placeholders for unmapped counters.
    pub n_placeholders: u64,
    /// Unique warning texts, sorted.
    pub warnings: Vec<String>,
}

/// Per-chain fire counts for one dataset: how many events fired each chain.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriggerStatistics {
    pub dataset: String,
    pub n_events: u64,
    pub counts: BTreeMap<String, u64>,
}

impl TriggerStatistics {
    pub fn count(&self, chain: &str) -> u64 {
        self.counts.get(chain).copied().unwrap_or(0)
    }
}

/// Pairwise fire counts: for chains a ≤ b, how many events fired both.
/// The diagonal holds plain fire counts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriggerOverlapTable {
    pub dataset: String,
    pub n_events: u64,
    pub counts: BTreeMap<(String, String), u64>,
}

impl TriggerOverlapTable {
    fn ordered(a: &str, b: &str) -> (String, String) {
        if a <= b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        }
    }

    /// Count of events that fired both chains, in either argument order.
    pub fn count(&self, a: &str, b: &str) -> u64 {
        self.counts.get(&Self::ordered(a, b)).copied().unwrap_or(0)
    }

    /// Every chain name appearing in the table.
    pub fn chains(&self) -> Vec<String> {
        let mut names = BTreeSet::new();
        for (a, b) in self.counts.keys() {
            names.insert(a.clone());
            names.insert(b.clone());
        }
        names.into_iter().collect()
    }

    /// The diagonal: per-chain fire counts.
    pub fn diagonal(&self) -> BTreeMap<String, u64> {
        self.counts
            .iter()
            .filter(|((a, b), _)| a == b)
            .map(|((a, _), n)| (a.clone(), *n))
            .collect()
    }

    /// Structural sanity: every off-diagonal count is bounded by both of its
    /// diagonal entries, and no count exceeds the event total.
    pub fn check(&self) -> std::result::Result<(), String> {
        let diag = self.diagonal();
        for ((a, b), n) in &self.counts {
            if *n > self.n_events {
                return Err(format!("({a},{b})={n} exceeds {} events", self.n_events));
            }
            let da = diag.get(a).copied().unwrap_or(0);
            let db = diag.get(b).copied().unwrap_or(0);
            if *n > da.min(db) {
                return Err(format!(
                    "({a},{b})={n} exceeds min of diagonals {da} and {db}"
                ));
            }
        }
        Ok(())
    }
}

fn masks_of(row: &EventRow) -> (BitMask, BitMask, BitMask) {
    (
        BitMask::from_words(row.l1_words.clone()),
        BitMask::from_words(row.l2_words.clone()),
        BitMask::from_words(row.hlt_words.clone()),
    )
}

fn row_has_set_bit(row: &EventRow) -> bool {
    row.l1_words
        .iter()
        .chain(&row.l2_words)
        .chain(&row.hlt_words)
        .any(|w| *w != 0)
}

fn row_has_mask_words(row: &EventRow) -> bool {
    !(row.l1_words.is_empty() && row.l2_words.is_empty() && row.hlt_words.is_empty())
}

fn load_rows(store: &EventStore, name: &str) -> Result<(MapFileSet, Vec<EventRow>)> {
    let reader = store.open_reader(name)?;
    let set = reader.set().clone();
    let raw = reader.par_scan(|_, _| true)?;
    let mut rows = Vec::with_capacity(raw.len());
    for (k, v) in raw {
        rows.push(EventRow::parse(&k, &v)?);
    }
    Ok((set, rows))
}

/// Decode every event of a dataset and write the chain names back into the
/// stored rows, replacing the map file in place. The catalog entry is
/// re-registered over the same paths, archiving the previous entry.
pub fn decode_dataset(
    store: &mut EventStore,
    dataset: &DatasetName,
    tables: &MenuTables,
) -> Result<DecodeReport> {
    let name = dataset.to_string();
    let entry = store.entry(&name).ok_or_else(|| {
        TriggerError::MapStore(ei_mapstore::MapStoreError::UnknownEntry { name: name.clone() })
    })?;
    let (set, mut rows) = load_rows(store, &name)?;
    if !rows.iter().any(row_has_mask_words) {
        return Err(TriggerError::NoTriggerData {
            dataset: name,
            detail: "rows carry no trigger masks".to_string(),
        });
    }

    let mut report = DecodeReport {
        dataset: name.clone(),
        n_events: rows.len() as u64,
        ..DecodeReport::default()
    };
    let mut warnings = BTreeSet::new();
    for row in &mut rows {
        let menu = tables.resolve_menu(
            row.smk,
            row.is_simulated,
            row.key.run,
            &dataset.ami_tag,
        )?;
        let (l1, l2, hlt) = masks_of(row);
        let outcome = decode_masks(&l1, &l2, &hlt, menu);
        if !outcome.chains.is_empty() {
            report.n_events_fired += 1;
        }
        report.n_chain_hits += outcome.chains.len() as u64;
        report.n_placeholders += outcome.warnings.len() as u64;
        warnings.extend(outcome.warnings);
        row.chains = outcome.chains;
    }
    report.warnings = warnings.into_iter().collect();
    for warning in &report.warnings {
        log::warn!("decoding {name}: {warning}");
    }

    let tmp_data = tmp_path(&set.data_path);
    let tmp_index = tmp_path(&set.index_path);
    let mut writer = MapFileWriter::create(
        &tmp_data,
        &tmp_index,
        MapFileOptions {
            mode: set.mode,
            codec: set.codec,
            block_size: set.block_size,
            index_interval: set.index_interval,
        },
    )?;
    for row in &rows {
        writer.append(&row.key.encode(), &row.to_value()?)?;
    }
    let mut new_set = writer.finish()?;
    std::fs::rename(&tmp_data, &set.data_path)?;
    std::fs::rename(&tmp_index, &set.index_path)?;
    new_set.data_path = set.data_path.clone();
    new_set.index_path = set.index_path.clone();
    store.register_table(&name, entry.kind, &new_set, entry.relations)?;
    Ok(report)
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(".tmp");
    path.with_file_name(name)
}

/// The per-event fired-chain sets of a decoded dataset, with the checks that
/// make fire counts trustworthy: rows with set mask bits must carry decoded
/// names, and a dataset with no trigger content at all is an error rather
/// than an all-zero table.
fn chain_sets(store: &EventStore, name: &str) -> Result<(u64, Vec<BTreeSet<String>>)> {
    let (_, rows) = load_rows(store, name)?;
    if rows.is_empty() {
        return Err(TriggerError::NoTriggerData {
            dataset: name.to_string(),
            detail: "dataset has no rows".to_string(),
        });
    }
    if !rows.iter().any(row_has_mask_words) && rows.iter().all(|r| r.chains.is_empty()) {
        return Err(TriggerError::NoTriggerData {
            dataset: name.to_string(),
            detail: "rows carry no trigger masks".to_string(),
        });
    }
    if rows.iter().any(|r| r.chains.is_empty() && row_has_set_bit(r)) {
        return Err(TriggerError::NoTriggerData {
            dataset: name.to_string(),
            detail: "trigger masks present but chain names not decoded".to_string(),
        });
    }
    let n = rows.len() as u64;
    let sets = rows
        .into_iter()
        .map(|r| r.chains.into_iter().collect())
        .collect();
    Ok((n, sets))
}

fn write_derived(
    store: &mut EventStore,
    dataset: &DatasetName,
    suffix: &str,
    rows: &BTreeMap<String, u64>,
) -> Result<()> {
    let (data_path, index_path) = store.derived_paths(dataset, suffix);
    if let Some(dir) = data_path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp_data = tmp_path(&data_path);
    let tmp_index = tmp_path(&index_path);
    let mut writer = MapFileWriter::create(&tmp_data, &tmp_index, MapFileOptions::default())?;
    for (key, count) in rows {
        writer.append(key.as_bytes(), count.to_string().as_bytes())?;
    }
    let mut set = writer.finish()?;
    std::fs::rename(&tmp_data, &data_path)?;
    std::fs::rename(&tmp_index, &index_path)?;
    set.data_path = data_path;
    set.index_path = index_path;
    store.register_table(
        &format!("{dataset}.{suffix}"),
        EntryKind::Derived,
        &set,
        vec![dataset.to_string()],
    )?;
    Ok(())
}

/// Count, for every chain, how many events of the dataset fired it, and
/// persist the table as a derived map file next to the dataset.
pub fn trigger_statistics(
    store: &mut EventStore,
    dataset: &DatasetName,
) -> Result<TriggerStatistics> {
    let name = dataset.to_string();
    let (n_events, sets) = chain_sets(store, &name)?;
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for set in &sets {
        for chain in set {
            *counts.entry(chain.clone()).or_insert(0) += 1;
        }
    }
    write_derived(store, dataset, STATS_SUFFIX, &counts)?;
    Ok(TriggerStatistics {
        dataset: name,
        n_events,
        counts,
    })
}

fn pair_key(a: &str, b: &str) -> String {
    format!("{a}\t{b}")
}

/// Count, for every pair of chains (diagonal included), how many events
/// fired both, and persist the table as a derived map file.
pub fn trigger_overlaps(
    store: &mut EventStore,
    dataset: &DatasetName,
) -> Result<TriggerOverlapTable> {
    let name = dataset.to_string();
    let (n_events, sets) = chain_sets(store, &name)?;
    let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
    for set in &sets {
        let fired: Vec<&String> = set.iter().collect();
        for (i, a) in fired.iter().enumerate() {
            for b in &fired[i..] {
                *counts
                    .entry(((*a).clone(), (*b).clone()))
                    .or_insert(0) += 1;
            }
        }
    }
    let persisted: BTreeMap<String, u64> = counts
        .iter()
        .map(|((a, b), n)| (pair_key(a, b), *n))
        .collect();
    write_derived(store, dataset, OVERLAP_SUFFIX, &persisted)?;
    Ok(TriggerOverlapTable {
        dataset: name,
        n_events,
        counts,
    })
}

fn derived_reader(
    store: &EventStore,
    dataset: &DatasetName,
    suffix: &str,
) -> Result<MapFileReader> {
    Ok(store.open_reader(&format!("{dataset}.{suffix}"))?)
}

fn parse_count(value: &[u8]) -> Result<u64> {
    std::str::from_utf8(value)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| {
            TriggerError::MapStore(ei_mapstore::MapStoreError::MalformedRow(format!(
                "bad stored count {:?}",
                String::from_utf8_lossy(value)
            )))
        })
}

/// Read a previously persisted fire-count table back.
pub fn read_statistics(store: &EventStore, dataset: &DatasetName) -> Result<TriggerStatistics> {
    let name = dataset.to_string();
    let reader = derived_reader(store, dataset, STATS_SUFFIX)?;
    let n_events = store.entry(&name).map_or(0, |e| e.n_rows);
    let mut counts = BTreeMap::new();
    let mut bad = None;
    reader.scan(|k, v| {
        let chain = String::from_utf8_lossy(k).into_owned();
        match parse_count(v) {
            Ok(n) => {
                counts.insert(chain, n);
                Ok(true)
            }
            Err(e) => {
                bad = Some(e);
                Ok(false)
            }
        }
    })?;
    if let Some(e) = bad {
        return Err(e);
    }
    Ok(TriggerStatistics {
        dataset: name,
        n_events,
        counts,
    })
}

/// Read a previously persisted overlap table back.
pub fn read_overlaps(store: &EventStore, dataset: &DatasetName) -> Result<TriggerOverlapTable> {
    let name = dataset.to_string();
    let reader = derived_reader(store, dataset, OVERLAP_SUFFIX)?;
    let n_events = store.entry(&name).map_or(0, |e| e.n_rows);
    let mut counts = BTreeMap::new();
    let mut bad = None;
    reader.scan(|k, v| {
        let text = String::from_utf8_lossy(k);
        let Some((a, b)) = text.split_once('\t') else {
            bad = Some(TriggerError::MapStore(ei_mapstore::MapStoreError::MalformedRow(
                format!("bad overlap key {text:?}"),
            )));
            return Ok(false);
        };
        match parse_count(v) {
            Ok(n) => {
                counts.insert((a.to_string(), b.to_string()), n);
                Ok(true)
            }
            Err(e) => {
                bad = Some(e);
                Ok(false)
            }
        }
    })?;
    if let Some(e) = bad {
        return Err(e);
    }
    Ok(TriggerOverlapTable {
        dataset: name,
        n_events,
        counts,
    })
}
