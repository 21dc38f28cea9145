//! The event store: per-dataset map files under container directories plus
//! four bookkeeping tables — catalog, event lookup, journal, notifications.
//!
//! On-disk layout under the store root:
//!
//! ```text
//! <root>/<container>/<dataset>.data      sorted event rows
//! <root>/<container>/<dataset>.index     sparse key index
//! <root>/_catalog/                       table: entry name -> catalog record
//! <root>/_lookup/                        table: event key ++ dataset id -> location row
//! <root>/_journal/                       table: timestamped operation log
//! <root>/_notifications/                 table: duplicate alerts for operators
//! ```
//!
//! One writer mutates the store at a time; queries against VALID entries can
//! run from any number of readers. Entries still IMPORTING are invisible to
//! queries.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ei_model::{DatasetName, EventKey};
use ei_transport::{Clock, SystemClock};
use serde::{Deserialize, Serialize};

use crate::error::{MapStoreError, Result};
use crate::kvstore::KvTable;
use crate::mapfile::{MapFileOptions, MapFileReader, MapFileSet, MapFileWriter};
use crate::row::{lookup_key, lookup_value, parse_lookup_row, EventRow, LookupRow};
use crate::seqfile::SeqReader;

pub const COMPLETION_LIST_NAME: &str = "_validated.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntryKind {
    Events,
    Derived,
    Result,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntryStatus {
    Importing,
    Valid,
    Obsolete,
    Deleted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    pub kind: EntryKind,
    pub status: EntryStatus,
    pub data_path: String,
    pub index_path: String,
    pub n_rows: u64,
    pub created_ms: u64,
    /// `(ms, action)` pairs, appended on every status transition.
    pub history: Vec<(u64, String)>,
    /// Names of related entries (e.g. the dataset a derived table came from).
    pub relations: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JournalEntry {
    pub ms: u64,
    pub operation: String,
    pub target: String,
    pub parameters: String,
    pub outcome: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DuplicateNotice {
    pub ms: u64,
    pub dataset: String,
    pub n_duplicates: u64,
    /// First few duplicated keys, enough for an operator to start digging.
    pub sample: Vec<EventKey>,
}

#[derive(Debug, Clone)]
pub struct ImportOptions {
    /// Obsolete an existing live entry of the same name instead of refusing.
    pub supersede: bool,
    /// Require the dataset to appear in `_validated.txt` next to the input.
    pub require_completion_list: bool,
    pub file_options: MapFileOptions,
}

impl Default for ImportOptions {
    fn default() -> Self {
        ImportOptions {
            supersede: false,
            require_completion_list: true,
            file_options: MapFileOptions::default(),
        }
    }
}

#[derive(Debug)]
pub struct ImportReport {
    /// Unique rows written to the map file.
    pub n_rows: u64,
    /// Extra copies diverted by the duplicate scan.
    pub n_duplicates: u64,
    pub duplicate_keys: Vec<EventKey>,
    pub entry: CatalogEntry,
}

#[derive(Debug, Clone, Default)]
pub struct LookupFilters {
    pub stream: Option<String>,
    pub data_format: Option<String>,
    pub ami_tag: Option<String>,
}

impl LookupFilters {
    fn accepts(&self, dataset: &DatasetName) -> bool {
        self.stream.as_deref().is_none_or(|s| s == dataset.stream)
            && self
                .data_format
                .as_deref()
                .is_none_or(|f| f == dataset.data_format)
            && self.ami_tag.as_deref().is_none_or(|t| t == dataset.ami_tag)
    }
}

/// Resolution result for one requested event: all matching dataset rows, or
/// none at all — "not found" is an answer, not an error.
#[derive(Debug, Clone)]
pub struct EventMatches {
    pub key: EventKey,
    pub matches: Vec<LookupRow>,
}

pub struct EventStore {
    root: PathBuf,
    catalog: KvTable,
    lookup: KvTable,
    journal: KvTable,
    notifications: KvTable,
    clock: Arc<dyn Clock>,
    journal_seq: u32,
}

impl EventStore {
    pub fn open(root: &Path) -> Result<Self> {
        Self::open_with_clock(root, Arc::new(SystemClock))
    }

    pub fn open_with_clock(root: &Path, clock: Arc<dyn Clock>) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(EventStore {
            root: root.to_path_buf(),
            catalog: KvTable::open(&root.join("_catalog"))?,
            lookup: KvTable::open(&root.join("_lookup"))?,
            journal: KvTable::open(&root.join("_journal"))?,
            notifications: KvTable::open(&root.join("_notifications"))?,
            clock,
            journal_seq: 0,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dataset_paths(&self, dataset: &DatasetName) -> (PathBuf, PathBuf) {
        let dir = self.root.join(dataset.container());
        (
            dir.join(format!("{dataset}.data")),
            dir.join(format!("{dataset}.index")),
        )
    }

    /// Paths for a derived table belonging to `dataset` (e.g. suffix
    /// "trigstats").
    pub fn derived_paths(&self, dataset: &DatasetName, suffix: &str) -> (PathBuf, PathBuf) {
        let dir = self.root.join(dataset.container());
        (
            dir.join(format!("{dataset}.{suffix}.data")),
            dir.join(format!("{dataset}.{suffix}.index")),
        )
    }

    fn now(&self) -> u64 {
        self.clock.now_ms()
    }

    fn journal_append(&mut self, operation: &str, target: &str, parameters: &str, outcome: &str) {
        let ms = self.now();
        let mut key = [0u8; 12];
        key[..8].copy_from_slice(&ms.to_be_bytes());
        key[8..].copy_from_slice(&self.journal_seq.to_be_bytes());
        self.journal_seq += 1;
        let entry = JournalEntry {
            ms,
            operation: operation.to_string(),
            target: target.to_string(),
            parameters: parameters.to_string(),
            outcome: outcome.to_string(),
        };
        let value = serde_json::to_vec(&entry).expect("journal entries serialize");
        // Bookkeeping must never mask the result of the operation itself.
        let _ = self.journal.put(&key, &value);
        let _ = self.journal.flush();
    }

    pub fn journal_entries(&self) -> Vec<JournalEntry> {
        self.journal
            .iter()
            .filter_map(|(_, v)| serde_json::from_slice(v).ok())
            .collect()
    }

    pub fn notifications(&self) -> Vec<DuplicateNotice> {
        self.notifications
            .iter()
            .filter_map(|(_, v)| serde_json::from_slice(v).ok())
            .collect()
    }

    pub fn entry(&self, name: &str) -> Option<CatalogEntry> {
        self.catalog
            .get(name.as_bytes())
            .and_then(|v| serde_json::from_slice(v).ok())
    }

    /// Every catalog entry, current and archived, in name order.
    pub fn catalog_entries(&self) -> Vec<CatalogEntry> {
        self.catalog
            .iter()
            .filter_map(|(_, v)| serde_json::from_slice(v).ok())
            .collect()
    }

    fn put_entry(&mut self, key: &[u8], entry: &CatalogEntry) -> Result<()> {
        let value = serde_json::to_vec(entry).expect("catalog entries serialize");
        self.catalog.put(key, &value)?;
        self.catalog.flush()?;
        Ok(())
    }

    fn purge_lookup(&mut self, dataset_id: u32) -> Result<u64> {
        let id_be = dataset_id.to_be_bytes();
        let doomed: Vec<Vec<u8>> = self
            .lookup
            .iter()
            .filter(|(k, _)| k.len() == 16 && k[12..] == id_be)
            .map(|(k, _)| k.to_vec())
            .collect();
        let n = doomed.len() as u64;
        for key in doomed {
            self.lookup.delete(&key)?;
        }
        self.lookup.flush()?;
        Ok(n)
    }

    fn check_completion_list(&self, seq_path: &Path, dataset: &DatasetName) -> Result<()> {
        let list_path = seq_path
            .parent()
            .map(|p| p.join(COMPLETION_LIST_NAME))
            .unwrap_or_else(|| PathBuf::from(COMPLETION_LIST_NAME));
        // A line may be the bare dataset name or a path to the produced
        // sequence file (what the conversion stage appends).
        let name = dataset.to_string();
        let file_name = format!("{name}.seq");
        let listed = std::fs::read_to_string(&list_path)
            .map(|text| {
                text.lines().any(|l| {
                    let l = l.trim();
                    l == name
                        || Path::new(l)
                            .file_name()
                            .is_some_and(|f| f.to_string_lossy() == file_name)
                })
            })
            .unwrap_or(false);
        if listed {
            Ok(())
        } else {
            Err(MapStoreError::NotValidated {
                dataset: dataset.to_string(),
            })
        }
    }

    /// Converts a finished sequential file into this dataset's map file,
    /// diverting duplicate keys, updating the lookup table and catalog, and
    /// journalling the operation.
    pub fn import_dataset(
        &mut self,
        seq_path: &Path,
        dataset: &DatasetName,
        opts: &ImportOptions,
    ) -> Result<ImportReport> {
        let name = dataset.to_string();
        let outcome = self.import_inner(seq_path, dataset, opts);
        let params = format!(
            "mode={:?} codec={:?} source={}",
            opts.file_options.mode,
            opts.file_options.codec,
            seq_path.display()
        );
        match &outcome {
            Ok(report) => {
                let summary = format!(
                    "ok rows={} duplicates={}",
                    report.n_rows, report.n_duplicates
                );
                self.journal_append("import", &name, &params, &summary);
            }
            Err(e) => {
                self.journal_append("import", &name, &params, &format!("error: {e}"));
            }
        }
        outcome
    }

    fn import_inner(
        &mut self,
        seq_path: &Path,
        dataset: &DatasetName,
        opts: &ImportOptions,
    ) -> Result<ImportReport> {
        let name = dataset.to_string();
        if opts.require_completion_list {
            self.check_completion_list(seq_path, dataset)?;
        }

        if let Some(existing) = self.entry(&name) {
            match existing.status {
                EntryStatus::Valid | EntryStatus::Importing => {
                    if !opts.supersede {
                        return Err(MapStoreError::CatalogConflict { name });
                    }
                    let mut old = existing;
                    old.status = EntryStatus::Obsolete;
                    old.history.push((self.now(), "superseded".into()));
                    let archive_key = format!("{}\t{}", name, old.created_ms);
                    self.put_entry(archive_key.as_bytes(), &old)?;
                }
                EntryStatus::Obsolete | EntryStatus::Deleted => {
                    // A dead current entry just gets replaced; keep a copy
                    // under its archive key so history is not lost.
                    let archive_key = format!("{}\t{}", name, existing.created_ms);
                    self.put_entry(archive_key.as_bytes(), &existing)?;
                }
            }
        }

        let (data_path, index_path) = self.dataset_paths(dataset);
        let created_ms = self.now();
        let mut entry = CatalogEntry {
            name: name.clone(),
            kind: EntryKind::Events,
            status: EntryStatus::Importing,
            data_path: data_path.display().to_string(),
            index_path: index_path.display().to_string(),
            n_rows: 0,
            created_ms,
            history: vec![(created_ms, "import started".into())],
            relations: Vec::new(),
        };
        self.put_entry(name.as_bytes(), &entry)?;

        let dataset_id = dataset.stable_id();
        let result = self.write_and_register(seq_path, dataset, dataset_id, opts, &mut entry);
        match result {
            Ok(report) => Ok(report),
            Err(e) => {
                // Leave no half-imported lookup rows behind, and record the
                // failure on the entry itself.
                let _ = self.purge_lookup(dataset_id);
                entry.history.push((self.now(), format!("import failed: {e}")));
                let _ = self.put_entry(name.as_bytes(), &entry);
                Err(e)
            }
        }
    }

    fn write_and_register(
        &mut self,
        seq_path: &Path,
        dataset: &DatasetName,
        dataset_id: u32,
        opts: &ImportOptions,
        entry: &mut CatalogEntry,
    ) -> Result<ImportReport> {
        let name = dataset.to_string();
        let (data_path, index_path) = self.dataset_paths(dataset);
        let mut writer = MapFileWriter::create(&data_path, &index_path, opts.file_options)?;

        let mut n_duplicates = 0u64;
        let mut duplicate_keys: Vec<EventKey> = Vec::new();
        let mut prev_key: Option<Vec<u8>> = None;
        for row in SeqReader::open(seq_path)? {
            let (key, value) = row?;
            if prev_key.as_deref() == Some(key.as_slice()) {
                // Duplicate scan: keep the first copy, divert the rest.
                n_duplicates += 1;
                if let Ok(k) = EventKey::decode(&key) {
                    duplicate_keys.push(k);
                }
                continue;
            }
            // Parsing validates the row and yields the location columns the
            // lookup table needs.
            let parsed = EventRow::parse(&key, &value)?;
            writer.append(&key, &value)?;
            self.lookup.put(
                &lookup_key(parsed.key, dataset_id),
                &lookup_value(dataset, &parsed.locations)?,
            )?;
            prev_key = Some(key);
        }
        let set = writer.finish()?;
        self.lookup.flush()?;

        // Re-open to verify both checksums before declaring the entry live.
        let reader = MapFileReader::open(&data_path, &index_path)?;
        if reader.n_rows() != set.n_rows {
            return Err(MapStoreError::ChecksumMismatch {
                path: data_path.display().to_string(),
            });
        }

        entry.status = EntryStatus::Valid;
        entry.n_rows = set.n_rows;
        entry
            .history
            .push((self.now(), "verified and made live".into()));
        self.put_entry(name.as_bytes(), entry)?;
        self.lookup.compact()?;

        if n_duplicates > 0 {
            let ms = self.now();
            let mut key = [0u8; 12];
            key[..8].copy_from_slice(&ms.to_be_bytes());
            key[8..].copy_from_slice(&self.journal_seq.to_be_bytes());
            let notice = DuplicateNotice {
                ms,
                dataset: name.clone(),
                n_duplicates,
                sample: duplicate_keys.iter().take(32).copied().collect(),
            };
            self.notifications
                .put(&key, &serde_json::to_vec(&notice).expect("notices serialize"))?;
            self.notifications.flush()?;
        }

        Ok(ImportReport {
            n_rows: set.n_rows,
            n_duplicates,
            duplicate_keys,
            entry: entry.clone(),
        })
    }

    /// Records a derived or result table (written by an analysis pass) in the
    /// catalog so it is discoverable and delete-able like any other entry.
    pub fn register_table(
        &mut self,
        name: &str,
        kind: EntryKind,
        set: &MapFileSet,
        relations: Vec<String>,
    ) -> Result<CatalogEntry> {
        let created_ms = self.now();
        if let Some(existing) = self.entry(name) {
            let archive_key = format!("{}\t{}", name, existing.created_ms);
            self.put_entry(archive_key.as_bytes(), &existing)?;
        }
        let entry = CatalogEntry {
            name: name.to_string(),
            kind,
            status: EntryStatus::Valid,
            data_path: set.data_path.display().to_string(),
            index_path: set.index_path.display().to_string(),
            n_rows: set.n_rows,
            created_ms,
            history: vec![(created_ms, "registered".into())],
            relations,
        };
        self.put_entry(name.as_bytes(), &entry)?;
        self.journal_append(
            "register",
            name,
            &format!("kind={kind:?}"),
            &format!("ok rows={}", set.n_rows),
        );
        Ok(entry)
    }

    /// Opens the map file behind a live entry.
    pub fn open_reader(&self, name: &str) -> Result<MapFileReader> {
        let entry = self
            .entry(name)
            .filter(|e| e.status == EntryStatus::Valid)
            .ok_or_else(|| MapStoreError::UnknownEntry {
                name: name.to_string(),
            })?;
        MapFileReader::open(Path::new(&entry.data_path), Path::new(&entry.index_path))
    }

    /// Resolves events to every dataset holding them, newest rows and all,
    /// after the optional stream / format / tag filters.
    pub fn event_lookup(
        &mut self,
        events: &[EventKey],
        filters: &LookupFilters,
    ) -> Result<Vec<EventMatches>> {
        let mut out = Vec::with_capacity(events.len());
        let mut resolved = 0usize;
        for key in events {
            let mut lo = [0u8; 16];
            lo[..12].copy_from_slice(&key.encode());
            let mut hi = [0xFFu8; 17];
            hi[..12].copy_from_slice(&key.encode());
            let mut matches = Vec::new();
            for (k, v) in self.lookup.range(&lo, &hi) {
                let row = parse_lookup_row(k, v)?;
                if filters.accepts(&row.dataset) {
                    matches.push(row);
                }
            }
            if !matches.is_empty() {
                resolved += 1;
            }
            out.push(EventMatches { key: *key, matches });
        }
        self.journal_append(
            "search",
            &format!("{} events", events.len()),
            "event lookup",
            &format!("resolved {resolved} of {}", events.len()),
        );
        Ok(out)
    }

    /// Point reads from one dataset's map file, parsed into typed rows.
    pub fn get_rows(
        &mut self,
        name: &str,
        keys: &[EventKey],
    ) -> Result<Vec<(EventKey, Option<EventRow>)>> {
        let reader = self.open_reader(name)?;
        let raw_keys: Vec<Vec<u8>> = keys.iter().map(|k| k.encode().to_vec()).collect();
        let mut out = Vec::with_capacity(keys.len());
        let mut found = 0usize;
        for (key, result) in keys.iter().zip(reader.get_many(&raw_keys)?) {
            let row = match result.1 {
                Some(value) => {
                    found += 1;
                    Some(EventRow::parse(&result.0, &value)?)
                }
                None => None,
            };
            out.push((*key, row));
        }
        self.journal_append(
            "search",
            name,
            &format!("{} keys", keys.len()),
            &format!("found {found} of {}", keys.len()),
        );
        Ok(out)
    }

    /// Scans one dataset, returning the rows accepted by `pred` in key order.
    pub fn scan_dataset(
        &mut self,
        name: &str,
        pred: &(dyn Fn(&EventRow) -> bool + Sync),
    ) -> Result<Vec<EventRow>> {
        let reader = self.open_reader(name)?;
        let hits = reader.par_scan(|k, v| match EventRow::parse(k, v) {
            Ok(row) => pred(&row),
            // Keep unparseable rows so the typed pass below surfaces the
            // error instead of silently dropping data.
            Err(_) => true,
        })?;
        let mut rows = Vec::with_capacity(hits.len());
        for (k, v) in hits {
            rows.push(EventRow::parse(&k, &v)?);
        }
        self.journal_append(
            "search",
            name,
            "predicate scan",
            &format!("matched {} rows", rows.len()),
        );
        Ok(rows)
    }

    /// Removes a dataset: files deleted, lookup rows purged, entry marked
    /// DELETED, operation journalled.
    pub fn delete_dataset(&mut self, name: &str) -> Result<()> {
        let outcome = self.delete_inner(name);
        match &outcome {
            Ok(purged) => {
                self.journal_append("delete", name, "", &format!("ok purged={purged}"))
            }
            Err(e) => self.journal_append("delete", name, "", &format!("error: {e}")),
        }
        outcome.map(|_| ())
    }

    fn delete_inner(&mut self, name: &str) -> Result<u64> {
        let mut entry = self.entry(name).ok_or_else(|| MapStoreError::UnknownEntry {
            name: name.to_string(),
        })?;
        if entry.status == EntryStatus::Deleted {
            return Err(MapStoreError::UnknownEntry {
                name: name.to_string(),
            });
        }
        for path in [&entry.data_path, &entry.index_path] {
            match std::fs::remove_file(path) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(e.into()),
            }
        }
        let purged = if entry.kind == EntryKind::Events {
            let dataset_id = DatasetName::parse(name)?.stable_id();
            self.purge_lookup(dataset_id)?
        } else {
            0
        };
        entry.status = EntryStatus::Deleted;
        entry.history.push((self.now(), "deleted".into()));
        self.put_entry(name.as_bytes(), &entry)?;
        Ok(purged)
    }

    /// Average stored bytes per event for a live entry (data file only, the
    /// index is a small constant factor on top).
    pub fn bytes_per_event(&self, name: &str) -> Result<f64> {
        let entry = self
            .entry(name)
            .filter(|e| e.status == EntryStatus::Valid)
            .ok_or_else(|| MapStoreError::UnknownEntry {
                name: name.to_string(),
            })?;
        let len = std::fs::metadata(&entry.data_path)?.len();
        if entry.n_rows == 0 {
            return Ok(0.0);
        }
        Ok(len as f64 / entry.n_rows as f64)
    }

    /// Dataset names (current entries only) with VALID status.
    pub fn live_datasets(&self) -> Vec<String> {
        let mut names = BTreeSet::new();
        for entry in self.catalog_entries() {
            if entry.status == EntryStatus::Valid && entry.kind == EntryKind::Events {
                names.insert(entry.name);
            }
        }
        names.into_iter().collect()
    }

    /// Flushes and compacts every bookkeeping table.
    pub fn compact(&mut self) -> Result<()> {
        self.catalog.compact()?;
        self.lookup.compact()?;
        self.journal.compact()?;
        self.notifications.compact()?;
        Ok(())
    }
}
