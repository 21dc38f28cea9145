//! The relational mirror itself: import from validated sequential files,
//! per-dataset partition management, and the materialized aggregate tables.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use ei_mapstore::{EntryStatus, EventRow, EventStore, SeqReader, COMPLETION_LIST_NAME};
use ei_model::{DatasetName, EventKey, Guid};

use crate::error::{AnalyticsError, Result};
use crate::tables::{
    guid_type_labels, read_json_rows, read_partition, write_json_rows, write_partition,
    DatasetRow, DuplicateEntry, EventEntry, LbnCount, OverlapRow, DUPLICATE_ROW_LEN,
    EVENT_ROW_LEN,
};

const DATASETS_FILE: &str = "datasets.rows";

/// Which datasets get mirrored at all: a run allowlist (the stand-in for an
/// external run-catalog of physics interest) plus excluded stream prefixes.
#[derive(Clone, Debug)]
pub struct ImportPolicy {
    /// `None` admits every run.
    pub run_allowlist: Option<BTreeSet<u32>>,
    pub excluded_stream_prefixes: Vec<String>,
}

impl Default for ImportPolicy {
    fn default() -> Self {
        ImportPolicy {
            run_allowlist: None,
            excluded_stream_prefixes: vec!["calibration_".to_string()],
        }
    }
}

impl ImportPolicy {
    /// Loads an allowlist file: one run number per line, `#` comments.
    pub fn from_allowlist_file(path: &Path) -> Result<Self> {
        let mut runs = BTreeSet::new();
        for (i, line) in std::fs::read_to_string(path)?.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let run = line.parse().map_err(|_| AnalyticsError::MalformedTable {
                path: path.display().to_string(),
                detail: format!("line {}: bad run number {line:?}", i + 1),
            })?;
            runs.insert(run);
        }
        Ok(ImportPolicy {
            run_allowlist: Some(runs),
            ..ImportPolicy::default()
        })
    }

    /// Why this dataset would be skipped, if it would be.
    pub fn refusal(&self, dataset: &DatasetName) -> Option<String> {
        if let Some(runs) = &self.run_allowlist {
            if !runs.contains(&dataset.run_id) {
                return Some(format!("run {} not in the allowlist", dataset.run_id));
            }
        }
        for prefix in &self.excluded_stream_prefixes {
            if dataset.stream.starts_with(prefix.as_str()) {
                return Some(format!("stream {} is excluded", dataset.stream));
            }
        }
        None
    }
}

/// Everything the import needs to know about its source beyond the rows
/// themselves.
#[derive(Clone, Debug)]
pub struct ImportSource {
    /// The validated, sorted sequential file produced by conversion.
    pub seq_path: PathBuf,
    /// Record count the upstream bookkeeping claims (duplicate copies
    /// included).
    pub expected_upstream: u64,
    /// Dataset creation timestamp, the ranking key.
    pub created_ms: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImportSummary {
    pub dataset_id: u32,
    pub dataset: String,
    pub n_events: u64,
    pub n_duplicates: u64,
    pub n_unique_duplicates: u64,
    pub n_lbns: u64,
    pub n_overlap_pairs: u64,
    /// Compressed events-partition payload bytes per stored event.
    pub bytes_per_event: f64,
}

/// A skipped dataset is an outcome, not an error.
#[derive(Clone, Debug, PartialEq)]
pub enum ImportOutcome {
    Imported(ImportSummary),
    Filtered { reason: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DroppedPartition {
    pub dataset_id: u32,
    pub dataset: String,
    pub n_events: u64,
}

/// The mirror's on-disk root: one directory per table.
pub struct AnalyticsStore {
    root: PathBuf,
}

impl AnalyticsStore {
    pub fn open(root: &Path) -> Result<Self> {
        for dir in ["datasets", "events", "duplicates", "lbncounts", "overlaps", "staging"] {
            std::fs::create_dir_all(root.join(dir))?;
        }
        Ok(AnalyticsStore {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn datasets_path(&self) -> PathBuf {
        self.root.join("datasets").join(DATASETS_FILE)
    }

    fn events_path(&self, dataset_id: u32) -> PathBuf {
        self.root.join("events").join(format!("{dataset_id}.part"))
    }

    fn duplicates_path(&self, dataset_id: u32) -> PathBuf {
        self.root.join("duplicates").join(format!("{dataset_id}.part"))
    }

    fn lbncounts_path(&self, dataset_id: u32) -> PathBuf {
        self.root.join("lbncounts").join(format!("{dataset_id}.rows"))
    }

    fn overlaps_path(&self, run: u32) -> PathBuf {
        self.root.join("overlaps").join(format!("{run}.rows"))
    }

    /// Every catalog row, ordered by dataset id.
    pub fn datasets(&self) -> Result<Vec<DatasetRow>> {
        read_json_rows(&self.datasets_path())
    }

    pub fn dataset_row(&self, dataset_id: u32) -> Result<Option<DatasetRow>> {
        Ok(self
            .datasets()?
            .into_iter()
            .find(|r| r.dataset_id == dataset_id))
    }

    fn require_row(&self, dataset_id: u32) -> Result<DatasetRow> {
        self.dataset_row(dataset_id)?
            .ok_or(AnalyticsError::UnknownPartition { dataset_id })
    }

    /// All stored events of one dataset, in key order.
    pub fn events(&self, dataset_id: u32) -> Result<Vec<EventEntry>> {
        self.require_row(dataset_id)?;
        let path = self.events_path(dataset_id);
        let data = read_partition(&path)?;
        check_row_len(&path, data.row_len, EVENT_ROW_LEN)?;
        data.rows.iter().map(|r| EventEntry::decode(r)).collect()
    }

    /// The diverted extra copies of one dataset, in (key, ordinal) order.
    pub fn duplicates(&self, dataset_id: u32) -> Result<Vec<DuplicateEntry>> {
        self.require_row(dataset_id)?;
        let path = self.duplicates_path(dataset_id);
        let data = read_partition(&path)?;
        check_row_len(&path, data.row_len, DUPLICATE_ROW_LEN)?;
        data.rows.iter().map(|r| DuplicateEntry::decode(r)).collect()
    }

    /// The materialized per-LBN aggregates of one dataset.
    pub fn lbn_counts(&self, dataset_id: u32) -> Result<Vec<LbnCount>> {
        self.require_row(dataset_id)?;
        read_json_rows(&self.lbncounts_path(dataset_id))
    }

    /// The materialized pairwise common-event counts of one run.
    pub fn overlaps_for_run(&self, run: u32) -> Result<Vec<OverlapRow>> {
        read_json_rows(&self.overlaps_path(run))
    }

    /// Compressed events-partition payload bytes per stored event.
    pub fn bytes_per_event(&self, dataset_id: u32) -> Result<f64> {
        self.require_row(dataset_id)?;
        let data = read_partition(&self.events_path(dataset_id))?;
        if data.rows.is_empty() {
            return Ok(0.0);
        }
        Ok(data.payload_bytes as f64 / data.rows.len() as f64)
    }

    /// Mirrors one validated dataset: reads its sorted sequential file,
    /// splits duplicates out, verifies the staged rows, then commits the
    /// partitions, the aggregates, and the catalog row.
    pub fn import_dataset(
        &mut self,
        store: &EventStore,
        dataset: &DatasetName,
        source: &ImportSource,
        policy: &ImportPolicy,
    ) -> Result<ImportOutcome> {
        let name = dataset.to_string();
        if let Some(reason) = policy.refusal(dataset) {
            log::info!("skipping {name}: {reason}");
            return Ok(ImportOutcome::Filtered { reason });
        }
        let live = store
            .entry(&name)
            .is_some_and(|e| e.status == EntryStatus::Valid);
        if !live {
            return Err(AnalyticsError::SourceNotLive { dataset: name });
        }
        let dataset_id = dataset.stable_id();
        let mut rows = self.datasets()?;
        if rows.iter().any(|r| r.dataset_id == dataset_id) {
            return Err(AnalyticsError::AlreadyImported { dataset: name });
        }
        check_completion_list(&source.seq_path, &name)?;

        let staged = stage_rows(&source.seq_path, dataset)?;

        // Stage, then move each partition into place; the catalog row write
        // below is the commit point readers go through.
        let staging = self.root.join("staging").join(dataset_id.to_string());
        std::fs::create_dir_all(&staging)?;
        let result = self.commit_staged(&staging, dataset, dataset_id, source, &staged, &mut rows);
        let _ = std::fs::remove_dir_all(&staging);
        result.map(ImportOutcome::Imported)
    }

    fn commit_staged(
        &mut self,
        staging: &Path,
        dataset: &DatasetName,
        dataset_id: u32,
        source: &ImportSource,
        staged: &StagedRows,
        rows: &mut Vec<DatasetRow>,
    ) -> Result<ImportSummary> {
        let event_bytes: Vec<Vec<u8>> = staged
            .events
            .iter()
            .map(|e| {
                let mut buf = Vec::with_capacity(EVENT_ROW_LEN);
                e.encode(&mut buf);
                buf
            })
            .collect();
        let dup_bytes: Vec<Vec<u8>> = staged
            .duplicates
            .iter()
            .map(|d| {
                let mut buf = Vec::with_capacity(DUPLICATE_ROW_LEN);
                d.encode(&mut buf);
                buf
            })
            .collect();
        let lbn_rows = lbn_counts_of(dataset_id, &staged.events);

        let staged_events = staging.join("events.part");
        let staged_dups = staging.join("duplicates.part");
        let staged_lbns = staging.join("lbncounts.rows");
        write_partition(&staged_events, dataset_id, EVENT_ROW_LEN, &event_bytes)?;
        write_partition(&staged_dups, dataset_id, DUPLICATE_ROW_LEN, &dup_bytes)?;
        write_json_rows(&staged_lbns, &lbn_rows)?;

        std::fs::rename(&staged_events, self.events_path(dataset_id))?;
        std::fs::rename(&staged_dups, self.duplicates_path(dataset_id))?;
        std::fs::rename(&staged_lbns, self.lbncounts_path(dataset_id))?;

        let n_overlap_pairs = self.extend_overlaps(dataset.run_id, dataset_id, &staged.events, rows)?;

        let mut unique_guids: HashSet<Guid> = HashSet::new();
        for e in &staged.events {
            unique_guids.extend(e.guids().map(|(_, g)| g));
        }
        let n_events = staged.events.len() as u64;
        let n_duplicates = staged.duplicates.len() as u64;
        let n_unique_duplicates = staged
            .duplicates
            .iter()
            .map(|d| d.event.key)
            .collect::<BTreeSet<_>>()
            .len() as u64;
        let mut flags = Vec::new();
        if n_duplicates > 0 {
            flags.push("has_duplicates".to_string());
        }
        if n_events + n_duplicates < source.expected_upstream {
            flags.push("short_of_expected".to_string());
        }
        rows.push(DatasetRow {
            dataset_id,
            project: dataset.project.clone(),
            run: dataset.run_id,
            stream: dataset.stream.clone(),
            prod_step: dataset.prod_step.clone(),
            data_format: dataset.data_format.clone(),
            ami_tag: dataset.ami_tag.clone(),
            guid_types: guid_type_labels(&dataset.data_format),
            flags,
            created_ms: source.created_ms,
            n_events,
            expected_upstream: source.expected_upstream,
            n_unique_guids: unique_guids.len() as u64,
            n_duplicates,
            n_unique_duplicates,
            rank: 0,
        });
        self.write_datasets(rows)?;

        Ok(ImportSummary {
            dataset_id,
            dataset: dataset.to_string(),
            n_events,
            n_duplicates,
            n_unique_duplicates,
            n_lbns: lbn_rows.len() as u64,
            n_overlap_pairs,
            bytes_per_event: self.bytes_per_event(dataset_id)?,
        })
    }

    /// Removes one dataset from the mirror: its partitions (a file delete
    /// each, independent of event count), its overlap pairs, and its
    /// catalog row.
    pub fn drop_partition(&mut self, dataset_id: u32) -> Result<DroppedPartition> {
        let mut rows = self.datasets()?;
        let Some(pos) = rows.iter().position(|r| r.dataset_id == dataset_id) else {
            return Err(AnalyticsError::UnknownPartition { dataset_id });
        };
        let row = rows.remove(pos);
        for path in [
            self.events_path(dataset_id),
            self.duplicates_path(dataset_id),
            self.lbncounts_path(dataset_id),
        ] {
            match std::fs::remove_file(&path) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(e.into()),
            }
        }
        let remaining: Vec<OverlapRow> = self
            .overlaps_for_run(row.run)?
            .into_iter()
            .filter(|o| o.dataset_id_a != dataset_id && o.dataset_id_b != dataset_id)
            .collect();
        self.write_overlaps(row.run, &remaining)?;
        self.write_datasets(&mut rows)?;
        Ok(DroppedPartition {
            dataset_id,
            dataset: row.dataset_name(),
            n_events: row.n_events,
        })
    }

    /// Recomputes the per-LBN aggregates of one dataset straight from its
    /// events partition — what the materialized table must always equal.
    pub fn recompute_lbn_counts(&self, dataset_id: u32) -> Result<Vec<LbnCount>> {
        let events = self.events(dataset_id)?;
        Ok(lbn_counts_of(dataset_id, &events))
    }

    /// Recomputes a run's pairwise common-event counts from the events
    /// partitions — what the materialized table must always equal.
    pub fn recompute_overlaps(&self, run: u32) -> Result<Vec<OverlapRow>> {
        let ids: Vec<u32> = self
            .datasets()?
            .iter()
            .filter(|r| r.run == run)
            .map(|r| r.dataset_id)
            .collect();
        let mut key_sets: BTreeMap<u32, HashSet<EventKey>> = BTreeMap::new();
        for id in ids {
            key_sets.insert(id, self.events(id)?.iter().map(|e| e.key).collect());
        }
        let mut out = Vec::new();
        let ids: Vec<u32> = key_sets.keys().copied().collect();
        for (i, a) in ids.iter().enumerate() {
            for b in &ids[i + 1..] {
                out.push(OverlapRow {
                    run,
                    dataset_id_a: *a,
                    dataset_id_b: *b,
                    common_events: intersection_count(&key_sets[a], &key_sets[b]),
                });
            }
        }
        Ok(out)
    }

    fn extend_overlaps(
        &mut self,
        run: u32,
        new_id: u32,
        new_events: &[EventEntry],
        rows: &[DatasetRow],
    ) -> Result<u64> {
        let mut pairs = self.overlaps_for_run(run)?;
        let new_keys: HashSet<EventKey> = new_events.iter().map(|e| e.key).collect();
        for other in rows.iter().filter(|r| r.run == run) {
            let other_keys: HashSet<EventKey> = self
                .events(other.dataset_id)?
                .iter()
                .map(|e| e.key)
                .collect();
            let (a, b) = if other.dataset_id < new_id {
                (other.dataset_id, new_id)
            } else {
                (new_id, other.dataset_id)
            };
            pairs.push(OverlapRow {
                run,
                dataset_id_a: a,
                dataset_id_b: b,
                common_events: intersection_count(&new_keys, &other_keys),
            });
        }
        pairs.sort_by_key(|o| (o.dataset_id_a, o.dataset_id_b));
        self.write_overlaps(run, &pairs)?;
        Ok(pairs.len() as u64)
    }

    fn write_overlaps(&self, run: u32, pairs: &[OverlapRow]) -> Result<()> {
        let path = self.overlaps_path(run);
        if pairs.is_empty() {
            match std::fs::remove_file(&path) {
                Ok(()) => return Ok(()),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
                Err(e) => return Err(e.into()),
            }
        }
        let tmp = path.with_extension("rows.tmp");
        write_json_rows(&tmp, pairs)?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }

    fn write_datasets(&self, rows: &mut Vec<DatasetRow>) -> Result<()> {
        rerank(rows);
        rows.sort_by_key(|r| r.dataset_id);
        let tmp = self.datasets_path().with_extension("rows.tmp");
        write_json_rows(&tmp, rows)?;
        std::fs::rename(&tmp, self.datasets_path())?;
        Ok(())
    }
}

/// Rank 1 = newest creation date within each (run, stream, data format)
/// group; ties break toward the higher dataset id.
fn rerank(rows: &mut [DatasetRow]) {
    let mut groups: BTreeMap<(u32, String, String), Vec<usize>> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        groups
            .entry((row.run, row.stream.clone(), row.data_format.clone()))
            .or_default()
            .push(i);
    }
    for members in groups.values() {
        let mut order: Vec<usize> = members.clone();
        order.sort_by_key(|&i| (std::cmp::Reverse(rows[i].created_ms), std::cmp::Reverse(rows[i].dataset_id)));
        for (rank0, &i) in order.iter().enumerate() {
            rows[i].rank = rank0 as u32 + 1;
        }
    }
}

fn check_row_len(path: &Path, have: usize, want: usize) -> Result<()> {
    if have == want {
        Ok(())
    } else {
        Err(AnalyticsError::MalformedTable {
            path: path.display().to_string(),
            detail: format!("row length {have}, table defines {want}"),
        })
    }
}

fn intersection_count(a: &HashSet<EventKey>, b: &HashSet<EventKey>) -> u64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    small.iter().filter(|k| large.contains(*k)).count() as u64
}

fn check_completion_list(seq_path: &Path, dataset: &str) -> Result<()> {
    let list_path = seq_path
        .parent()
        .map(|p| p.join(COMPLETION_LIST_NAME))
        .unwrap_or_else(|| PathBuf::from(COMPLETION_LIST_NAME));
    let file_name = format!("{dataset}.seq");
    let listed = std::fs::read_to_string(&list_path)
        .map(|text| {
            text.lines().any(|l| {
                let l = l.trim();
                l == dataset
                    || Path::new(l)
                        .file_name()
                        .is_some_and(|f| f.to_string_lossy() == file_name)
            })
        })
        .unwrap_or(false);
    if listed {
        Ok(())
    } else {
        Err(AnalyticsError::NotValidated {
            dataset: dataset.to_string(),
        })
    }
}

struct StagedRows {
    events: Vec<EventEntry>,
    duplicates: Vec<DuplicateEntry>,
}

fn entry_of(row: &EventRow) -> EventEntry {
    let mut guid_refs = [None, None, None];
    for r in &row.locations {
        let slot = r.ref_type.code() as usize;
        if slot < 3 {
            guid_refs[slot] = Some(r.guid);
        }
    }
    EventEntry {
        key: row.key,
        lbn: row.lbn,
        bcid: row.bcid,
        guid_refs,
    }
}

/// Reads the sorted sequential file, splitting each run of equal keys into
/// one kept event plus ordinal-numbered extra copies, then verifies the
/// staged rows hang together before anything is written.
fn stage_rows(seq_path: &Path, dataset: &DatasetName) -> Result<StagedRows> {
    let name = dataset.to_string();
    let fail = |reason: String| AnalyticsError::VerificationFailure {
        dataset: name.clone(),
        reason,
    };

    let mut events: Vec<EventEntry> = Vec::new();
    let mut duplicates: Vec<DuplicateEntry> = Vec::new();
    let mut ordinal = 0u16;
    for row in SeqReader::open(seq_path)? {
        let (key, value) = row?;
        let parsed = EventRow::parse(&key, &value)?;
        let entry = entry_of(&parsed);
        match events.last() {
            Some(prev) if prev.key == entry.key => {
                ordinal += 1;
                duplicates.push(DuplicateEntry {
                    ordinal,
                    event: entry,
                });
            }
            Some(prev) if prev.key > entry.key => {
                return Err(fail(format!(
                    "rows out of order: {:?} after {:?}",
                    entry.key, prev.key
                )));
            }
            _ => {
                ordinal = 0;
                events.push(entry);
            }
        }
    }

    let is_real = !dataset.is_simulation();
    let labels = guid_type_labels(&dataset.data_format);
    let expect_refs: u8 = (0..labels.len()).fold(0, |bits, i| bits | 1 << i);
    for entry in events.iter().chain(duplicates.iter().map(|d| &d.event)) {
        if is_real && entry.key.run != dataset.run_id {
            return Err(fail(format!(
                "event {:?} does not belong to run {}",
                entry.key, dataset.run_id
            )));
        }
        if is_real && entry.lbn == 0 {
            return Err(fail(format!("event {:?} has LBN 0", entry.key)));
        }
        if entry.present_refs() != expect_refs {
            return Err(fail(format!(
                "event {:?} carries reference pattern {:#05b}, dataset format {} implies {:#05b}",
                entry.key,
                entry.present_refs(),
                dataset.data_format,
                expect_refs
            )));
        }
    }
    Ok(StagedRows { events, duplicates })
}

fn lbn_counts_of(dataset_id: u32, events: &[EventEntry]) -> Vec<LbnCount> {
    let mut by_lbn: BTreeMap<u32, (u64, BTreeSet<Guid>, u64, u64)> = BTreeMap::new();
    for e in events {
        let slot = by_lbn
            .entry(e.lbn)
            .or_insert((0, BTreeSet::new(), u64::MAX, 0));
        slot.0 += 1;
        if let Some(g) = e.guid_refs[0] {
            slot.1.insert(g);
        }
        slot.2 = slot.2.min(e.key.event);
        slot.3 = slot.3.max(e.key.event);
    }
    by_lbn
        .into_iter()
        .map(|(lbn, (n, guids, min_event, max_event))| LbnCount {
            dataset_id,
            lbn,
            n_events: n,
            n_unique_guids: guids.len() as u64,
            min_event,
            max_event,
        })
        .collect()
}
