//! Deterministic dataset generator. A `DatasetSpec` is a pure recipe: every
//! event it describes can be re-derived at any time from the seed, so the
//! generator doubles as the oracle for everything downstream — indexing,
//! import, dedup ledgers, trigger statistics, and overlap counts.
//!
//! `write_files` renders the recipe as producer input files: JSON Lines, the
//! first line a file header
//! `{guid, dataset, proc_version, stream, project, smk, n_events}`,
//! then one event object per line
//! `{run, event, lbn, bcid, timestamp, is_sim, weight, sim_process_id,
//!   l1, l2, hlt, upstream_guids, smk, l1_psk, hlt_psk, conditions}`.
//! The indexing pipeline owns its own independent parser for this layout.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use ei_model::{
    BitMask, DatasetName, EventKey, EventRecord, Guid, GuidRef, RefType, Registry, RegistryEntry,
    RegistryFile, RegistryStatus, TriggerBlock,
};

use crate::menu::MenuSpec;

/// Recipe for one synthetic dataset: file count and sizes, event numbering,
/// duplicate injection, and the trigger menu(s) driving mask generation.
#[derive(Clone, Debug)]
pub struct DatasetSpec {
    pub name: DatasetName,
    pub run: u32,
    pub seed: u64,
    pub n_files: u32,
    /// Unique events per file; injected duplicate copies come on top.
    pub events_per_file: u64,
    pub first_event: u64,
    /// Every k-th unique event of a file is immediately followed by an
    /// identical copy; 0 disables injection.
    pub duplicate_every: u64,
    pub menu: MenuSpec,
    /// Switch to a second menu at this in-file unique-event ordinal.
    pub menu_switch: Option<(u64, MenuSpec)>,
    pub l1_psk: u32,
    pub hlt_psk: u32,
    pub proc_version: String,
    pub conditions: String,
    pub sim_process_id: u32,
}

impl DatasetSpec {
    /// Defaults: one 1000-event file, events numbered from 1, no duplicate
    /// injection, the standard 16-chain menu.
    pub fn new(name: &str, seed: u64) -> DatasetSpec {
        let name = DatasetName::parse(name).expect("well-formed dataset name");
        let run = name.run_id;
        let is_sim = name.is_simulation();
        DatasetSpec {
            name,
            run,
            seed,
            n_files: 1,
            events_per_file: 1000,
            first_event: 1,
            duplicate_every: 0,
            menu: MenuSpec::standard(2154),
            menu_switch: None,
            l1_psk: 260,
            hlt_psk: 325,
            proc_version: "22.0.91".to_string(),
            conditions: if is_sim { String::new() } else { "stable_beams".to_string() },
            sim_process_id: if is_sim { 410_470 } else { 0 },
        }
    }

    pub fn dataset_id(&self) -> u32 {
        self.name.stable_id()
    }

    pub fn is_simulation(&self) -> bool {
        self.name.is_simulation()
    }

    /// Provenance depth implied by the data format: raw and generator-level
    /// files stand alone; reconstructed files carry one upstream reference,
    /// derived files two.
    pub fn upstream_depth(&self) -> usize {
        match self.name.data_format.as_str() {
            "AOD" => 1,
            f if f.starts_with("DAOD") => 2,
            _ => 0,
        }
    }

    pub fn file_guid(&self, file_idx: u32) -> Guid {
        derive_guid(self.seed, 0x01, file_idx)
    }

    pub fn upstream_guids(&self, file_idx: u32) -> Vec<Guid> {
        (0..self.upstream_depth())
            .map(|level| derive_guid(self.seed, 0x02 + level as u64, file_idx))
            .collect()
    }

    fn file_first_event(&self, file_idx: u32) -> u64 {
        self.first_event + file_idx as u64 * self.events_per_file
    }

    /// Records in the written file: unique events plus injected copies.
    pub fn file_record_count(&self, _file_idx: u32) -> u64 {
        let dups = if self.duplicate_every == 0 {
            0
        } else {
            self.events_per_file / self.duplicate_every
        };
        self.events_per_file + dups
    }

    pub fn total_records(&self) -> u64 {
        (0..self.n_files).map(|f| self.file_record_count(f)).sum()
    }

    pub fn total_unique(&self) -> u64 {
        self.n_files as u64 * self.events_per_file
    }

    /// Keys of every unique event, ascending.
    pub fn unique_keys(&self) -> Vec<EventKey> {
        let total = self.total_unique();
        (0..total)
            .map(|i| EventKey::new(self.run, self.first_event + i))
            .collect()
    }

    /// Keys that get an injected duplicate copy, across all files in order.
    pub fn duplicate_keys(&self) -> Vec<EventKey> {
        let mut keys = Vec::new();
        if self.duplicate_every == 0 {
            return keys;
        }
        for file_idx in 0..self.n_files {
            let base = self.file_first_event(file_idx);
            let mut i = self.duplicate_every;
            while i <= self.events_per_file {
                keys.push(EventKey::new(self.run, base + i - 1));
                i += self.duplicate_every;
            }
        }
        keys
    }

    fn active_menu(&self, in_file_idx: u64) -> &MenuSpec {
        match &self.menu_switch {
            Some((at, second)) if in_file_idx >= *at => second,
            _ => &self.menu,
        }
    }

    fn make_event(&self, file_idx: u32, in_file_idx: u64) -> SynthEvent {
        let event = self.file_first_event(file_idx) + in_file_idx;
        let ordinal = (event - self.first_event) as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.seed ^ event.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (self.run as u64) << 1,
        );
        let menu = self.active_menu(in_file_idx);
        let (l1, l2, hlt) = menu.sample_masks(&mut rng);
        let is_sim = self.is_simulation();
        let weight = if is_sim {
            // Mixed-sign generator-style weights, occasionally extreme, to
            // exercise exact decimal round-trips.
            rng.gen_range(-0.5f32..1.5) * if rng.gen_bool(0.01) { 1.0e4 } else { 1.0 }
        } else {
            1.0
        };
        SynthEvent {
            key: EventKey::new(self.run, event),
            lbn: (event / 50) as u32 + 1,
            bcid: rng.gen_range(1..=3564) as u16,
            timestamp_ms: 1_495_000_000_000 + ordinal * 25,
            is_sim,
            weight,
            sim_process_id: self.sim_process_id,
            smk: menu.smk,
            l1_psk: self.l1_psk,
            hlt_psk: self.hlt_psk,
            l1,
            l2,
            hlt,
            upstream: self.upstream_guids(file_idx),
            conditions: self.conditions.clone(),
            is_duplicate_copy: false,
        }
    }

    /// All records of one file in write order: unique events interleaved
    /// with their injected duplicate copies.
    pub fn file_events(&self, file_idx: u32) -> impl Iterator<Item = SynthEvent> + '_ {
        let n = self.events_per_file;
        let mut i = 0u64;
        let mut pending: Option<SynthEvent> = None;
        std::iter::from_fn(move || {
            if let Some(copy) = pending.take() {
                return Some(copy);
            }
            if i >= n {
                return None;
            }
            let ev = self.make_event(file_idx, i);
            i += 1;
            if self.duplicate_every > 0 && i % self.duplicate_every == 0 {
                let mut copy = ev.clone();
                copy.is_duplicate_copy = true;
                pending = Some(copy);
            }
            Some(ev)
        })
    }

    /// Per-chain fired counts over the unique events of the whole dataset —
    /// the ledger trigger statistics are checked against.
    pub fn chain_fire_ledger(&self) -> BTreeMap<String, u64> {
        let mut counts = BTreeMap::new();
        for file_idx in 0..self.n_files {
            for ev in self.file_events(file_idx).filter(|e| !e.is_duplicate_copy) {
                let menu = if ev.smk == self.menu.smk {
                    &self.menu
                } else {
                    &self.menu_switch.as_ref().expect("switched smk").1
                };
                for name in menu.fired_chains(&ev.l1, &ev.l2, &ev.hlt) {
                    *counts.entry(name).or_insert(0) += 1;
                }
            }
        }
        counts
    }

    /// Render every file under `dir` and return the written ledger.
    pub fn write_files(&self, dir: &Path) -> std::io::Result<GeneratedDataset> {
        std::fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for file_idx in 0..self.n_files {
            let path = dir.join(format!("{}._f{file_idx:04}.jsonl", self.name));
            let guid = self.file_guid(file_idx);
            let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
            let header = json!({
                "guid": guid.to_text(),
                "dataset": self.name.to_string(),
                "proc_version": self.proc_version,
                "stream": self.name.stream,
                "project": self.name.project,
                "smk": self.menu.smk,
                "n_events": self.file_record_count(file_idx),
            });
            writeln!(out, "{header}")?;
            let mut n_records = 0u64;
            let mut duplicate_keys = Vec::new();
            for ev in self.file_events(file_idx) {
                writeln!(out, "{}", ev.to_json())?;
                n_records += 1;
                if ev.is_duplicate_copy {
                    duplicate_keys.push(ev.key);
                }
            }
            out.flush()?;
            files.push(GeneratedFile {
                path,
                guid,
                n_records,
                n_unique: self.events_per_file,
                duplicate_keys,
            });
        }
        Ok(GeneratedDataset {
            name: self.name.clone(),
            run: self.run,
            files,
        })
    }

    /// The bookkeeping entry a registry would hold for this dataset.
    pub fn registry_entry(&self, created_ms: u64) -> RegistryEntry {
        RegistryEntry {
            dataset: self.name.clone(),
            status: RegistryStatus::Valid,
            created_ms,
            files: (0..self.n_files)
                .map(|f| RegistryFile {
                    guid: self.file_guid(f),
                    expected_events: self.file_record_count(f),
                })
                .collect(),
        }
    }
}

/// Build a registry holding all the given specs.
pub fn build_registry(specs: &[(&DatasetSpec, u64)]) -> Registry {
    let mut registry = Registry::new();
    for (spec, created_ms) in specs {
        registry.insert(spec.registry_entry(*created_ms));
    }
    registry
}

/// Planned unique-key overlap between two specs (same run, contiguous
/// numbering makes it an interval intersection).
pub fn planned_overlap(a: &DatasetSpec, b: &DatasetSpec) -> u64 {
    if a.run != b.run {
        return 0;
    }
    let (a0, a1) = (a.first_event, a.first_event + a.total_unique());
    let (b0, b1) = (b.first_event, b.first_event + b.total_unique());
    a1.min(b1).saturating_sub(a0.max(b0))
}

/// One fully specified synthetic event record.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthEvent {
    pub key: EventKey,
    pub lbn: u32,
    pub bcid: u16,
    pub timestamp_ms: u64,
    pub is_sim: bool,
    pub weight: f32,
    pub sim_process_id: u32,
    pub smk: u32,
    pub l1_psk: u32,
    pub hlt_psk: u32,
    pub l1: Vec<u64>,
    pub l2: Vec<u64>,
    pub hlt: Vec<u64>,
    pub upstream: Vec<Guid>,
    pub conditions: String,
    /// True when this record is an injected copy of its predecessor.
    pub is_duplicate_copy: bool,
}

impl SynthEvent {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "run": self.key.run,
            "event": self.key.event,
            "lbn": self.lbn,
            "bcid": self.bcid,
            "timestamp": self.timestamp_ms,
            "is_sim": self.is_sim,
            "weight": self.weight,
            "sim_process_id": self.sim_process_id,
            "l1": self.l1,
            "l2": self.l2,
            "hlt": self.hlt,
            "upstream_guids": self.upstream.iter().map(|g| g.to_text()).collect::<Vec<_>>(),
            "smk": self.smk,
            "l1_psk": self.l1_psk,
            "hlt_psk": self.hlt_psk,
            "conditions": self.conditions,
        })
    }

    /// The full record the pipeline should reconstruct for this event when
    /// indexed from `file_guid` at record ordinal `pointer`.
    pub fn to_record(&self, dataset: &DatasetName, file_guid: Guid, pointer: u64) -> EventRecord {
        let mut locations = vec![GuidRef {
            ref_type: RefType::Indexed,
            guid: file_guid,
            internal_pointer: pointer,
        }];
        for (i, up) in self.upstream.iter().enumerate() {
            locations.push(GuidRef {
                ref_type: RefType::from_code(1 + i as u8).expect("at most two upstream refs"),
                guid: *up,
                internal_pointer: 0,
            });
        }
        EventRecord {
            key: self.key,
            dataset_id: dataset.stable_id(),
            lbn: self.lbn,
            bcid: self.bcid,
            timestamp_ms: self.timestamp_ms,
            is_simulated: self.is_sim,
            event_weight: self.weight,
            sim_process_id: self.sim_process_id,
            lhc_conditions: self.conditions.clone(),
            trigger: TriggerBlock {
                smk: self.smk,
                l1_psk: self.l1_psk,
                hlt_psk: self.hlt_psk,
                l1: BitMask::from_words(self.l1.clone()),
                l2: BitMask::from_words(self.l2.clone()),
                hlt: BitMask::from_words(self.hlt.clone()),
                decoded_chains: Vec::new(),
            },
            locations,
        }
    }
}

/// Ledger for one written input file.
#[derive(Clone, Debug)]
pub struct GeneratedFile {
    pub path: PathBuf,
    pub guid: Guid,
    pub n_records: u64,
    pub n_unique: u64,
    /// Key of each injected copy, in write order.
    pub duplicate_keys: Vec<EventKey>,
}

/// Ledger for one written dataset.
#[derive(Clone, Debug)]
pub struct GeneratedDataset {
    pub name: DatasetName,
    pub run: u32,
    pub files: Vec<GeneratedFile>,
}

impl GeneratedDataset {
    pub fn input_paths(&self) -> Vec<PathBuf> {
        self.files.iter().map(|f| f.path.clone()).collect()
    }

    pub fn total_records(&self) -> u64 {
        self.files.iter().map(|f| f.n_records).sum()
    }

    pub fn total_duplicates(&self) -> u64 {
        self.files.iter().map(|f| f.duplicate_keys.len() as u64).sum()
    }
}

fn derive_guid(seed: u64, tag: u64, file_idx: u32) -> Guid {
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0xA076_1D64_78BD_642F)
            ^ tag.wrapping_mul(0xE703_7ED1_A0B4_28DB)
            ^ file_idx as u64,
    );
    let mut bytes = [0u8; 16];
    rng.fill(&mut bytes);
    Guid::from_bytes(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> DatasetSpec {
        let mut s = DatasetSpec::new(
            "data17_13TeV.00330079.physics_Main.merge.AOD.f894_m1902",
            7,
        );
        s.n_files = 2;
        s.events_per_file = 100;
        s.duplicate_every = 25;
        s
    }

    #[test]
    fn generation_is_deterministic_and_reiterable() {
        let s = spec();
        let a: Vec<SynthEvent> = s.file_events(1).collect();
        let b: Vec<SynthEvent> = s.file_events(1).collect();
        assert_eq!(a, b);
        assert_eq!(a.len(), s.file_record_count(1) as usize);
    }

    #[test]
    fn duplicate_ledger_matches_injected_copies() {
        let s = spec();
        assert_eq!(s.file_record_count(0), 104);
        let copies: Vec<EventKey> = s
            .file_events(0)
            .filter(|e| e.is_duplicate_copy)
            .map(|e| e.key)
            .collect();
        assert_eq!(copies.len(), 4);
        let ledger = s.duplicate_keys();
        assert_eq!(&ledger[..4], &copies[..]);
        assert_eq!(ledger.len(), 8);
        // Each copy directly follows its original.
        let all: Vec<SynthEvent> = s.file_events(0).collect();
        for (i, ev) in all.iter().enumerate() {
            if ev.is_duplicate_copy {
                assert_eq!(all[i - 1].key, ev.key);
                assert!(!all[i - 1].is_duplicate_copy);
            }
        }
    }

    #[test]
    fn written_files_have_header_plus_record_lines() {
        let dir = tempfile::tempdir().unwrap();
        let s = spec();
        let generated = s.write_files(dir.path()).unwrap();
        assert_eq!(generated.files.len(), 2);
        assert_eq!(generated.total_records(), 208);
        assert_eq!(generated.total_duplicates(), 8);
        let text = std::fs::read_to_string(&generated.files[0].path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 105);
        let header: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(header["n_events"], 104);
        assert_eq!(header["smk"], 2154);
        assert_eq!(
            header["dataset"],
            "data17_13TeV.00330079.physics_Main.merge.AOD.f894_m1902"
        );
        let first: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(first["run"], 330079);
        assert_eq!(first["event"], 1);
        assert_eq!(first["is_sim"], false);
        assert_eq!(first["weight"], 1.0);
    }

    #[test]
    fn records_validate_and_carry_provenance() {
        let s = spec();
        assert_eq!(s.upstream_depth(), 1);
        let guid = s.file_guid(0);
        for (ptr, ev) in s.file_events(0).enumerate().take(10) {
            let record = ev.to_record(&s.name, guid, ptr as u64);
            record.validate().unwrap();
            assert_eq!(record.locations.len(), 2);
            assert_eq!(record.locations[0].internal_pointer, ptr as u64);
        }
    }

    #[test]
    fn menu_switch_changes_smk_mid_file() {
        let mut s = spec();
        s.menu_switch = Some((50, MenuSpec::standard(3000)));
        let events: Vec<SynthEvent> = s.file_events(0).filter(|e| !e.is_duplicate_copy).collect();
        assert_eq!(events[49].smk, 2154);
        assert_eq!(events[50].smk, 3000);
        let ledger = s.chain_fire_ledger();
        assert!(!ledger.is_empty());
    }

    #[test]
    fn planned_overlap_is_interval_intersection() {
        let a = spec();
        let mut b = spec();
        b.first_event = 151;
        assert_eq!(planned_overlap(&a, &a), 200);
        assert_eq!(planned_overlap(&a, &b), 50);
        let mut c = spec();
        c.name = DatasetName::parse("data17_13TeV.00330080.physics_Main.merge.AOD.f894_m1902")
            .unwrap();
        c.run = c.name.run_id;
        assert_eq!(planned_overlap(&a, &c), 0);
    }

    #[test]
    fn registry_totals_match_generated_records() {
        let s = spec();
        let entry = s.registry_entry(1_500_000_000_000);
        assert_eq!(entry.total_expected_events(), s.total_records());
        assert_eq!(entry.files.len(), 2);
        assert_eq!(entry.files[0].guid, s.file_guid(0));
        let registry = build_registry(&[(&s, 5)]);
        assert!(registry.contains(&s.name.to_string()));
    }
}
