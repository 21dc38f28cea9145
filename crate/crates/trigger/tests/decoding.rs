//! End-to-end checks of the trigger layer against the fixture generator's
//! independent ledgers: menu round-trips, randomized decode oracles, the
//! in-place dataset decode pass, and the derived fire-count and overlap
//! tables.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ei_mapstore::{
    EntryKind, EntryStatus, EventRow, EventStore, ImportOptions, MapFileReader, SeqWriter,
};
use ei_model::{EventKey, EventRecord};
use ei_synth::{write_menu_file, DatasetSpec, MenuSpec, SmkMapEntry, TriggerLevel};
use ei_trigger::{
    decode_dataset, decode_masks, load_menu_tables, parse_menu_text, read_overlaps,
    read_statistics, trigger_overlaps, trigger_statistics, Level, MenuTables, TriggerError,
    OVERLAP_SUFFIX, STATS_SUFFIX,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const REAL_DS: &str = "data17_13TeV.00330079.physics_Main.merge.AOD.f894_m1902";
const SIM_DS: &str = "mc16_13TeV.410470.PhPy8EG_ttbar.merge.AOD.e6337_r9364";

/// The menu source for a generated menu, loaded back through the parser.
fn tables_for(dir: &Path, menus: &[MenuSpec], maps: &[SmkMapEntry]) -> MenuTables {
    let path = dir.join("menus.txt");
    write_menu_file(&path, menus, maps).unwrap();
    load_menu_tables(&path).unwrap()
}

/// Lands a synthetic dataset in a store the same way the pipeline would:
/// rows in key order through a sequential file, then imported. `mutate`
/// lets a test distort records (zero the configuration key, strip masks)
/// before they are stored.
fn land_dataset(
    store: &mut EventStore,
    spec: &DatasetSpec,
    work: &Path,
    mutate: &dyn Fn(&mut EventRecord),
) {
    let seq_path = work.join(format!("{}.seq", spec.name));
    let mut writer = SeqWriter::create(&seq_path).unwrap();
    for file_idx in 0..spec.n_files {
        let guid = spec.file_guid(file_idx);
        for (pointer, ev) in spec.file_events(file_idx).enumerate() {
            let mut record = ev.to_record(&spec.name, guid, pointer as u64);
            mutate(&mut record);
            let row = EventRow::from_record(&record).unwrap();
            writer.append(&row.key.encode(), &row.to_value().unwrap()).unwrap();
        }
    }
    writer.finish().unwrap();
    let opts = ImportOptions {
        require_completion_list: false,
        ..ImportOptions::default()
    };
    store.import_dataset(&seq_path, &spec.name, &opts).unwrap();
}

/// Per-event fired-chain oracle straight from the generator, unique events
/// only and in key order.
fn oracle_fired_sets(spec: &DatasetSpec) -> Vec<(EventKey, Vec<String>)> {
    let mut out = Vec::new();
    for file_idx in 0..spec.n_files {
        for ev in spec.file_events(file_idx).filter(|e| !e.is_duplicate_copy) {
            let menu = if ev.smk == spec.menu.smk {
                &spec.menu
            } else {
                &spec.menu_switch.as_ref().expect("switched menu").1
            };
            out.push((ev.key, menu.fired_chains(&ev.l1, &ev.l2, &ev.hlt)));
        }
    }
    out
}

#[test]
fn generated_menus_round_trip_through_the_file_format() {
    let tmp = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let menus = vec![
        MenuSpec::standard(2154),
        MenuSpec::three_level(3001),
        MenuSpec::random(7777, 400, 4096, &mut rng),
    ];
    let maps = vec![
        SmkMapEntry::for_run(330079, 2154),
        SmkMapEntry::for_tag("e6337_r9364", 3001),
    ];
    let tables = tables_for(tmp.path(), &menus, &maps);

    assert_eq!(tables.menus.len(), 3);
    for menu in &menus {
        let loaded = tables.menu(menu.smk).unwrap();
        for (level, synth_level) in [
            (Level::L1, TriggerLevel::L1),
            (Level::L2, TriggerLevel::L2),
            (Level::Hlt, TriggerLevel::Hlt),
        ] {
            let expected: BTreeMap<u32, String> = menu
                .chains_at(synth_level)
                .map(|c| (c.counter, c.name.clone()))
                .collect();
            assert_eq!(loaded.level(level), &expected, "level {level} of {}", menu.smk);
        }
    }
    assert_eq!(tables.resolution.resolve(false, 330079, ""), Some(2154));
    assert_eq!(tables.resolution.resolve(true, 0, "e6337_r9364"), Some(3001));
}

#[test]
fn random_mask_decodes_match_the_generator_oracle() {
    let tmp = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for round in 0..20 {
        let menu = MenuSpec::random(100 + round, 24, 900, &mut rng);
        let tables = tables_for(tmp.path(), &[menu.clone()], &[]);
        let loaded = tables.menu(menu.smk).unwrap();
        for _ in 0..100 {
            let (l1, l2, hlt) = menu.sample_masks(&mut rng);
            let out = decode_masks(
                &ei_model::BitMask::from_words(l1.clone()),
                &ei_model::BitMask::from_words(l2.clone()),
                &ei_model::BitMask::from_words(hlt.clone()),
                loaded,
            );
            assert_eq!(out.chains, menu.fired_chains(&l1, &l2, &hlt));
            assert!(out.warnings.is_empty());
        }
    }
}

#[test]
fn dataset_decode_materialises_chains_in_place() {
    let tmp = TempDir::new().unwrap();
    let mut store = EventStore::open(&tmp.path().join("store")).unwrap();
    let mut spec = DatasetSpec::new(REAL_DS, 401);
    spec.n_files = 2;
    spec.events_per_file = 150;
    spec.duplicate_every = 40;
    spec.menu = MenuSpec::three_level(2154);
    land_dataset(&mut store, &spec, tmp.path(), &|_| {});
    let tables = tables_for(tmp.path(), &[spec.menu.clone()], &[]);

    let name = spec.name.to_string();
    let before = store.entry(&name).unwrap();
    let report = decode_dataset(&mut store, &spec.name, &tables).unwrap();
    assert_eq!(report.n_events, spec.total_unique());
    assert!(report.warnings.is_empty());
    assert_eq!(report.n_placeholders, 0);

    let after = store.entry(&name).unwrap();
    assert_eq!(after.status, EntryStatus::Valid);
    assert_eq!(after.kind, EntryKind::Events);
    assert_eq!(after.data_path, before.data_path);
    assert_eq!(after.n_rows, before.n_rows);

    let rows = store.scan_dataset(&name, &|_| true).unwrap();
    let oracle = oracle_fired_sets(&spec);
    assert_eq!(rows.len(), oracle.len());
    let mut total_hits = 0u64;
    for (row, (key, fired)) in rows.iter().zip(&oracle) {
        assert_eq!(row.key, *key);
        assert_eq!(&row.chains, fired, "event {:?}", row.key);
        total_hits += fired.len() as u64;
    }
    assert_eq!(report.n_chain_hits, total_hits);

    // Point reads keep working against the rewritten index.
    let probe = oracle[17].0;
    let fetched = store.get_rows(&name, &[probe]).unwrap();
    assert_eq!(fetched[0].1.as_ref().unwrap().chains, oracle[17].1);
}

#[test]
fn decode_resolves_missing_configuration_keys_by_run_and_by_tag() {
    let tmp = TempDir::new().unwrap();
    for (ds, seed) in [(REAL_DS, 71u64), (SIM_DS, 72u64)] {
        let mut store = EventStore::open(&tmp.path().join(format!("store{seed}"))).unwrap();
        let mut spec = DatasetSpec::new(ds, seed);
        spec.events_per_file = 80;
        land_dataset(&mut store, &spec, tmp.path(), &|record| {
            record.trigger.smk = 0;
        });
        let map = if spec.is_simulation() {
            SmkMapEntry::for_tag(&spec.name.ami_tag, spec.menu.smk)
        } else {
            SmkMapEntry::for_run(spec.run, spec.menu.smk)
        };
        let tables = tables_for(tmp.path(), &[spec.menu.clone()], &[map]);
        let report = decode_dataset(&mut store, &spec.name, &tables).unwrap();
        assert_eq!(report.n_events, 80);

        let rows = store.scan_dataset(&spec.name.to_string(), &|_| true).unwrap();
        for (row, (_, fired)) in rows.iter().zip(oracle_fired_sets(&spec)) {
            assert_eq!(row.chains, fired);
        }

        // Without the resolution line the dataset is undecodable.
        let bare = tables_for(tmp.path(), &[spec.menu.clone()], &[]);
        let err = decode_dataset(&mut store, &spec.name, &bare).unwrap_err();
        assert!(matches!(err, TriggerError::UnknownSmk { .. }), "{err}");
    }
}

#[test]
fn unmapped_counters_persist_as_placeholders() {
    let tmp = TempDir::new().unwrap();
    let mut store = EventStore::open(&tmp.path().join("store")).unwrap();
    let mut spec = DatasetSpec::new(REAL_DS, 88);
    spec.events_per_file = 120;
    land_dataset(&mut store, &spec, tmp.path(), &|_| {});

    // Load the menu with its most common first-level chain deleted, so some
    // events carry a bit the table cannot name.
    let dropped = spec
        .menu
        .chains_at(TriggerLevel::L1)
        .min_by_key(|c| c.counter)
        .unwrap()
        .clone();
    let text: String = spec
        .menu
        .menu_lines()
        .lines()
        .filter(|l| !l.ends_with(&format!("\t{}", dropped.name)))
        .map(|l| format!("{l}\n"))
        .collect();
    let tables = parse_menu_text(&text).unwrap();

    let report = decode_dataset(&mut store, &spec.name, &tables).unwrap();
    assert!(report.n_placeholders > 0);
    let placeholder = format!("L1_counter_{}", dropped.counter);
    assert!(report.warnings.iter().any(|w| w.contains(&format!("counter {}", dropped.counter))));

    let rows = store.scan_dataset(&spec.name.to_string(), &|_| true).unwrap();
    let mut seen = 0u64;
    for (row, (_, fired)) in rows.iter().zip(oracle_fired_sets(&spec)) {
        let expected: Vec<String> = fired
            .iter()
            .map(|n| {
                if n == &dropped.name {
                    placeholder.clone()
                } else {
                    n.clone()
                }
            })
            .collect();
        assert_eq!(row.chains, expected);
        seen += row.chains.iter().filter(|c| **c == placeholder).count() as u64;
    }
    assert_eq!(seen, report.n_placeholders);
}

#[test]
fn statistics_match_the_generator_ledger() {
    let tmp = TempDir::new().unwrap();
    let mut store = EventStore::open(&tmp.path().join("store")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut spec = DatasetSpec::new(REAL_DS, 314);
    spec.n_files = 2;
    spec.events_per_file = 200;
    spec.duplicate_every = 25;
    spec.menu = MenuSpec::three_level(2154);
    spec.menu_switch = Some((120, MenuSpec::random(9000, 12, 700, &mut rng)));
    land_dataset(&mut store, &spec, tmp.path(), &|_| {});
    let second = spec.menu_switch.as_ref().unwrap().1.clone();
    let tables = tables_for(tmp.path(), &[spec.menu.clone(), second], &[]);
    decode_dataset(&mut store, &spec.name, &tables).unwrap();

    let stats = trigger_statistics(&mut store, &spec.name).unwrap();
    assert_eq!(stats.n_events, spec.total_unique());
    assert_eq!(stats.counts, spec.chain_fire_ledger());

    // The persisted table reads back identically and sits in the catalog as
    // a derived entry tied to its dataset.
    let reread = read_statistics(&store, &spec.name).unwrap();
    assert_eq!(reread.counts, stats.counts);
    let entry = store
        .entry(&format!("{}.{STATS_SUFFIX}", spec.name))
        .unwrap();
    assert_eq!(entry.kind, EntryKind::Derived);
    assert_eq!(entry.relations, vec![spec.name.to_string()]);
    assert_eq!(entry.n_rows, stats.counts.len() as u64);
    let (data_path, index_path) = store.derived_paths(&spec.name, STATS_SUFFIX);
    MapFileReader::open(&data_path, &index_path).unwrap();
}

#[test]
fn overlaps_match_a_brute_force_oracle() {
    let tmp = TempDir::new().unwrap();
    let mut store = EventStore::open(&tmp.path().join("store")).unwrap();
    let mut spec = DatasetSpec::new(REAL_DS, 2718);
    spec.events_per_file = 1000;
    land_dataset(&mut store, &spec, tmp.path(), &|_| {});
    let tables = tables_for(tmp.path(), &[spec.menu.clone()], &[]);
    decode_dataset(&mut store, &spec.name, &tables).unwrap();

    let table = trigger_overlaps(&mut store, &spec.name).unwrap();
    assert_eq!(table.n_events, 1000);
    table.check().unwrap();

    let fired: Vec<BTreeSet<String>> = oracle_fired_sets(&spec)
        .into_iter()
        .map(|(_, names)| names.into_iter().collect())
        .collect();
    let chains: Vec<String> = spec.menu.chains.iter().map(|c| c.name.clone()).collect();
    for a in &chains {
        for b in &chains {
            let expected = fired
                .iter()
                .filter(|s| s.contains(a) && s.contains(b))
                .count() as u64;
            assert_eq!(table.count(a, b), expected, "pair {a}/{b}");
            assert_eq!(table.count(a, b), table.count(b, a));
        }
    }

    // The diagonal IS the fire-count table.
    let stats = trigger_statistics(&mut store, &spec.name).unwrap();
    assert_eq!(table.diagonal(), stats.counts);

    let reread = read_overlaps(&store, &spec.name).unwrap();
    assert_eq!(reread.counts, table.counts);
    let entry = store
        .entry(&format!("{}.{OVERLAP_SUFFIX}", spec.name))
        .unwrap();
    assert_eq!(entry.kind, EntryKind::Derived);
}

#[test]
fn datasets_without_trigger_content_are_refused() {
    let tmp = TempDir::new().unwrap();
    let mut store = EventStore::open(&tmp.path().join("store")).unwrap();

    // Masks stripped entirely: nothing to decode, nothing to count.
    let mut bare = DatasetSpec::new(REAL_DS, 61);
    bare.events_per_file = 50;
    land_dataset(&mut store, &bare, tmp.path(), &|record| {
        record.trigger.l1 = ei_model::BitMask::new();
        record.trigger.l2 = ei_model::BitMask::new();
        record.trigger.hlt = ei_model::BitMask::new();
    });
    let tables = tables_for(tmp.path(), &[bare.menu.clone()], &[]);
    let err = decode_dataset(&mut store, &bare.name, &tables).unwrap_err();
    assert!(
        matches!(&err, TriggerError::NoTriggerData { dataset, .. } if dataset == &bare.name.to_string()),
        "{err}"
    );
    let err = trigger_statistics(&mut store, &bare.name).unwrap_err();
    assert!(matches!(err, TriggerError::NoTriggerData { .. }), "{err}");

    // Masks present but never decoded: counting would silently report zero
    // fires, so it must refuse and say why.
    let mut undecoded = DatasetSpec::new(SIM_DS, 62);
    undecoded.events_per_file = 50;
    land_dataset(&mut store, &undecoded, tmp.path(), &|_| {});
    let err = trigger_overlaps(&mut store, &undecoded.name).unwrap_err();
    let TriggerError::NoTriggerData { detail, .. } = &err else {
        panic!("expected no-trigger-data, got {err}");
    };
    assert!(detail.contains("not decoded"), "{detail:?}");
}
