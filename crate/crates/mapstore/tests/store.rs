mod common;

use std::sync::Arc;

use ei_mapstore::{
    EntryStatus, EventRow, EventStore, ImportOptions, LookupFilters, MapStoreError,
};
use ei_model::{DatasetName, EventKey};
use ei_transport::FixedClock;

fn dataset(text: &str) -> DatasetName {
    DatasetName::parse(text).unwrap()
}

fn open_store(dir: &std::path::Path) -> EventStore {
    EventStore::open_with_clock(&dir.join("store"), Arc::new(FixedClock::at(1_700_000_000_000)))
        .unwrap()
}

#[test]
fn clean_import_builds_valid_entry_and_lookup_rows() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset("data17_13TeV.00330079.physics_Main.merge.AOD.f894_m1902");
    let rows = common::make_rows(10_000, 330079, ds.stable_id(), 1);
    let seq = common::write_seq(dir.path(), "main", &rows, &[&ds.to_string()]);

    let mut store = open_store(dir.path());
    let report = store
        .import_dataset(&seq, &ds, &ImportOptions::default())
        .unwrap();
    assert_eq!(report.n_rows, 10_000);
    assert_eq!(report.n_duplicates, 0);
    assert_eq!(report.entry.status, EntryStatus::Valid);

    // A sample of events resolves through the lookup table with the right
    // provenance references.
    let sample: Vec<EventKey> = (1..=5).map(|e| EventKey::new(330079, e * 97)).collect();
    let resolved = store
        .event_lookup(&sample, &LookupFilters::default())
        .unwrap();
    for hit in &resolved {
        assert_eq!(hit.matches.len(), 1, "event {:?}", hit.key);
        let row = &hit.matches[0];
        assert_eq!(row.dataset, ds);
        assert_eq!(row.locations.len(), 2);
        assert_eq!(row.locations[0].guid, common::dataset_guid(1));
    }

    // The same events read back in full from the dataset file.
    let got = store.get_rows(&ds.to_string(), &sample).unwrap();
    for (key, row) in got {
        let row = row.expect("row present");
        assert_eq!(row.key, key);
        assert!(!row.chains.is_empty() || row.chains.is_empty()); // parses cleanly
    }

    let ops: Vec<String> = store
        .journal_entries()
        .into_iter()
        .map(|j| j.operation)
        .collect();
    assert_eq!(ops, vec!["import", "search", "search"]);
}

#[test]
fn duplicates_are_diverted_counted_and_notified() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset("data17_13TeV.00331033.physics_Main.merge.AOD.f895_m1904");
    let mut rows = common::make_rows(1000, 331033, ds.stable_id(), 2);
    // Duplicate three keys: one extra copy each, re-sorted into place.
    let copies: Vec<_> = [100usize, 500, 900].iter().map(|i| rows[*i].clone()).collect();
    rows.extend(copies);
    rows.sort_by(|a, b| a.0.cmp(&b.0));
    let seq = common::write_seq(dir.path(), "dups", &rows, &[&ds.to_string()]);

    let mut store = open_store(dir.path());
    let report = store
        .import_dataset(&seq, &ds, &ImportOptions::default())
        .unwrap();
    assert_eq!(report.n_rows, 1000);
    assert_eq!(report.n_duplicates, 3);
    assert_eq!(report.duplicate_keys.len(), 3);

    let notices = store.notifications();
    assert_eq!(notices.len(), 1);
    assert_eq!(notices[0].dataset, ds.to_string());
    assert_eq!(notices[0].n_duplicates, 3);
    assert_eq!(notices[0].sample.len(), 3);

    // One copy per key survives in the map file.
    let reader = store.open_reader(&ds.to_string()).unwrap();
    assert_eq!(reader.n_rows(), 1000);
}

#[test]
fn import_requires_completion_list_by_default() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset("data17_13TeV.00332000.physics_Main.merge.AOD.f900_m1910");
    let rows = common::make_rows(50, 332000, ds.stable_id(), 3);
    // The completion list names a different dataset.
    let seq = common::write_seq(dir.path(), "unl", &rows, &["something.else"]);

    let mut store = open_store(dir.path());
    assert!(matches!(
        store.import_dataset(&seq, &ds, &ImportOptions::default()),
        Err(MapStoreError::NotValidated { .. })
    ));

    let relaxed = ImportOptions {
        require_completion_list: false,
        ..Default::default()
    };
    assert!(store.import_dataset(&seq, &ds, &relaxed).is_ok());
}

#[test]
fn reimport_conflicts_unless_superseding() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset("data17_13TeV.00333000.physics_Main.merge.AOD.f901_m1912");
    let rows = common::make_rows(200, 333000, ds.stable_id(), 4);
    let seq = common::write_seq(dir.path(), "v1", &rows, &[&ds.to_string()]);

    let mut store = open_store(dir.path());
    store
        .import_dataset(&seq, &ds, &ImportOptions::default())
        .unwrap();
    assert!(matches!(
        store.import_dataset(&seq, &ds, &ImportOptions::default()),
        Err(MapStoreError::CatalogConflict { .. })
    ));

    let supersede = ImportOptions {
        supersede: true,
        ..Default::default()
    };
    store.import_dataset(&seq, &ds, &supersede).unwrap();

    let entries = store.catalog_entries();
    let statuses: Vec<EntryStatus> = entries
        .iter()
        .filter(|e| e.name == ds.to_string())
        .map(|e| e.status)
        .collect();
    assert!(statuses.contains(&EntryStatus::Valid));
    assert!(statuses.contains(&EntryStatus::Obsolete));
    // The current entry is the live one.
    assert_eq!(store.entry(&ds.to_string()).unwrap().status, EntryStatus::Valid);
}

#[test]
fn event_lookup_applies_filters_and_reports_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let aod = dataset("data17_13TeV.00334000.physics_Main.merge.AOD.f902_m1914");
    let daod = dataset("data17_13TeV.00334000.physics_Main.deriv.DAOD_EXOT5.f902_m1914_p3402");
    let mut store = open_store(dir.path());
    for (ds, seed, tag) in [(&aod, 5u64, "aod"), (&daod, 6u64, "daod")] {
        let rows = common::make_rows(300, 334000, ds.stable_id(), seed);
        let seq = common::write_seq(dir.path(), tag, &rows, &[&ds.to_string()]);
        store.import_dataset(&seq, ds, &ImportOptions::default()).unwrap();
    }

    let key = EventKey::new(334000, 42);
    let both = store.event_lookup(&[key], &LookupFilters::default()).unwrap();
    assert_eq!(both[0].matches.len(), 2);

    let only_aod = store
        .event_lookup(
            &[key],
            &LookupFilters {
                data_format: Some("AOD".into()),
                ..Default::default()
            },
        )
        .unwrap();
    assert_eq!(only_aod[0].matches.len(), 1);
    assert_eq!(only_aod[0].matches[0].dataset, aod);

    let missing = store
        .event_lookup(&[EventKey::new(999999, 1)], &LookupFilters::default())
        .unwrap();
    assert!(missing[0].matches.is_empty());
}

#[test]
fn delete_purges_files_lookup_rows_and_journal_records_it() {
    let dir = tempfile::tempdir().unwrap();
    let doomed = dataset("data17_13TeV.00335000.physics_Main.merge.AOD.f903_m1916");
    let kept = dataset("data17_13TeV.00335000.physics_Main.deriv.DAOD_HIGG2D1.f903_m1916_p3404");
    let mut store = open_store(dir.path());
    for (ds, tag) in [(&doomed, "doomed"), (&kept, "kept")] {
        let rows = common::make_rows(150, 335000, ds.stable_id(), 7);
        let seq = common::write_seq(dir.path(), tag, &rows, &[&ds.to_string()]);
        store.import_dataset(&seq, ds, &ImportOptions::default()).unwrap();
    }

    let key = EventKey::new(335000, 10);
    assert_eq!(
        store
            .event_lookup(&[key], &LookupFilters::default())
            .unwrap()[0]
            .matches
            .len(),
        2
    );

    store.delete_dataset(&doomed.to_string()).unwrap();

    let survivors = store.event_lookup(&[key], &LookupFilters::default()).unwrap();
    assert_eq!(survivors[0].matches.len(), 1);
    assert_eq!(survivors[0].matches[0].dataset, kept);

    let entry = store.entry(&doomed.to_string()).unwrap();
    assert_eq!(entry.status, EntryStatus::Deleted);
    assert!(!std::path::Path::new(&entry.data_path).exists());
    assert!(store.open_reader(&doomed.to_string()).is_err());

    assert!(matches!(
        store.delete_dataset(&doomed.to_string()),
        Err(MapStoreError::UnknownEntry { .. })
    ));
    assert!(matches!(
        store.delete_dataset("never.00000001.existed.merge.AOD.x1"),
        Err(MapStoreError::UnknownEntry { .. })
    ));

    let deletes = store
        .journal_entries()
        .into_iter()
        .filter(|j| j.operation == "delete")
        .count();
    assert_eq!(deletes, 3); // one success, two refusals — every attempt lands
}

#[test]
fn scan_matches_naive_filter_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset("data17_13TeV.00336000.physics_Main.merge.AOD.f904_m1918");
    let rows = common::make_rows(2000, 336000, ds.stable_id(), 8);
    let seq = common::write_seq(dir.path(), "scan", &rows, &[&ds.to_string()]);
    let mut store = open_store(dir.path());
    store.import_dataset(&seq, &ds, &ImportOptions::default()).unwrap();

    let pred = |row: &EventRow| (10..20).contains(&row.lbn);
    let got = store.scan_dataset(&ds.to_string(), &pred).unwrap();

    let expect: Vec<EventRow> = rows
        .iter()
        .map(|(k, v)| EventRow::parse(k, v).unwrap())
        .filter(|r| pred(r))
        .collect();
    assert!(!expect.is_empty());
    assert_eq!(got, expect);
}

#[test]
fn lookup_rows_mirror_mapfile_contents() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dataset("data17_13TeV.00337000.physics_Main.merge.AOD.f905_m1920");
    let rows = common::make_rows(500, 337000, ds.stable_id(), 9);
    let seq = common::write_seq(dir.path(), "mirror", &rows, &[&ds.to_string()]);
    let mut store = open_store(dir.path());
    store.import_dataset(&seq, &ds, &ImportOptions::default()).unwrap();

    // Every stored event resolves, and nothing outside the dataset does.
    let keys: Vec<EventKey> = rows
        .iter()
        .map(|(k, _)| EventKey::decode(k).unwrap())
        .collect();
    let resolved = store.event_lookup(&keys, &LookupFilters::default()).unwrap();
    assert!(resolved.iter().all(|m| m.matches.len() == 1));

    let reader = store.open_reader(&ds.to_string()).unwrap();
    assert_eq!(reader.n_rows(), 500);
    let bpe = store.bytes_per_event(&ds.to_string()).unwrap();
    assert!(bpe > 0.0);
}
