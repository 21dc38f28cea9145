mod common;

use std::collections::HashMap;

use ei_mapstore::{
    Codec, MapFileOptions, MapFileReader, MapFileWriter, MapMode, MapStoreError,
};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn write_file(
    dir: &std::path::Path,
    tag: &str,
    rows: &[(Vec<u8>, Vec<u8>)],
    opts: MapFileOptions,
) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = dir.join(format!("{tag}.data"));
    let index = dir.join(format!("{tag}.index"));
    let mut w = MapFileWriter::create(&data, &index, opts).unwrap();
    for (k, v) in rows {
        w.append(k, v).unwrap();
    }
    w.finish().unwrap();
    (data, index)
}

fn collect_all(reader: &MapFileReader) -> Vec<(Vec<u8>, Vec<u8>)> {
    let mut out = Vec::new();
    reader
        .scan(|k, v| {
            out.push((k.to_vec(), v.to_vec()));
            Ok(true)
        })
        .unwrap();
    out
}

#[test]
fn index_holds_every_interval_th_key() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<(Vec<u8>, Vec<u8>)> = (0..10u8).map(|i| (vec![i], vec![i; 4])).collect();
    let opts = MapFileOptions {
        mode: MapMode::Record,
        codec: Codec::None,
        index_interval: 4,
        ..Default::default()
    };
    let (data, index) = write_file(dir.path(), "ten", &rows, opts);
    let reader = MapFileReader::open(&data, &index).unwrap();
    let keys: Vec<Vec<u8>> = reader.index_entries().iter().map(|(k, _)| k.clone()).collect();
    assert_eq!(keys, vec![vec![0u8], vec![4], vec![8]]);
}

#[test]
fn unsorted_input_reported_at_exact_position() {
    let dir = tempfile::tempdir().unwrap();
    let mut w = MapFileWriter::create(
        &dir.path().join("x.data"),
        &dir.path().join("x.index"),
        MapFileOptions::default(),
    )
    .unwrap();
    w.append(b"aaa", b"1").unwrap();
    w.append(b"bbb", b"2").unwrap();
    let err = w.append(b"abc", b"3").unwrap_err();
    match err {
        MapStoreError::UnsortedInput { position, prev, next } => {
            assert_eq!(position, 2);
            assert_eq!(prev, b"bbb");
            assert_eq!(next, b"abc");
        }
        other => panic!("wrong error: {other}"),
    }
}

#[test]
fn equal_keys_pass_through_and_get_returns_first() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![
        (b"k1".to_vec(), b"first".to_vec()),
        (b"k1".to_vec(), b"second".to_vec()),
        (b"k2".to_vec(), b"other".to_vec()),
    ];
    for (mode, tag) in [(MapMode::Record, "r"), (MapMode::Block, "b")] {
        let opts = MapFileOptions {
            mode,
            ..Default::default()
        };
        let (data, index) = write_file(dir.path(), tag, &rows, opts);
        let reader = MapFileReader::open(&data, &index).unwrap();
        assert_eq!(reader.n_rows(), 3);
        assert_eq!(reader.get(b"k1").unwrap().unwrap(), b"first");
        assert_eq!(collect_all(&reader).len(), 3);
    }
}

#[test]
fn empty_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (data, index) = write_file(dir.path(), "empty", &[], MapFileOptions::default());
    let reader = MapFileReader::open(&data, &index).unwrap();
    assert_eq!(reader.n_rows(), 0);
    assert_eq!(reader.get(b"anything").unwrap(), None);
    assert!(collect_all(&reader).is_empty());
}

#[test]
fn gets_match_full_scan_oracle_across_modes() {
    let dir = tempfile::tempdir().unwrap();
    let rows = common::make_rows(5000, 330079, 42, 0xA11CE);
    let oracle: HashMap<Vec<u8>, Vec<u8>> = rows.iter().cloned().collect();

    for (mode, codec, tag) in [
        (MapMode::Record, Codec::Deflate, "rd"),
        (MapMode::Block, Codec::Deflate, "bd"),
        (MapMode::Record, Codec::None, "rn"),
        (MapMode::Block, Codec::None, "bn"),
    ] {
        let opts = MapFileOptions {
            mode,
            codec,
            block_size: 8 << 10, // small blocks so gets cross many boundaries
            index_interval: 64,
        };
        let (data, index) = write_file(dir.path(), tag, &rows, opts);
        let reader = MapFileReader::open(&data, &index).unwrap();

        assert_eq!(
            reader.get(&rows[0].0).unwrap().as_deref(),
            Some(rows[0].1.as_slice()),
            "first key, {tag}"
        );
        assert_eq!(
            reader.get(&rows.last().unwrap().0).unwrap().as_deref(),
            Some(rows.last().unwrap().1.as_slice()),
            "last key, {tag}"
        );

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let (k, v) = rows.choose(&mut rng).unwrap();
            assert_eq!(reader.get(k).unwrap().as_deref(), Some(v.as_slice()), "{tag}");
        }
        // Absent keys: events beyond the populated range and a gap run.
        let absent = ei_model::EventKey::new(330079, 999_999).encode();
        assert_eq!(reader.get(&absent).unwrap(), None);
        let other_run = ei_model::EventKey::new(1, 1).encode();
        assert_eq!(reader.get(&other_run).unwrap(), None);

        let scanned = collect_all(&reader);
        assert_eq!(scanned.len(), oracle.len(), "{tag}");
        for (k, v) in &scanned {
            assert_eq!(oracle.get(k), Some(v), "{tag}");
        }
    }
}

#[test]
fn record_and_block_answers_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let rows = common::make_rows(4000, 300000, 7, 0xBEE);
    let record = {
        let opts = MapFileOptions {
            mode: MapMode::Record,
            ..Default::default()
        };
        let (d, i) = write_file(dir.path(), "record", &rows, opts);
        MapFileReader::open(&d, &i).unwrap()
    };
    let block = {
        let opts = MapFileOptions {
            mode: MapMode::Block,
            block_size: 16 << 10,
            ..Default::default()
        };
        let (d, i) = write_file(dir.path(), "block", &rows, opts);
        MapFileReader::open(&d, &i).unwrap()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..300 {
        let event = rng.gen_range(0..5000u64);
        let key = ei_model::EventKey::new(300000, event).encode();
        assert_eq!(record.get(&key).unwrap(), block.get(&key).unwrap());
    }
    assert_eq!(collect_all(&record), collect_all(&block));

    // A filtering parallel scan agrees across modes and with a naive filter.
    let pred = |_k: &[u8], v: &[u8]| v.windows(7).any(|w| w == b"HLT_e5_");
    let from_record = record.par_scan(pred).unwrap();
    let from_block = block.par_scan(pred).unwrap();
    let naive: Vec<(Vec<u8>, Vec<u8>)> = rows
        .iter()
        .filter(|(k, v)| pred(k, v))
        .cloned()
        .collect();
    assert!(!naive.is_empty());
    assert_eq!(from_record, naive);
    assert_eq!(from_block, naive);
}

#[test]
fn block_mode_compresses_at_least_twice_as_well_as_record_mode() {
    let dir = tempfile::tempdir().unwrap();
    let rows = common::make_rows(20_000, 310000, 3, 0xC0FFEE);
    let record_opts = MapFileOptions {
        mode: MapMode::Record,
        codec: Codec::Deflate,
        ..Default::default()
    };
    let block_opts = MapFileOptions {
        mode: MapMode::Block,
        codec: Codec::Deflate,
        ..Default::default()
    };
    let (rd, _) = write_file(dir.path(), "record", &rows, record_opts);
    let (bd, _) = write_file(dir.path(), "block", &rows, block_opts);
    let record_size = std::fs::metadata(&rd).unwrap().len();
    let block_size = std::fs::metadata(&bd).unwrap().len();
    assert!(
        (block_size as f64) <= 0.5 * record_size as f64,
        "block {block_size} vs record {record_size}"
    );
}

#[test]
fn corrupted_or_truncated_files_are_detected() {
    let dir = tempfile::tempdir().unwrap();
    let rows = common::make_rows(2000, 320000, 5, 0xDADA);
    let (data, index) = write_file(dir.path(), "target", &rows, MapFileOptions::default());
    let data_bytes = std::fs::read(&data).unwrap();
    let index_bytes = std::fs::read(&index).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    for trial in 0..40 {
        let (path, pristine) = if trial % 2 == 0 {
            (&index, &index_bytes)
        } else {
            (&data, &data_bytes)
        };
        let mut mutated = pristine.clone();
        if trial % 4 < 2 {
            let at = rng.gen_range(0..mutated.len());
            mutated[at] ^= 1 << rng.gen_range(0..8);
        } else {
            let keep = rng.gen_range(0..mutated.len());
            mutated.truncate(keep);
        }
        if mutated == *pristine {
            continue;
        }
        std::fs::write(path, &mutated).unwrap();
        let result = MapFileReader::open(&data, &index);
        assert!(result.is_err(), "corruption went undetected (trial {trial})");
        std::fs::write(path, pristine).unwrap();
    }
    // The restored pair still opens and serves rows.
    let reader = MapFileReader::open(&data, &index).unwrap();
    assert_eq!(reader.get(&rows[17].0).unwrap().as_deref(), Some(rows[17].1.as_slice()));
}

#[test]
fn gets_straddle_block_boundaries() {
    let dir = tempfile::tempdir().unwrap();
    let rows = common::make_rows(600, 340000, 9, 0xFACE);
    let opts = MapFileOptions {
        mode: MapMode::Block,
        codec: Codec::Deflate,
        block_size: 512, // a handful of rows per block
        index_interval: 10,
    };
    let (data, index) = write_file(dir.path(), "tiny-blocks", &rows, opts);
    let reader = MapFileReader::open(&data, &index).unwrap();
    // Every single row must be reachable, wherever its block starts.
    for (k, v) in &rows {
        assert_eq!(reader.get(k).unwrap().as_deref(), Some(v.as_slice()));
    }
}
