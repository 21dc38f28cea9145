#![allow(dead_code)] // each test binary uses a different subset

use std::path::Path;

use ei_mapstore::{EventRow, SeqWriter};
use ei_model::{EventKey, Guid, GuidRef, RefType};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

pub const CHAIN_POOL: [&str; 8] = [
    "L1_EM22VHI",
    "L1_MU20",
    "HLT_e5_lhvloose",
    "HLT_e26_lhtight_ivarloose",
    "HLT_mu10",
    "HLT_mu26_ivarmedium",
    "HLT_j420",
    "HLT_xe110_pufit_L1XE50",
];

pub fn dataset_guid(seed: u64) -> Guid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bytes = [0u8; 16];
    rng.fill_bytes(&mut bytes);
    Guid(bytes)
}

/// Deterministic, realistically correlated event row for storage tests:
/// consecutive events of one run sharing a file GUID and trigger keys, with
/// slowly varying luminosity blocks and sparse trigger masks.
pub fn make_row(dataset_id: u32, run: u32, event: u64, ordinal: u64, seed: u64) -> EventRow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ event.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let n_chains = rng.gen_range(0..4usize);
    let mut chains: Vec<String> = CHAIN_POOL
        .choose_multiple(&mut rng, n_chains)
        .map(|s| s.to_string())
        .collect();
    chains.sort();
    EventRow {
        key: EventKey::new(run, event),
        dataset_id,
        lbn: (event / 50 + 1) as u32,
        bcid: (event % 3564) as u16 + 1,
        timestamp_ms: 1_495_000_000_000 + event * 25,
        is_simulated: false,
        event_weight: 1.0,
        sim_process_id: 0,
        smk: 2154,
        l1_psk: 260,
        hlt_psk: 325,
        locations: vec![
            GuidRef {
                ref_type: RefType::Indexed,
                guid: dataset_guid(seed),
                internal_pointer: ordinal,
            },
            GuidRef {
                ref_type: RefType::Upstream1,
                guid: dataset_guid(seed ^ 0xFEED),
                internal_pointer: 0,
            },
        ],
        chains,
        l1_words: vec![rng.gen::<u64>() & 0x8421_0842_1084_2108, rng.gen::<u64>() & 0x11],
        l2_words: vec![rng.gen::<u64>() & 0x0101_0101_0101_0101],
        hlt_words: vec![rng.gen::<u64>() & 0x0000_1111_0000_1111],
    }
}

/// Sorted `(key, value)` pairs for `n` consecutive events of one run.
pub fn make_rows(n: u64, run: u32, dataset_id: u32, seed: u64) -> Vec<(Vec<u8>, Vec<u8>)> {
    (0..n)
        .map(|i| {
            let row = make_row(dataset_id, run, i + 1, i, seed);
            (row.encoded_key().to_vec(), row.to_value().unwrap())
        })
        .collect()
}

/// Writes rows to `<dir>/<name>.seq` and lists `listed` in the completion
/// list beside it.
pub fn write_seq(dir: &Path, name: &str, rows: &[(Vec<u8>, Vec<u8>)], listed: &[&str]) -> std::path::PathBuf {
    let path = dir.join(format!("{name}.seq"));
    let mut w = SeqWriter::create(&path).unwrap();
    for (k, v) in rows {
        w.append(k, v).unwrap();
    }
    w.finish().unwrap();
    let list = listed.join("\n") + "\n";
    std::fs::write(dir.join("_validated.txt"), list).unwrap();
    path
}
