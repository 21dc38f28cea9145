//! The stored per-event row: a 12-byte big-endian key (run, event) and a
//! CSV-encoded value carrying the event record, trigger words included.
//!
//! Value columns, in order:
//! `dataset_id, lbn, bcid, timestamp_ms, is_sim, weight, sim_process_id,
//! smk, l1_psk, hlt_psk, guid0:ptr, guid1, guid2, chains,
//! l1_mask, l2_mask, hlt_mask`
//!
//! - `is_sim` is `0`/`1`; `weight` uses the shortest decimal form that
//!   round-trips the stored f32. No column's alphabet can contain a comma,
//!   so the encoding needs no quoting.
//! - `guid0` carries the record ordinal of the event inside its indexed file
//!   after a colon; the upstream provenance GUIDs follow plain, empty when
//!   absent.
//! - `chains` joins decoded trigger-chain names with `;` (empty until a menu
//!   decode pass fills it in).
//! - Each mask column is the concatenation of its 64-bit words as fixed
//!   16-digit lowercase hex in word order; empty means no words. The raw
//!   words ride along so chain decoding can run (and re-run against a fixed
//!   menu) after ingestion, directly on stored rows.
//!
//! The separate event-lookup table stores a trimmed value per
//! `(event, dataset)`: `dataset_name, guid0:ptr, guid1, guid2` — everything
//! a picking client needs, with the trigger payload deliberately left out.

use ei_model::{
    BitMask, DatasetName, EventKey, EventRecord, Guid, GuidRef, RefType, TriggerBlock,
};

use crate::error::{MapStoreError, Result};

/// A fully parsed stored event row.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRow {
    pub key: EventKey,
    pub dataset_id: u32,
    pub lbn: u32,
    pub bcid: u16,
    pub timestamp_ms: u64,
    pub is_simulated: bool,
    pub event_weight: f32,
    pub sim_process_id: u32,
    pub smk: u32,
    pub l1_psk: u32,
    pub hlt_psk: u32,
    pub locations: Vec<GuidRef>,
    pub chains: Vec<String>,
    pub l1_words: Vec<u64>,
    pub l2_words: Vec<u64>,
    pub hlt_words: Vec<u64>,
}

fn words_to_hex(words: &[u64]) -> String {
    let mut out = String::with_capacity(words.len() * 16);
    for w in words {
        out.push_str(&format!("{w:016x}"));
    }
    out
}

fn hex_to_words(s: &str) -> Result<Vec<u64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    if s.len() % 16 != 0 {
        return Err(MapStoreError::MalformedRow(format!(
            "mask hex length {} not a multiple of 16",
            s.len()
        )));
    }
    let mut words = Vec::with_capacity(s.len() / 16);
    for chunk in s.as_bytes().chunks(16) {
        let text = std::str::from_utf8(chunk)
            .map_err(|_| MapStoreError::MalformedRow("mask hex is not ascii".into()))?;
        let w = u64::from_str_radix(text, 16)
            .map_err(|_| MapStoreError::MalformedRow(format!("bad mask hex {text:?}")))?;
        words.push(w);
    }
    Ok(words)
}

fn refs_to_columns(refs: &[GuidRef]) -> Result<[String; 3]> {
    let mut cols = [String::new(), String::new(), String::new()];
    for r in refs {
        let slot = r.ref_type.code() as usize;
        if slot >= 3 || !cols[slot].is_empty() {
            return Err(MapStoreError::MalformedRow("bad location roles".into()));
        }
        cols[slot] = if slot == 0 {
            format!("{}:{}", r.guid, r.internal_pointer)
        } else {
            r.guid.to_string()
        };
    }
    if cols[0].is_empty() {
        return Err(MapStoreError::MalformedRow("missing indexed location".into()));
    }
    Ok(cols)
}

fn refs_from_columns(cols: &[&str]) -> Result<Vec<GuidRef>> {
    let mut refs = Vec::new();
    for (slot, text) in cols.iter().enumerate() {
        if text.is_empty() {
            continue;
        }
        let (guid_text, pointer) = if slot == 0 {
            let (g, p) = text.split_once(':').ok_or_else(|| {
                MapStoreError::MalformedRow("indexed location missing offset".into())
            })?;
            let p: u64 = p
                .parse()
                .map_err(|_| MapStoreError::MalformedRow("bad location offset".into()))?;
            (g, p)
        } else {
            (*text, 0)
        };
        refs.push(GuidRef {
            ref_type: RefType::from_code(slot as u8)
                .ok_or_else(|| MapStoreError::MalformedRow("bad location role".into()))?,
            guid: guid_text
                .parse::<Guid>()
                .map_err(|e| MapStoreError::MalformedRow(e.to_string()))?,
            internal_pointer: pointer,
        });
    }
    if refs.is_empty() {
        return Err(MapStoreError::MalformedRow("row has no locations".into()));
    }
    Ok(refs)
}

impl EventRow {
    /// Converts a full event record into its stored form. The free-text
    /// conditions tag stays on the wire format only — the stored schema is
    /// fixed columns.
    pub fn from_record(record: &EventRecord) -> Result<Self> {
        record.validate().map_err(MapStoreError::Model)?;
        Ok(EventRow {
            key: record.key,
            dataset_id: record.dataset_id,
            lbn: record.lbn,
            bcid: record.bcid,
            timestamp_ms: record.timestamp_ms,
            is_simulated: record.is_simulated,
            event_weight: record.event_weight,
            sim_process_id: record.sim_process_id,
            smk: record.trigger.smk,
            l1_psk: record.trigger.l1_psk,
            hlt_psk: record.trigger.hlt_psk,
            locations: record.locations.clone(),
            chains: record.trigger.decoded_chains.clone(),
            l1_words: record.trigger.l1.words().to_vec(),
            l2_words: record.trigger.l2.words().to_vec(),
            hlt_words: record.trigger.hlt.words().to_vec(),
        })
    }

    pub fn to_record(&self) -> EventRecord {
        EventRecord {
            key: self.key,
            dataset_id: self.dataset_id,
            lbn: self.lbn,
            bcid: self.bcid,
            timestamp_ms: self.timestamp_ms,
            is_simulated: self.is_simulated,
            event_weight: self.event_weight,
            sim_process_id: self.sim_process_id,
            lhc_conditions: String::new(),
            trigger: TriggerBlock {
                smk: self.smk,
                l1_psk: self.l1_psk,
                hlt_psk: self.hlt_psk,
                l1: BitMask::from_words(self.l1_words.clone()),
                l2: BitMask::from_words(self.l2_words.clone()),
                hlt: BitMask::from_words(self.hlt_words.clone()),
                decoded_chains: self.chains.clone(),
            },
            locations: self.locations.clone(),
        }
    }

    pub fn encoded_key(&self) -> [u8; 12] {
        self.key.encode()
    }

    /// Serializes the value columns (the key travels separately).
    pub fn to_value(&self) -> Result<Vec<u8>> {
        let guid_cols = refs_to_columns(&self.locations)?;
        let line = format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.dataset_id,
            self.lbn,
            self.bcid,
            self.timestamp_ms,
            u8::from(self.is_simulated),
            self.event_weight,
            self.sim_process_id,
            self.smk,
            self.l1_psk,
            self.hlt_psk,
            guid_cols[0],
            guid_cols[1],
            guid_cols[2],
            self.chains.join(";"),
            words_to_hex(&self.l1_words),
            words_to_hex(&self.l2_words),
            words_to_hex(&self.hlt_words),
        );
        Ok(line.into_bytes())
    }

    pub fn parse(key_bytes: &[u8], value: &[u8]) -> Result<Self> {
        let key = EventKey::decode(key_bytes).map_err(MapStoreError::Model)?;
        let text = std::str::from_utf8(value)
            .map_err(|_| MapStoreError::MalformedRow("value is not utf-8".into()))?;
        let cols: Vec<&str> = text.split(',').collect();
        if cols.len() != 17 {
            return Err(MapStoreError::MalformedRow(format!(
                "expected 17 columns, found {}",
                cols.len()
            )));
        }
        let uint = |i: usize, what: &str| -> Result<u64> {
            cols[i]
                .parse::<u64>()
                .map_err(|_| MapStoreError::MalformedRow(format!("bad {what}: {:?}", cols[i])))
        };
        let is_simulated = match cols[4] {
            "0" => false,
            "1" => true,
            other => {
                return Err(MapStoreError::MalformedRow(format!(
                    "bad simulation flag {other:?}"
                )))
            }
        };
        let event_weight: f32 = cols[5]
            .parse()
            .map_err(|_| MapStoreError::MalformedRow(format!("bad weight {:?}", cols[5])))?;
        let chains = if cols[13].is_empty() {
            Vec::new()
        } else {
            cols[13].split(';').map(str::to_owned).collect()
        };
        Ok(EventRow {
            key,
            dataset_id: uint(0, "dataset id")? as u32,
            lbn: uint(1, "lbn")? as u32,
            bcid: uint(2, "bcid")? as u16,
            timestamp_ms: uint(3, "timestamp")?,
            is_simulated,
            event_weight,
            sim_process_id: uint(6, "process id")? as u32,
            smk: uint(7, "smk")? as u32,
            l1_psk: uint(8, "l1 prescale key")? as u32,
            hlt_psk: uint(9, "hlt prescale key")? as u32,
            locations: refs_from_columns(&[cols[10], cols[11], cols[12]])?,
            chains,
            l1_words: hex_to_words(cols[14])?,
            l2_words: hex_to_words(cols[15])?,
            hlt_words: hex_to_words(cols[16])?,
        })
    }

    pub fn indexed_guid(&self) -> Guid {
        self.locations[0].guid
    }

    pub fn has_no_masks(&self) -> bool {
        self.l1_words.iter().all(|w| *w == 0)
            && self.l2_words.iter().all(|w| *w == 0)
            && self.hlt_words.iter().all(|w| *w == 0)
    }
}

/// One parsed row of the all-datasets event-lookup table.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupRow {
    pub key: EventKey,
    pub dataset_id: u32,
    pub dataset: DatasetName,
    pub locations: Vec<GuidRef>,
}

/// Lookup keys order by event first, then dataset, so one event's rows across
/// all datasets are adjacent.
pub fn lookup_key(key: EventKey, dataset_id: u32) -> [u8; 16] {
    let mut out = [0u8; 16];
    out[..12].copy_from_slice(&key.encode());
    out[12..].copy_from_slice(&dataset_id.to_be_bytes());
    out
}

pub fn lookup_value(dataset: &DatasetName, locations: &[GuidRef]) -> Result<Vec<u8>> {
    let guid_cols = refs_to_columns(locations)?;
    Ok(format!(
        "{},{},{},{}",
        dataset, guid_cols[0], guid_cols[1], guid_cols[2]
    )
    .into_bytes())
}

pub fn parse_lookup_row(key_bytes: &[u8], value: &[u8]) -> Result<LookupRow> {
    if key_bytes.len() != 16 {
        return Err(MapStoreError::MalformedRow(format!(
            "lookup key length {} != 16",
            key_bytes.len()
        )));
    }
    let key = EventKey::decode(&key_bytes[..12]).map_err(MapStoreError::Model)?;
    let dataset_id = u32::from_be_bytes(key_bytes[12..16].try_into().unwrap());
    let text = std::str::from_utf8(value)
        .map_err(|_| MapStoreError::MalformedRow("lookup value is not utf-8".into()))?;
    let cols: Vec<&str> = text.split(',').collect();
    if cols.len() != 4 {
        return Err(MapStoreError::MalformedRow(format!(
            "expected 4 lookup columns, found {}",
            cols.len()
        )));
    }
    let dataset = DatasetName::parse(cols[0]).map_err(MapStoreError::Model)?;
    Ok(LookupRow {
        key,
        dataset_id,
        dataset,
        locations: refs_from_columns(&[cols[1], cols[2], cols[3]])?,
    })
}
