//! Row types and file formats of the relational mirror.
//!
//! Every table is a directory of sorted, DEFLATE-compressed row files. The
//! two big tables (events, event duplicates) use a fixed-width binary row —
//! GUIDs as raw 16 bytes instead of their 36-character text form — inside
//! one partition file per dataset id, so dropping a dataset is a file
//! delete. The small tables (datasets, per-LBN counts, per-run overlaps)
//! are compressed JSON-lines, one sorted row per line.

use std::io::{Read, Write};
use std::path::Path;

use ei_model::{EventKey, Guid};
use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{AnalyticsError, Result};

/// One catalog row per imported dataset, carrying the aggregates the
/// reports serve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub dataset_id: u32,
    pub project: String,
    pub run: u32,
    pub stream: String,
    pub prod_step: String,
    pub data_format: String,
    pub ami_tag: String,
    /// Format label of each GUID reference position, shared by every event
    /// of the dataset — stored once here instead of per event.
    pub guid_types: Vec<String>,
    pub flags: Vec<String>,
    /// Dataset creation timestamp; also the ranking key.
    pub created_ms: u64,
    /// Unique events stored in the events partition.
    pub n_events: u64,
    /// Record count the upstream bookkeeping claims (duplicate copies
    /// included).
    pub expected_upstream: u64,
    pub n_unique_guids: u64,
    /// Extra copies diverted to the duplicates partition.
    pub n_duplicates: u64,
    /// Distinct event keys that had at least one extra copy.
    pub n_unique_duplicates: u64,
    /// 1 = newest among datasets sharing (run, stream, data_format).
    pub rank: u32,
}

impl DatasetRow {
    pub fn dataset_name(&self) -> String {
        format!(
            "{}.{:08}.{}.{}.{}.{}",
            self.project, self.run, self.stream, self.prod_step, self.data_format, self.ami_tag
        )
    }
}

/// Fixed-width stored event: 67 bytes — key (12), lbn (4), bcid (2), a
/// presence byte, and three raw-16 GUID slots (absent slots zero-filled).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventEntry {
    pub key: EventKey,
    pub lbn: u32,
    pub bcid: u16,
    pub guid_refs: [Option<Guid>; 3],
}

pub const EVENT_ROW_LEN: usize = 12 + 4 + 2 + 1 + 48;
pub const DUPLICATE_ROW_LEN: usize = EVENT_ROW_LEN + 2;

impl EventEntry {
    pub fn present_refs(&self) -> u8 {
        let mut bits = 0u8;
        for (i, r) in self.guid_refs.iter().enumerate() {
            if r.is_some() {
                bits |= 1 << i;
            }
        }
        bits
    }

    pub fn guids(&self) -> impl Iterator<Item = (usize, Guid)> + '_ {
        self.guid_refs
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.map(|g| (i, g)))
    }

    fn encode_tail(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.lbn.to_be_bytes());
        out.extend_from_slice(&self.bcid.to_be_bytes());
        out.push(self.present_refs());
        for slot in &self.guid_refs {
            match slot {
                Some(g) => out.extend_from_slice(g.as_bytes()),
                None => out.extend_from_slice(&[0u8; 16]),
            }
        }
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.key.encode());
        self.encode_tail(out);
    }

    fn decode_tail(key: EventKey, ordinal: u16, bytes: &[u8]) -> Result<(Self, u16)> {
        let lbn = u32::from_be_bytes(bytes[..4].try_into().expect("sized"));
        let bcid = u16::from_be_bytes(bytes[4..6].try_into().expect("sized"));
        let flags = bytes[6];
        let mut guid_refs = [None, None, None];
        for (i, slot) in guid_refs.iter_mut().enumerate() {
            if flags & (1 << i) != 0 {
                let raw: [u8; 16] = bytes[7 + i * 16..7 + (i + 1) * 16]
                    .try_into()
                    .expect("sized");
                *slot = Some(Guid::from_bytes(raw));
            }
        }
        Ok((
            EventEntry {
                key,
                lbn,
                bcid,
                guid_refs,
            },
            ordinal,
        ))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != EVENT_ROW_LEN {
            return Err(bad_row_len(bytes.len(), EVENT_ROW_LEN));
        }
        let key = EventKey::decode(&bytes[..12])?;
        Ok(Self::decode_tail(key, 0, &bytes[12..])?.0)
    }
}

fn bad_row_len(found: usize, expected: usize) -> AnalyticsError {
    AnalyticsError::MalformedTable {
        path: "<row>".to_string(),
        detail: format!("row length {found} != {expected}"),
    }
}

/// One diverted extra copy of a duplicated event. Ordinal 1 is the first
/// extra copy; the kept copy (ordinal 0) lives in the events partition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DuplicateEntry {
    pub ordinal: u16,
    pub event: EventEntry,
}

impl DuplicateEntry {
    pub fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.event.key.encode());
        out.extend_from_slice(&self.ordinal.to_be_bytes());
        self.event.encode_tail(out);
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != DUPLICATE_ROW_LEN {
            return Err(bad_row_len(bytes.len(), DUPLICATE_ROW_LEN));
        }
        let key = EventKey::decode(&bytes[..12])?;
        let ordinal = u16::from_be_bytes(bytes[12..14].try_into().expect("sized"));
        let (event, ordinal) = EventEntry::decode_tail(key, ordinal, &bytes[14..])?;
        Ok(DuplicateEntry { ordinal, event })
    }
}

/// Per-LBN aggregates of one dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LbnCount {
    pub dataset_id: u32,
    pub lbn: u32,
    pub n_events: u64,
    pub n_unique_guids: u64,
    pub min_event: u64,
    pub max_event: u64,
}

/// Common-event count between two datasets of one run; ids ordered a < b.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub run: u32,
    pub dataset_id_a: u32,
    pub dataset_id_b: u32,
    pub common_events: u64,
}

const PARTITION_MAGIC: &[u8; 4] = b"EIOP";
const PARTITION_VERSION: u16 = 1;
const PARTITION_HEADER_LEN: usize = 4 + 2 + 2 + 4 + 8;

/// Writes a fixed-width binary partition: a plain 20-byte header followed
/// by one DEFLATE stream of `n_rows × row_len` bytes.
pub fn write_partition(
    path: &Path,
    dataset_id: u32,
    row_len: usize,
    rows: &[Vec<u8>],
) -> Result<()> {
    let mut header = Vec::with_capacity(PARTITION_HEADER_LEN);
    header.extend_from_slice(PARTITION_MAGIC);
    header.extend_from_slice(&PARTITION_VERSION.to_be_bytes());
    header.extend_from_slice(&(row_len as u16).to_be_bytes());
    header.extend_from_slice(&dataset_id.to_be_bytes());
    header.extend_from_slice(&(rows.len() as u64).to_be_bytes());

    let mut file = std::fs::File::create(path)?;
    file.write_all(&header)?;
    let mut enc = DeflateEncoder::new(&mut file, Compression::default());
    for row in rows {
        debug_assert_eq!(row.len(), row_len);
        enc.write_all(row)?;
    }
    enc.finish()?;
    file.sync_all()?;
    Ok(())
}

pub struct PartitionData {
    pub dataset_id: u32,
    pub row_len: usize,
    pub rows: Vec<Vec<u8>>,
    /// Compressed payload size on disk, header excluded.
    pub payload_bytes: u64,
}

/// Reads a binary partition back, verifying header and row count.
pub fn read_partition(path: &Path) -> Result<PartitionData> {
    let bad = |detail: String| AnalyticsError::MalformedTable {
        path: path.display().to_string(),
        detail,
    };
    let bytes = std::fs::read(path)?;
    if bytes.len() < PARTITION_HEADER_LEN || &bytes[..4] != PARTITION_MAGIC {
        return Err(bad("missing partition header".into()));
    }
    let version = u16::from_be_bytes(bytes[4..6].try_into().expect("sized"));
    if version != PARTITION_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let row_len = u16::from_be_bytes(bytes[6..8].try_into().expect("sized")) as usize;
    let dataset_id = u32::from_be_bytes(bytes[8..12].try_into().expect("sized"));
    let n_rows = u64::from_be_bytes(bytes[12..20].try_into().expect("sized"));

    let mut dec = DeflateDecoder::new(&bytes[PARTITION_HEADER_LEN..]);
    let mut plain = Vec::with_capacity((n_rows as usize).saturating_mul(row_len));
    dec.read_to_end(&mut plain)
        .map_err(|e| bad(format!("corrupt row stream: {e}")))?;
    if plain.len() != n_rows as usize * row_len {
        return Err(bad(format!(
            "expected {n_rows} rows of {row_len} bytes, found {} bytes",
            plain.len()
        )));
    }
    Ok(PartitionData {
        dataset_id,
        row_len,
        rows: plain.chunks(row_len).map(|c| c.to_vec()).collect(),
        payload_bytes: (bytes.len() - PARTITION_HEADER_LEN) as u64,
    })
}

/// Writes a small table as DEFLATE-compressed JSON lines.
pub fn write_json_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut enc = DeflateEncoder::new(file, Compression::default());
    for row in rows {
        serde_json::to_writer(&mut enc, row).map_err(std::io::Error::other)?;
        enc.write_all(b"\n")?;
    }
    let file = enc.finish()?;
    file.sync_all()?;
    Ok(())
}

/// Reads a DEFLATE-compressed JSON-lines table; a missing file is an empty
/// table.
pub fn read_json_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut text = String::new();
    DeflateDecoder::new(bytes.as_slice())
        .read_to_string(&mut text)
        .map_err(|e| AnalyticsError::MalformedTable {
            path: path.display().to_string(),
            detail: format!("corrupt row stream: {e}"),
        })?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            serde_json::from_str(line).map_err(|e| AnalyticsError::MalformedTable {
                path: path.display().to_string(),
                detail: format!("row {}: {e}", i + 1),
            })?,
        );
    }
    Ok(rows)
}

/// Format labels for the GUID reference positions of a dataset, derived
/// from its own data format: position 0 is the indexed file itself, later
/// positions its upstream formats.
pub fn guid_type_labels(data_format: &str) -> Vec<String> {
    if data_format.starts_with("DAOD") {
        vec![data_format.to_string(), "AOD".to_string(), "RAW".to_string()]
    } else if data_format == "AOD" {
        vec!["AOD".to_string(), "RAW".to_string()]
    } else {
        vec![data_format.to_string()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn guid(n: u8) -> Guid {
        Guid::from_bytes([n; 16])
    }

    #[test]
    fn event_rows_round_trip_through_the_fixed_layout() {
        let entry = EventEntry {
            key: EventKey::new(330079, 123_456_789),
            lbn: 42,
            bcid: 3011,
            guid_refs: [Some(guid(7)), None, Some(guid(9))],
        };
        let mut buf = Vec::new();
        entry.encode(&mut buf);
        assert_eq!(buf.len(), EVENT_ROW_LEN);
        assert_eq!(EventEntry::decode(&buf).unwrap(), entry);

        let dup = DuplicateEntry {
            ordinal: 3,
            event: entry,
        };
        let mut buf = Vec::new();
        dup.encode(&mut buf);
        assert_eq!(buf.len(), DUPLICATE_ROW_LEN);
        assert_eq!(DuplicateEntry::decode(&buf).unwrap(), dup);
    }

    #[test]
    fn encoded_rows_sort_like_their_keys() {
        let mut rows: Vec<Vec<u8>> = Vec::new();
        for (run, event) in [(2u32, 1u64), (1, 500), (1, 2), (3, 0)] {
            let mut buf = Vec::new();
            EventEntry {
                key: EventKey::new(run, event),
                lbn: 1,
                bcid: 1,
                guid_refs: [Some(guid(1)), None, None],
            }
            .encode(&mut buf);
            rows.push(buf);
        }
        rows.sort();
        let keys: Vec<(u32, u64)> = rows
            .iter()
            .map(|r| {
                let e = EventEntry::decode(r).unwrap();
                (e.key.run, e.key.event)
            })
            .collect();
        assert_eq!(keys, vec![(1, 2), (1, 500), (2, 1), (3, 0)]);
    }

    #[test]
    fn partition_files_round_trip_and_report_payload_size() {
        let tmp = tempfile::TempDir::new().unwrap();
        let path = tmp.path().join("7.part");
        let rows: Vec<Vec<u8>> = (0..100u64)
            .map(|i| {
                let mut buf = Vec::new();
                EventEntry {
                    key: EventKey::new(1, i),
                    lbn: (i / 10) as u32 + 1,
                    bcid: 100,
                    guid_refs: [Some(guid(1)), Some(guid(2)), None],
                }
                .encode(&mut buf);
                buf
            })
            .collect();
        write_partition(&path, 7, EVENT_ROW_LEN, &rows).unwrap();
        let data = read_partition(&path).unwrap();
        assert_eq!(data.dataset_id, 7);
        assert_eq!(data.rows, rows);
        // Highly repetitive rows compress far below their 67 raw bytes.
        assert!(data.payload_bytes < (rows.len() * EVENT_ROW_LEN) as u64 / 2);
    }

    #[test]
    fn truncated_partitions_are_rejected() {
        let tmp = tempfile::TempDir::new().unwrap();
        let path = tmp.path().join("9.part");
        let mut buf = Vec::new();
        EventEntry {
            key: EventKey::new(5, 5),
            lbn: 1,
            bcid: 1,
            guid_refs: [Some(guid(3)), None, None],
        }
        .encode(&mut buf);
        write_partition(&path, 9, EVENT_ROW_LEN, &vec![buf; 50]).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 5]).unwrap();
        assert!(matches!(
            read_partition(&path),
            Err(AnalyticsError::MalformedTable { .. })
        ));
    }

    #[test]
    fn reference_labels_follow_the_format_chain() {
        assert_eq!(guid_type_labels("RAW"), vec!["RAW"]);
        assert_eq!(guid_type_labels("EVNT"), vec!["EVNT"]);
        assert_eq!(guid_type_labels("AOD"), vec!["AOD", "RAW"]);
        assert_eq!(
            guid_type_labels("DAOD_PHYS"),
            vec!["DAOD_PHYS", "AOD", "RAW"]
        );
    }
}
