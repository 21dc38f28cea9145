//! A small embedded sorted key-value table: an in-memory ordered map backed
//! by a checksummed snapshot file plus a write-ahead log.
//!
//! This stands in for the server-side tables the catalogue, event-lookup and
//! journal data live in. It is deliberately simple: one writer, any number of
//! in-process readers, durability via `compact()` which rewrites the snapshot
//! atomically and truncates the log. A torn tail in the log (crash mid-append)
//! is ignored on load; everything before it replays.
//!
//! Snapshot layout: `[magic][count u64][(key_len,key,val_len,val)*][crc32]`,
//! all integers little-endian, the trailing crc32 covering every preceding
//! byte. Log records: `[op u8][key_len][key][val_len][val?][crc32 of record]`
//! with op 1 = put, 2 = delete.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::ops::Bound;
use std::path::{Path, PathBuf};

use crate::error::{MapStoreError, Result};

const SNAPSHOT_MAGIC: u32 = 0x3153_564B; // "KVS1"
const OP_PUT: u8 = 1;
const OP_DELETE: u8 = 2;

pub struct KvTable {
    dir: PathBuf,
    map: BTreeMap<Vec<u8>, Vec<u8>>,
    wal: BufWriter<File>,
}

impl KvTable {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut map = BTreeMap::new();
        let snapshot = dir.join("snapshot.kv");
        if snapshot.exists() {
            load_snapshot(&snapshot, &mut map)?;
        }
        let wal_path = dir.join("wal.log");
        if wal_path.exists() {
            replay_wal(&wal_path, &mut map)?;
        }
        let wal = BufWriter::new(OpenOptions::new().create(true).append(true).open(&wal_path)?);
        Ok(KvTable {
            dir: dir.to_path_buf(),
            map,
            wal,
        })
    }

    pub fn get(&self, key: &[u8]) -> Option<&[u8]> {
        self.map.get(key).map(Vec::as_slice)
    }

    pub fn contains(&self, key: &[u8]) -> bool {
        self.map.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn put(&mut self, key: &[u8], value: &[u8]) -> Result<()> {
        let mut record = Vec::with_capacity(9 + key.len() + value.len());
        record.push(OP_PUT);
        record.extend_from_slice(&(key.len() as u32).to_le_bytes());
        record.extend_from_slice(key);
        record.extend_from_slice(&(value.len() as u32).to_le_bytes());
        record.extend_from_slice(value);
        let crc = crc32fast::hash(&record);
        self.wal.write_all(&record)?;
        self.wal.write_all(&crc.to_le_bytes())?;
        self.map.insert(key.to_vec(), value.to_vec());
        Ok(())
    }

    pub fn delete(&mut self, key: &[u8]) -> Result<bool> {
        let mut record = Vec::with_capacity(5 + key.len());
        record.push(OP_DELETE);
        record.extend_from_slice(&(key.len() as u32).to_le_bytes());
        record.extend_from_slice(key);
        let crc = crc32fast::hash(&record);
        self.wal.write_all(&record)?;
        self.wal.write_all(&crc.to_le_bytes())?;
        Ok(self.map.remove(key).is_some())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[u8], &[u8])> {
        self.map.iter().map(|(k, v)| (k.as_slice(), v.as_slice()))
    }

    /// All entries with `lo <= key < hi`.
    pub fn range(&self, lo: &[u8], hi: &[u8]) -> impl Iterator<Item = (&[u8], &[u8])> {
        self.map
            .range::<[u8], _>((Bound::Included(lo), Bound::Excluded(hi)))
            .map(|(k, v)| (k.as_slice(), v.as_slice()))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.wal.flush()?;
        Ok(())
    }

    /// Rewrites the snapshot from the current map and empties the log.
    pub fn compact(&mut self) -> Result<()> {
        self.wal.flush()?;
        let tmp = self.dir.join("snapshot.tmp");
        {
            let mut out = BufWriter::new(File::create(&tmp)?);
            let mut hasher = crc32fast::Hasher::new();
            let write = |out: &mut BufWriter<File>, hasher: &mut crc32fast::Hasher,
                             bytes: &[u8]|
             -> Result<()> {
                hasher.update(bytes);
                out.write_all(bytes)?;
                Ok(())
            };
            write(&mut out, &mut hasher, &SNAPSHOT_MAGIC.to_le_bytes())?;
            write(&mut out, &mut hasher, &(self.map.len() as u64).to_le_bytes())?;
            for (k, v) in &self.map {
                write(&mut out, &mut hasher, &(k.len() as u32).to_le_bytes())?;
                write(&mut out, &mut hasher, k)?;
                write(&mut out, &mut hasher, &(v.len() as u32).to_le_bytes())?;
                write(&mut out, &mut hasher, v)?;
            }
            let crc = hasher.finalize();
            out.write_all(&crc.to_le_bytes())?;
            out.flush()?;
            out.get_ref().sync_all()?;
        }
        std::fs::rename(&tmp, self.dir.join("snapshot.kv"))?;
        let wal_path = self.dir.join("wal.log");
        self.wal = BufWriter::new(File::create(&wal_path)?);
        Ok(())
    }
}

impl Drop for KvTable {
    fn drop(&mut self) {
        let _ = self.wal.flush();
    }
}

fn load_snapshot(path: &Path, map: &mut BTreeMap<Vec<u8>, Vec<u8>>) -> Result<()> {
    let bytes = std::fs::read(path)?;
    let corrupt = |detail: &str| MapStoreError::Corrupt {
        path: path.display().to_string(),
        detail: detail.into(),
    };
    if bytes.len() < 16 {
        return Err(corrupt("snapshot too short"));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(MapStoreError::ChecksumMismatch {
            path: path.display().to_string(),
        });
    }
    if u32::from_le_bytes(body[0..4].try_into().unwrap()) != SNAPSHOT_MAGIC {
        return Err(corrupt("bad snapshot magic"));
    }
    let count = u64::from_le_bytes(body[4..12].try_into().unwrap());
    let mut at = 12usize;
    let read_chunk = |at: &mut usize| -> Result<Vec<u8>> {
        if *at + 4 > body.len() {
            return Err(corrupt("snapshot truncated"));
        }
        let len = u32::from_le_bytes(body[*at..*at + 4].try_into().unwrap()) as usize;
        *at += 4;
        if *at + len > body.len() {
            return Err(corrupt("snapshot truncated"));
        }
        let chunk = body[*at..*at + len].to_vec();
        *at += len;
        Ok(chunk)
    };
    for _ in 0..count {
        let key = read_chunk(&mut at)?;
        let value = read_chunk(&mut at)?;
        map.insert(key, value);
    }
    if at != body.len() {
        return Err(corrupt("trailing bytes after snapshot entries"));
    }
    Ok(())
}

fn replay_wal(path: &Path, map: &mut BTreeMap<Vec<u8>, Vec<u8>>) -> Result<()> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut at = 0usize;
    // Records replay until the first torn or corrupt one; the rest of the
    // file is a crash remnant and is dropped at the next compaction.
    'records: while at < bytes.len() {
        let start = at;
        if at + 5 > bytes.len() {
            break;
        }
        let op = bytes[at];
        let key_len = u32::from_le_bytes(bytes[at + 1..at + 5].try_into().unwrap()) as usize;
        at += 5;
        if at + key_len > bytes.len() {
            break;
        }
        let key = &bytes[at..at + key_len];
        at += key_len;
        let value = match op {
            OP_PUT => {
                if at + 4 > bytes.len() {
                    break 'records;
                }
                let val_len =
                    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
                at += 4;
                if at + val_len > bytes.len() {
                    break 'records;
                }
                let v = &bytes[at..at + val_len];
                at += val_len;
                Some(v)
            }
            OP_DELETE => None,
            _ => break 'records,
        };
        if at + 4 > bytes.len() {
            break;
        }
        let stored = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        if crc32fast::hash(&bytes[start..at]) != stored {
            break;
        }
        at += 4;
        match value {
            Some(v) => {
                map.insert(key.to_vec(), v.to_vec());
            }
            None => {
                map.remove(key);
            }
        }
    }
    Ok(())
}
