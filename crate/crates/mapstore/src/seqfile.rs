//! Flat sequential key/value files.
//!
//! This is the interchange format between the ingestion side (which writes
//! sorted event rows) and the import step (which converts them into indexed
//! map files). Layout: a 4-byte magic, then zero or more rows of
//! `[key_len u32 LE][key][value_len u32 LE][value]`, then a 12-byte footer
//! `[FOOTER_MAGIC u32][row_count u64]`. The footer lets a reader distinguish
//! a cleanly finished file from a truncated one.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{MapStoreError, Result};

pub const SEQ_MAGIC: u32 = 0x5145_5331; // "1SEQ" on the wire (little-endian)
const FOOTER_MAGIC: u32 = 0x5145_5346; // "FSEQ"

/// Streaming writer for a sequential file.
pub struct SeqWriter {
    out: BufWriter<File>,
    rows: u64,
}

impl SeqWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(&SEQ_MAGIC.to_le_bytes())?;
        Ok(SeqWriter { out, rows: 0 })
    }

    pub fn append(&mut self, key: &[u8], value: &[u8]) -> Result<()> {
        self.out.write_all(&(key.len() as u32).to_le_bytes())?;
        self.out.write_all(key)?;
        self.out.write_all(&(value.len() as u32).to_le_bytes())?;
        self.out.write_all(value)?;
        self.rows += 1;
        Ok(())
    }

    pub fn rows_written(&self) -> u64 {
        self.rows
    }

    /// Writes the footer and flushes. Returns the number of rows written.
    pub fn finish(mut self) -> Result<u64> {
        self.out.write_all(&FOOTER_MAGIC.to_le_bytes())?;
        self.out.write_all(&self.rows.to_le_bytes())?;
        self.out.flush()?;
        self.out.get_ref().sync_all()?;
        Ok(self.rows)
    }
}

/// Streaming reader; yields `(key, value)` rows in file order.
pub struct SeqReader {
    input: BufReader<File>,
    path: String,
    expected_rows: u64,
    seen_rows: u64,
    done: bool,
}

impl SeqReader {
    pub fn open(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let mut input = BufReader::new(file);
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(|_| MapStoreError::Corrupt {
            path: path.display().to_string(),
            detail: "file too short for magic".into(),
        })?;
        if u32::from_le_bytes(magic) != SEQ_MAGIC {
            return Err(MapStoreError::Corrupt {
                path: path.display().to_string(),
                detail: format!("bad magic {:#010x}", u32::from_le_bytes(magic)),
            });
        }
        // Pull the expected row count from the footer up front so truncation
        // is reported even if the caller stops iterating early.
        let len = std::fs::metadata(path)?.len();
        let expected_rows = if len >= 16 {
            use std::io::Seek;
            let mut tail = File::open(path)?;
            tail.seek(std::io::SeekFrom::End(-12))?;
            let mut buf = [0u8; 12];
            tail.read_exact(&mut buf)?;
            if u32::from_le_bytes(buf[0..4].try_into().unwrap()) == FOOTER_MAGIC {
                u64::from_le_bytes(buf[4..12].try_into().unwrap())
            } else {
                return Err(MapStoreError::Corrupt {
                    path: path.display().to_string(),
                    detail: "missing footer (file truncated?)".into(),
                });
            }
        } else {
            return Err(MapStoreError::Corrupt {
                path: path.display().to_string(),
                detail: "file too short for footer".into(),
            });
        };
        Ok(SeqReader {
            input,
            path: path.display().to_string(),
            expected_rows,
            seen_rows: 0,
            done: false,
        })
    }

    pub fn expected_rows(&self) -> u64 {
        self.expected_rows
    }

    fn corrupt(&self, detail: &str) -> MapStoreError {
        MapStoreError::Corrupt {
            path: self.path.clone(),
            detail: detail.into(),
        }
    }

    fn read_next(&mut self) -> Result<Option<(Vec<u8>, Vec<u8>)>> {
        if self.done {
            return Ok(None);
        }
        let mut len_buf = [0u8; 4];
        self.input
            .read_exact(&mut len_buf)
            .map_err(|_| self.corrupt("truncated row header"))?;
        let first = u32::from_le_bytes(len_buf);
        if first == FOOTER_MAGIC && self.seen_rows == self.expected_rows {
            self.done = true;
            return Ok(None);
        }
        let key_len = first as usize;
        if key_len > 1 << 20 {
            return Err(self.corrupt("implausible key length"));
        }
        let mut key = vec![0u8; key_len];
        self.input
            .read_exact(&mut key)
            .map_err(|_| self.corrupt("truncated key"))?;
        self.input
            .read_exact(&mut len_buf)
            .map_err(|_| self.corrupt("truncated value length"))?;
        let val_len = u32::from_le_bytes(len_buf) as usize;
        if val_len > 1 << 26 {
            return Err(self.corrupt("implausible value length"));
        }
        let mut value = vec![0u8; val_len];
        self.input
            .read_exact(&mut value)
            .map_err(|_| self.corrupt("truncated value"))?;
        self.seen_rows += 1;
        Ok(Some((key, value)))
    }
}

impl Iterator for SeqReader {
    type Item = Result<(Vec<u8>, Vec<u8>)>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.read_next() {
            Ok(Some(row)) => Some(Ok(row)),
            Ok(None) => None,
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}
