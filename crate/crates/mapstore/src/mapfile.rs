//! Sorted key-value data files with a sparse companion index.
//!
//! A map file is a pair of files. The data file holds every row in key
//! order; the index file holds every `index_interval`-th key together with
//! the data-file offset of the entry (record mode) or containing block
//! (block mode) so a reader can seek close to any key and scan forward.
//!
//! Data file layout (all integers little-endian; keys are opaque bytes that
//! already sort correctly, e.g. big-endian event keys):
//!
//! ```text
//! [magic u32][version u8][mode u8][codec u8][pad u8][block_size u32][index_interval u32]
//! entries...
//! meta: [n_rows u64][first_key_len u32][first_key][last_key_len u32][last_key]
//! trailer: [meta_offset u64][crc32 u32][trailer_magic u32]
//! ```
//!
//! - Record mode entry: `[key_len u32][key][stored_len u32][stored_value]`
//!   where the value alone is compressed when the codec says so.
//! - Block mode entry: `[first_key_len u32][first_key][uncomp_len u32]
//!   [comp_len u32][payload]` where the payload is a compressed run of
//!   `(key_len,key,val_len,val)` rows totalling at most `block_size`
//!   uncompressed bytes. The uncompressed first key up front makes every
//!   block self-describing.
//!
//! The crc32 covers every byte of the file before the crc field itself, and
//! both files carry one; readers verify them on open, so truncation or bit
//! flips are detected before any row is served. A found row is additionally
//! checked against the requested key, so a stale index can never cause a
//! wrong-row answer.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use flate2::write::{DeflateDecoder, DeflateEncoder};
use flate2::Compression;

use crate::error::{MapStoreError, Result};

pub const DATA_MAGIC: u32 = 0x3146_504D; // "MPF1"
pub const INDEX_MAGIC: u32 = 0x3149_504D; // "MPI1"
const TRAILER_MAGIC: u32 = 0x5446_504D; // "MPFT"
const FORMAT_VERSION: u8 = 1;

pub const DEFAULT_BLOCK_SIZE: u32 = 1 << 20;
pub const DEFAULT_INDEX_INTERVAL: u32 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MapMode {
    Record,
    Block,
}

impl MapMode {
    fn code(self) -> u8 {
        match self {
            MapMode::Record => 0,
            MapMode::Block => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(MapMode::Record),
            1 => Some(MapMode::Block),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Codec {
    None,
    Deflate,
}

impl Codec {
    fn code(self) -> u8 {
        match self {
            Codec::None => 0,
            Codec::Deflate => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Codec::None),
            1 => Some(Codec::Deflate),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MapFileOptions {
    pub mode: MapMode,
    pub codec: Codec,
    pub block_size: u32,
    pub index_interval: u32,
}

impl Default for MapFileOptions {
    fn default() -> Self {
        MapFileOptions {
            mode: MapMode::Block,
            codec: Codec::Deflate,
            block_size: DEFAULT_BLOCK_SIZE,
            index_interval: DEFAULT_INDEX_INTERVAL,
        }
    }
}

/// Summary of a written pair of files.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MapFileSet {
    pub data_path: PathBuf,
    pub index_path: PathBuf,
    pub mode: MapMode,
    pub codec: Codec,
    pub block_size: u32,
    pub index_interval: u32,
    pub n_rows: u64,
    pub first_key: Vec<u8>,
    pub last_key: Vec<u8>,
}

fn deflate(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::default());
    enc.write_all(bytes)?;
    Ok(enc.finish()?)
}

fn inflate(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let mut dec = DeflateDecoder::new(Vec::new());
    dec.write_all(bytes)
        .and_then(|_| dec.finish())
        .map_err(|e| MapStoreError::Corrupt {
            path: path.display().to_string(),
            detail: format!("bad compressed payload: {e}"),
        })
}

/// File writer that tracks the running checksum and offset.
struct CrcFile {
    out: BufWriter<File>,
    crc: crc32fast::Hasher,
    offset: u64,
}

impl CrcFile {
    fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        Ok(CrcFile {
            out: BufWriter::new(File::create(path)?),
            crc: crc32fast::Hasher::new(),
            offset: 0,
        })
    }

    fn write(&mut self, bytes: &[u8]) -> Result<()> {
        self.crc.update(bytes);
        self.out.write_all(bytes)?;
        self.offset += bytes.len() as u64;
        Ok(())
    }

    /// Writes `[crc][trailer_magic]` and syncs; consumes the writer.
    fn seal(mut self) -> Result<()> {
        let crc = self.crc.clone().finalize();
        self.out.write_all(&crc.to_le_bytes())?;
        self.out.write_all(&TRAILER_MAGIC.to_le_bytes())?;
        self.out.flush()?;
        self.out.get_ref().sync_all()?;
        Ok(())
    }
}

pub struct MapFileWriter {
    data: CrcFile,
    opts: MapFileOptions,
    data_path: PathBuf,
    index_path: PathBuf,
    index: Vec<(Vec<u8>, u64)>,
    n_rows: u64,
    prev_key: Option<Vec<u8>>,
    first_key: Vec<u8>,
    last_key: Vec<u8>,
    block: Vec<u8>,
    block_first_key: Option<Vec<u8>>,
    block_start: u64,
}

impl MapFileWriter {
    pub fn create(data_path: &Path, index_path: &Path, opts: MapFileOptions) -> Result<Self> {
        let mut data = CrcFile::create(data_path)?;
        data.write(&DATA_MAGIC.to_le_bytes())?;
        data.write(&[FORMAT_VERSION, opts.mode.code(), opts.codec.code(), 0])?;
        data.write(&opts.block_size.to_le_bytes())?;
        data.write(&opts.index_interval.to_le_bytes())?;
        Ok(MapFileWriter {
            data,
            opts,
            data_path: data_path.to_path_buf(),
            index_path: index_path.to_path_buf(),
            index: Vec::new(),
            n_rows: 0,
            prev_key: None,
            first_key: Vec::new(),
            last_key: Vec::new(),
            block: Vec::new(),
            block_first_key: None,
            block_start: 0,
        })
    }

    /// Appends one row. Keys must be non-decreasing; equal keys are legal so
    /// pre-deduplication staging files can pass through.
    pub fn append(&mut self, key: &[u8], value: &[u8]) -> Result<()> {
        if let Some(prev) = &self.prev_key {
            if key < prev.as_slice() {
                return Err(MapStoreError::UnsortedInput {
                    position: self.n_rows,
                    prev: prev.clone(),
                    next: key.to_vec(),
                });
            }
        }
        if self.n_rows == 0 {
            self.first_key = key.to_vec();
        }
        let entry_offset = match self.opts.mode {
            MapMode::Record => self.data.offset,
            MapMode::Block => {
                if self.block.is_empty() {
                    self.block_start = self.data.offset;
                    self.block_first_key = Some(key.to_vec());
                }
                self.block_start
            }
        };
        if self.n_rows % u64::from(self.opts.index_interval) == 0 {
            self.index.push((key.to_vec(), entry_offset));
        }
        match self.opts.mode {
            MapMode::Record => {
                let stored = match self.opts.codec {
                    Codec::None => value.to_vec(),
                    Codec::Deflate => deflate(value)?,
                };
                self.data.write(&(key.len() as u32).to_le_bytes())?;
                self.data.write(key)?;
                self.data.write(&(stored.len() as u32).to_le_bytes())?;
                self.data.write(&stored)?;
            }
            MapMode::Block => {
                self.block.extend_from_slice(&(key.len() as u32).to_le_bytes());
                self.block.extend_from_slice(key);
                self.block.extend_from_slice(&(value.len() as u32).to_le_bytes());
                self.block.extend_from_slice(value);
                if self.block.len() >= self.opts.block_size as usize {
                    self.flush_block()?;
                }
            }
        }
        self.prev_key = Some(key.to_vec());
        self.last_key = key.to_vec();
        self.n_rows += 1;
        Ok(())
    }

    fn flush_block(&mut self) -> Result<()> {
        if self.block.is_empty() {
            return Ok(());
        }
        let first_key = self
            .block_first_key
            .take()
            .expect("non-empty block has a first key");
        let uncomp_len = self.block.len() as u32;
        let payload = match self.opts.codec {
            Codec::None => std::mem::take(&mut self.block),
            Codec::Deflate => {
                let compressed = deflate(&self.block)?;
                self.block.clear();
                compressed
            }
        };
        self.data.write(&(first_key.len() as u32).to_le_bytes())?;
        self.data.write(&first_key)?;
        self.data.write(&uncomp_len.to_le_bytes())?;
        self.data.write(&(payload.len() as u32).to_le_bytes())?;
        self.data.write(&payload)?;
        Ok(())
    }

    pub fn rows_written(&self) -> u64 {
        self.n_rows
    }

    pub fn finish(mut self) -> Result<MapFileSet> {
        self.flush_block()?;
        let meta_offset = self.data.offset;
        self.data.write(&self.n_rows.to_le_bytes())?;
        self.data.write(&(self.first_key.len() as u32).to_le_bytes())?;
        let first_key = self.first_key.clone();
        self.data.write(&first_key)?;
        self.data.write(&(self.last_key.len() as u32).to_le_bytes())?;
        let last_key = self.last_key.clone();
        self.data.write(&last_key)?;
        self.data.write(&meta_offset.to_le_bytes())?;
        self.data.seal()?;

        let mut index = CrcFile::create(&self.index_path)?;
        index.write(&INDEX_MAGIC.to_le_bytes())?;
        index.write(&[FORMAT_VERSION, 0, 0, 0])?;
        for (key, offset) in &self.index {
            index.write(&(key.len() as u32).to_le_bytes())?;
            index.write(key)?;
            index.write(&offset.to_le_bytes())?;
        }
        let meta_offset = index.offset;
        index.write(&self.n_rows.to_le_bytes())?;
        index.write(&(self.index.len() as u64).to_le_bytes())?;
        index.write(&[self.opts.mode.code(), self.opts.codec.code(), 0, 0])?;
        index.write(&self.opts.block_size.to_le_bytes())?;
        index.write(&self.opts.index_interval.to_le_bytes())?;
        index.write(&(self.first_key.len() as u32).to_le_bytes())?;
        index.write(&first_key)?;
        index.write(&(self.last_key.len() as u32).to_le_bytes())?;
        index.write(&last_key)?;
        index.write(&meta_offset.to_le_bytes())?;
        index.seal()?;

        Ok(MapFileSet {
            data_path: self.data_path,
            index_path: self.index_path,
            mode: self.opts.mode,
            codec: self.opts.codec,
            block_size: self.opts.block_size,
            index_interval: self.opts.index_interval,
            n_rows: self.n_rows,
            first_key: self.first_key,
            last_key: self.last_key,
        })
    }
}

/// Bounded forward reader over a byte range of the data file.
struct Cursor {
    input: BufReader<File>,
    pos: u64,
    end: u64,
    path: PathBuf,
}

impl Cursor {
    fn open(path: &Path, start: u64, end: u64) -> Result<Self> {
        let mut input = BufReader::new(File::open(path)?);
        input.seek(SeekFrom::Start(start))?;
        Ok(Cursor {
            input,
            pos: start,
            end,
            path: path.to_path_buf(),
        })
    }

    fn corrupt(&self, detail: impl Into<String>) -> MapStoreError {
        MapStoreError::Corrupt {
            path: self.path.display().to_string(),
            detail: detail.into(),
        }
    }

    fn done(&self) -> bool {
        self.pos >= self.end
    }

    fn read_u32(&mut self) -> Result<u32> {
        if self.pos + 4 > self.end {
            return Err(self.corrupt("entry overruns data region"));
        }
        let mut buf = [0u8; 4];
        self.input.read_exact(&mut buf)?;
        self.pos += 4;
        Ok(u32::from_le_bytes(buf))
    }

    fn read_bytes(&mut self, len: usize) -> Result<Vec<u8>> {
        if self.pos + len as u64 > self.end {
            return Err(self.corrupt("entry overruns data region"));
        }
        let mut buf = vec![0u8; len];
        self.input.read_exact(&mut buf)?;
        self.pos += len as u64;
        Ok(buf)
    }
}

/// Iterates `(key_len,key,val_len,val)` rows out of an uncompressed run.
fn walk_run(run: &[u8], path: &Path, mut f: impl FnMut(&[u8], &[u8]) -> Result<bool>) -> Result<bool> {
    let corrupt = |detail: &str| MapStoreError::Corrupt {
        path: path.display().to_string(),
        detail: detail.into(),
    };
    let mut at = 0usize;
    while at < run.len() {
        if at + 4 > run.len() {
            return Err(corrupt("run truncated in key length"));
        }
        let key_len = u32::from_le_bytes(run[at..at + 4].try_into().unwrap()) as usize;
        at += 4;
        if at + key_len + 4 > run.len() {
            return Err(corrupt("run truncated in key"));
        }
        let key = &run[at..at + key_len];
        at += key_len;
        let val_len = u32::from_le_bytes(run[at..at + 4].try_into().unwrap()) as usize;
        at += 4;
        if at + val_len > run.len() {
            return Err(corrupt("run truncated in value"));
        }
        let value = &run[at..at + val_len];
        at += val_len;
        if !f(key, value)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Verifies the trailer magic and whole-file checksum; returns the meta offset.
fn verify_file(path: &Path, expect_magic: u32) -> Result<u64> {
    let corrupt = |detail: String| MapStoreError::Corrupt {
        path: path.display().to_string(),
        detail,
    };
    let len = std::fs::metadata(path)?.len();
    if len < 24 {
        return Err(corrupt(format!("file too short ({len} bytes)")));
    }
    let mut file = File::open(path)?;
    file.seek(SeekFrom::Start(len - 16))?;
    let mut trailer = [0u8; 16];
    file.read_exact(&mut trailer)?;
    if u32::from_le_bytes(trailer[12..16].try_into().unwrap()) != TRAILER_MAGIC {
        return Err(corrupt("missing trailer (file truncated?)".into()));
    }
    let stored_crc = u32::from_le_bytes(trailer[8..12].try_into().unwrap());
    let meta_offset = u64::from_le_bytes(trailer[0..8].try_into().unwrap());

    file.seek(SeekFrom::Start(0))?;
    let mut hasher = crc32fast::Hasher::new();
    let mut remaining = len - 8; // everything before the crc field
    let mut chunk = vec![0u8; 1 << 16];
    let mut header_magic = None;
    while remaining > 0 {
        let take = remaining.min(chunk.len() as u64) as usize;
        file.read_exact(&mut chunk[..take])?;
        if header_magic.is_none() {
            header_magic = Some(u32::from_le_bytes(chunk[0..4].try_into().unwrap()));
        }
        hasher.update(&chunk[..take]);
        remaining -= take as u64;
    }
    if header_magic != Some(expect_magic) {
        return Err(corrupt("bad file magic".into()));
    }
    if hasher.finalize() != stored_crc {
        return Err(MapStoreError::ChecksumMismatch {
            path: path.display().to_string(),
        });
    }
    if meta_offset >= len - 16 {
        return Err(corrupt("meta offset out of range".into()));
    }
    Ok(meta_offset)
}

fn read_len_prefixed(bytes: &[u8], at: &mut usize, path: &Path) -> Result<Vec<u8>> {
    let corrupt = |detail: &str| MapStoreError::Corrupt {
        path: path.display().to_string(),
        detail: detail.into(),
    };
    if *at + 4 > bytes.len() {
        return Err(corrupt("meta truncated"));
    }
    let len = u32::from_le_bytes(bytes[*at..*at + 4].try_into().unwrap()) as usize;
    *at += 4;
    if *at + len > bytes.len() {
        return Err(corrupt("meta truncated"));
    }
    let out = bytes[*at..*at + len].to_vec();
    *at += len;
    Ok(out)
}

pub struct MapFileReader {
    set: MapFileSet,
    index: Vec<(Vec<u8>, u64)>,
    entries_start: u64,
    entries_end: u64,
}

impl MapFileReader {
    /// Opens and fully checksum-verifies a data/index pair.
    pub fn open(data_path: &Path, index_path: &Path) -> Result<Self> {
        let corrupt = |path: &Path, detail: &str| MapStoreError::Corrupt {
            path: path.display().to_string(),
            detail: detail.into(),
        };
        let data_meta_offset = verify_file(data_path, DATA_MAGIC)?;
        let mut header = [0u8; 16];
        {
            let mut f = File::open(data_path)?;
            f.read_exact(&mut header)?;
        }
        if header[4] != FORMAT_VERSION {
            return Err(corrupt(data_path, "unsupported format version"));
        }
        let mode = MapMode::from_code(header[5])
            .ok_or_else(|| corrupt(data_path, "unknown mode byte"))?;
        let codec = Codec::from_code(header[6])
            .ok_or_else(|| corrupt(data_path, "unknown codec byte"))?;
        let block_size = u32::from_le_bytes(header[8..12].try_into().unwrap());
        let index_interval = u32::from_le_bytes(header[12..16].try_into().unwrap());
        if index_interval == 0 {
            return Err(corrupt(data_path, "zero index interval"));
        }

        let data_len = std::fs::metadata(data_path)?.len();
        let meta_bytes = {
            let mut f = File::open(data_path)?;
            f.seek(SeekFrom::Start(data_meta_offset))?;
            let mut buf = vec![0u8; (data_len - 16 - data_meta_offset) as usize];
            f.read_exact(&mut buf)?;
            buf
        };
        if meta_bytes.len() < 8 {
            return Err(corrupt(data_path, "meta too short"));
        }
        let n_rows = u64::from_le_bytes(meta_bytes[0..8].try_into().unwrap());
        let mut at = 8usize;
        let first_key = read_len_prefixed(&meta_bytes, &mut at, data_path)?;
        let last_key = read_len_prefixed(&meta_bytes, &mut at, data_path)?;
        if at != meta_bytes.len() {
            return Err(corrupt(data_path, "trailing bytes after meta"));
        }

        let index_meta_offset = verify_file(index_path, INDEX_MAGIC)?;
        let index_bytes = std::fs::read(index_path)?;
        let meta = &index_bytes[index_meta_offset as usize..index_bytes.len() - 16];
        if meta.len() < 24 {
            return Err(corrupt(index_path, "index meta too short"));
        }
        let idx_rows = u64::from_le_bytes(meta[0..8].try_into().unwrap());
        let idx_entries = u64::from_le_bytes(meta[8..16].try_into().unwrap());
        let idx_mode = MapMode::from_code(meta[16])
            .ok_or_else(|| corrupt(index_path, "unknown mode byte"))?;
        let idx_codec = Codec::from_code(meta[17])
            .ok_or_else(|| corrupt(index_path, "unknown codec byte"))?;
        if idx_rows != n_rows || idx_mode != mode || idx_codec != codec {
            return Err(corrupt(index_path, "index does not match its data file"));
        }

        let mut index = Vec::with_capacity(idx_entries as usize);
        let mut at = 8usize; // past index header
        let entries_region = &index_bytes[..index_meta_offset as usize];
        for _ in 0..idx_entries {
            let key = read_len_prefixed(entries_region, &mut at, index_path)?;
            if at + 8 > entries_region.len() {
                return Err(corrupt(index_path, "index entry truncated"));
            }
            let offset = u64::from_le_bytes(entries_region[at..at + 8].try_into().unwrap());
            at += 8;
            if let Some((prev_key, prev_off)) = index.last() {
                if key < *prev_key || offset < *prev_off {
                    return Err(corrupt(index_path, "index entries out of order"));
                }
            }
            if offset >= data_meta_offset {
                return Err(corrupt(index_path, "index offset beyond data region"));
            }
            index.push((key, offset));
        }
        if at != entries_region.len() {
            return Err(corrupt(index_path, "trailing bytes after index entries"));
        }

        Ok(MapFileReader {
            set: MapFileSet {
                data_path: data_path.to_path_buf(),
                index_path: index_path.to_path_buf(),
                mode,
                codec,
                block_size,
                index_interval,
                n_rows,
                first_key,
                last_key,
            },
            index,
            entries_start: 16,
            entries_end: data_meta_offset,
        })
    }

    pub fn set(&self) -> &MapFileSet {
        &self.set
    }

    pub fn n_rows(&self) -> u64 {
        self.set.n_rows
    }

    /// The in-memory sparse index: `(key, data-file offset)` per entry.
    pub fn index_entries(&self) -> &[(Vec<u8>, u64)] {
        &self.index
    }

    /// Offset to start a forward scan for `key`: the greatest index entry at
    /// or before it.
    fn seek_offset(&self, key: &[u8]) -> u64 {
        let n_le = self.index.partition_point(|(k, _)| k.as_slice() <= key);
        if n_le == 0 {
            self.entries_start
        } else {
            self.index[n_le - 1].1
        }
    }

    /// Point lookup. Returns the first stored value for `key`, or `None`.
    pub fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        if self.set.n_rows == 0
            || key < self.set.first_key.as_slice()
            || key > self.set.last_key.as_slice()
        {
            return Ok(None);
        }
        let mut cursor = Cursor::open(&self.set.data_path, self.seek_offset(key), self.entries_end)?;
        match self.set.mode {
            MapMode::Record => {
                while !cursor.done() {
                    let key_len = cursor.read_u32()? as usize;
                    let entry_key = cursor.read_bytes(key_len)?;
                    let stored_len = cursor.read_u32()? as usize;
                    match entry_key.as_slice().cmp(key) {
                        std::cmp::Ordering::Less => {
                            let skip = stored_len as i64;
                            cursor.input.seek(SeekFrom::Current(skip))?;
                            cursor.pos += stored_len as u64;
                            if cursor.pos > cursor.end {
                                return Err(cursor.corrupt("entry overruns data region"));
                            }
                        }
                        std::cmp::Ordering::Equal => {
                            let stored = cursor.read_bytes(stored_len)?;
                            return Ok(Some(match self.set.codec {
                                Codec::None => stored,
                                Codec::Deflate => inflate(&stored, &self.set.data_path)?,
                            }));
                        }
                        std::cmp::Ordering::Greater => return Ok(None),
                    }
                }
                Ok(None)
            }
            MapMode::Block => {
                while !cursor.done() {
                    let fk_len = cursor.read_u32()? as usize;
                    let block_first = cursor.read_bytes(fk_len)?;
                    let uncomp_len = cursor.read_u32()? as usize;
                    let comp_len = cursor.read_u32()? as usize;
                    if block_first.as_slice() > key {
                        return Ok(None);
                    }
                    let payload = cursor.read_bytes(comp_len)?;
                    let run = match self.set.codec {
                        Codec::None => payload,
                        Codec::Deflate => inflate(&payload, &self.set.data_path)?,
                    };
                    if run.len() != uncomp_len {
                        return Err(cursor.corrupt(format!(
                            "block inflated to {} bytes, header says {}",
                            run.len(),
                            uncomp_len
                        )));
                    }
                    let mut found: Option<Vec<u8>> = None;
                    let mut past = false;
                    walk_run(&run, &self.set.data_path, |k, v| {
                        if k == key {
                            found = Some(v.to_vec());
                            return Ok(false);
                        }
                        if k > key {
                            past = true;
                            return Ok(false);
                        }
                        Ok(true)
                    })?;
                    if let Some(v) = found {
                        return Ok(Some(v));
                    }
                    if past {
                        return Ok(None);
                    }
                }
                Ok(None)
            }
        }
    }

    /// Batch point lookup; each requested key maps to its value or `None`.
    pub fn get_many(&self, keys: &[Vec<u8>]) -> Result<Vec<(Vec<u8>, Option<Vec<u8>>)>> {
        let mut out = Vec::with_capacity(keys.len());
        for key in keys {
            out.push((key.clone(), self.get(key)?));
        }
        Ok(out)
    }

    /// Streams every row in `[start, end)` of the entry region through `f`.
    /// `f` returns `false` to stop early.
    fn scan_region(
        &self,
        start: u64,
        end: u64,
        mut f: impl FnMut(&[u8], &[u8]) -> Result<bool>,
    ) -> Result<()> {
        let mut cursor = Cursor::open(&self.set.data_path, start, end)?;
        while !cursor.done() {
            match self.set.mode {
                MapMode::Record => {
                    let key_len = cursor.read_u32()? as usize;
                    let key = cursor.read_bytes(key_len)?;
                    let stored_len = cursor.read_u32()? as usize;
                    let stored = cursor.read_bytes(stored_len)?;
                    let value = match self.set.codec {
                        Codec::None => stored,
                        Codec::Deflate => inflate(&stored, &self.set.data_path)?,
                    };
                    if !f(&key, &value)? {
                        return Ok(());
                    }
                }
                MapMode::Block => {
                    let fk_len = cursor.read_u32()? as usize;
                    let _block_first = cursor.read_bytes(fk_len)?;
                    let uncomp_len = cursor.read_u32()? as usize;
                    let comp_len = cursor.read_u32()? as usize;
                    let payload = cursor.read_bytes(comp_len)?;
                    let run = match self.set.codec {
                        Codec::None => payload,
                        Codec::Deflate => inflate(&payload, &self.set.data_path)?,
                    };
                    if run.len() != uncomp_len {
                        return Err(cursor.corrupt("block length disagrees with header"));
                    }
                    if !walk_run(&run, &self.set.data_path, &mut f)? {
                        return Ok(());
                    }
                }
            }
        }
        Ok(())
    }

    /// Full sequential scan in key order. `f` returns `false` to stop early.
    pub fn scan(&self, f: impl FnMut(&[u8], &[u8]) -> Result<bool>) -> Result<()> {
        self.scan_region(self.entries_start, self.entries_end, f)
    }

    /// Collects every row matching `pred`, scanning fixed partitions of the
    /// file in parallel. Results come back in key order.
    pub fn par_scan(
        &self,
        pred: impl Fn(&[u8], &[u8]) -> bool + Sync,
    ) -> Result<Vec<(Vec<u8>, Vec<u8>)>> {
        use rayon::prelude::*;

        let mut starts: Vec<u64> = self.index.iter().map(|(_, o)| *o).collect();
        starts.dedup();
        if starts.is_empty() {
            return Ok(Vec::new());
        }
        let per_part = starts.len().div_ceil(rayon::current_num_threads().max(1));
        let mut bounds: Vec<(u64, u64)> = Vec::new();
        for chunk in starts.chunks(per_part.max(1)) {
            bounds.push((chunk[0], 0));
        }
        for i in 0..bounds.len() {
            bounds[i].1 = if i + 1 < bounds.len() {
                bounds[i + 1].0
            } else {
                self.entries_end
            };
        }
        let parts: Vec<Result<Vec<(Vec<u8>, Vec<u8>)>>> = bounds
            .into_par_iter()
            .map(|(start, end)| {
                let mut hits = Vec::new();
                self.scan_region(start, end, |k, v| {
                    if pred(k, v) {
                        hits.push((k.to_vec(), v.to_vec()));
                    }
                    Ok(true)
                })?;
                Ok(hits)
            })
            .collect();
        let mut out = Vec::new();
        for part in parts {
            out.extend(part?);
        }
        Ok(out)
    }
}
