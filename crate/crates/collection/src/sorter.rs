//! External merge sort for key/value rows under a fixed memory budget.
//!
//! Rows accumulate in memory until the budget is hit, then spill to a sorted
//! run file on disk. Finishing merges all runs with a binary heap, yielding
//! rows in ascending key order. Equal keys come back in insertion order, so
//! the downstream first-wins deduplication keeps the earliest row pushed.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::path::PathBuf;

use ei_mapstore::{SeqReader, SeqWriter};

use crate::error::Result;

/// Per-row bookkeeping overhead added to the budget accounting, so that many
/// tiny rows still trigger spills at a sane memory ceiling.
const ROW_OVERHEAD: usize = 48;

pub struct ExternalSorter {
    budget_bytes: usize,
    held_bytes: usize,
    rows: Vec<(Vec<u8>, Vec<u8>)>,
    runs: Vec<PathBuf>,
    work_dir: PathBuf,
    pushed: u64,
}

impl ExternalSorter {
    /// `work_dir` is created if needed and removed when sorting completes.
    pub fn new(budget_bytes: usize, work_dir: PathBuf) -> ExternalSorter {
        ExternalSorter {
            budget_bytes: budget_bytes.max(1),
            held_bytes: 0,
            rows: Vec::new(),
            runs: Vec::new(),
            work_dir,
            pushed: 0,
        }
    }

    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, key: Vec<u8>, value: Vec<u8>) -> Result<()> {
        self.held_bytes += key.len() + value.len() + ROW_OVERHEAD;
        self.rows.push((key, value));
        self.pushed += 1;
        if self.held_bytes >= self.budget_bytes {
            self.spill()?;
        }
        Ok(())
    }

    fn spill(&mut self) -> Result<()> {
        if self.rows.is_empty() {
            return Ok(());
        }
        std::fs::create_dir_all(&self.work_dir)?;
        // Stable sort preserves push order among equal keys within the run;
        // across runs the run index breaks ties the same way.
        self.rows.sort_by(|a, b| a.0.cmp(&b.0));
        let path = self.work_dir.join(format!("run_{:04}.seq", self.runs.len()));
        let mut writer = SeqWriter::create(&path)?;
        for (key, value) in self.rows.drain(..) {
            writer.append(&key, &value)?;
        }
        writer.finish()?;
        self.held_bytes = 0;
        self.runs.push(path);
        Ok(())
    }

    /// Sort everything pushed so far and return the rows in key order.
    pub fn finish(mut self) -> Result<SortedRows> {
        if self.runs.is_empty() {
            self.rows.sort_by(|a, b| a.0.cmp(&b.0));
            return Ok(SortedRows {
                inner: Inner::Memory {
                    rows: std::mem::take(&mut self.rows).into_iter(),
                },
            });
        }
        self.spill()?;
        let mut readers = Vec::with_capacity(self.runs.len());
        for path in &self.runs {
            readers.push(SeqReader::open(path)?);
        }
        let mut heap = BinaryHeap::with_capacity(readers.len());
        for (idx, reader) in readers.iter_mut().enumerate() {
            if let Some(row) = reader.next() {
                let (key, value) = row?;
                heap.push(Reverse((key, idx, value)));
            }
        }
        Ok(SortedRows {
            inner: Inner::Merge {
                readers,
                heap,
                cleanup: WorkDirCleanup {
                    dir: self.work_dir.clone(),
                },
            },
        })
    }
}

/// Removes the spill directory once the merge is dropped.
struct WorkDirCleanup {
    dir: PathBuf,
}

impl Drop for WorkDirCleanup {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.dir);
    }
}

/// Rows in ascending key order, either straight from memory or merged from
/// spill runs on disk.
pub struct SortedRows {
    inner: Inner,
}

enum Inner {
    Memory {
        rows: std::vec::IntoIter<(Vec<u8>, Vec<u8>)>,
    },
    Merge {
        readers: Vec<SeqReader>,
        // Reverse((key, run_index, value)) makes the max-heap a min-heap on
        // (key, run_index): the earliest run wins ties, preserving push order.
        heap: BinaryHeap<Reverse<(Vec<u8>, usize, Vec<u8>)>>,
        #[allow(dead_code)]
        cleanup: WorkDirCleanup,
    },
}

impl Iterator for SortedRows {
    type Item = Result<(Vec<u8>, Vec<u8>)>;

    fn next(&mut self) -> Option<Self::Item> {
        match &mut self.inner {
            Inner::Memory { rows } => rows.next().map(Ok),
            Inner::Merge { readers, heap, .. } => {
                let Reverse((key, idx, value)) = heap.pop()?;
                if let Some(row) = readers[idx].next() {
                    match row {
                        Ok((next_key, next_value)) => {
                            heap.push(Reverse((next_key, idx, next_value)))
                        }
                        Err(e) => return Some(Err(e.into())),
                    }
                }
                Some(Ok((key, value)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn collect(rows: SortedRows) -> Vec<(Vec<u8>, Vec<u8>)> {
        rows.map(|r| r.unwrap()).collect()
    }

    #[test]
    fn in_memory_sort_orders_by_key() {
        let dir = tempfile::tempdir().unwrap();
        let mut sorter = ExternalSorter::new(1 << 20, dir.path().join("work"));
        for key in [5u8, 1, 9, 3] {
            sorter.push(vec![key], vec![key + 100]).unwrap();
        }
        let rows = collect(sorter.finish().unwrap());
        let keys: Vec<u8> = rows.iter().map(|(k, _)| k[0]).collect();
        assert_eq!(keys, vec![1, 3, 5, 9]);
    }

    #[test]
    fn spilling_merge_matches_plain_sort() {
        let dir = tempfile::tempdir().unwrap();
        // A tiny budget forces many spill runs.
        let mut sorter = ExternalSorter::new(600, dir.path().join("work"));
        let mut expected = Vec::new();
        let mut x: u64 = 0x2545_f491_4f6c_dd1d;
        for _ in 0..500 {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            let key = x.to_be_bytes().to_vec();
            let value = vec![(x & 0xff) as u8; 5];
            expected.push((key.clone(), value.clone()));
            sorter.push(key, value).unwrap();
        }
        assert_eq!(sorter.pushed(), 500);
        expected.sort();
        let rows = collect(sorter.finish().unwrap());
        assert_eq!(rows, expected);
    }

    #[test]
    fn equal_keys_keep_push_order_across_runs() {
        let dir = tempfile::tempdir().unwrap();
        let mut sorter = ExternalSorter::new(120, dir.path().join("work"));
        for i in 0u8..12 {
            sorter.push(b"same-key".to_vec(), vec![i]).unwrap();
        }
        let rows = collect(sorter.finish().unwrap());
        let order: Vec<u8> = rows.iter().map(|(_, v)| v[0]).collect();
        assert_eq!(order, (0..12).collect::<Vec<u8>>());
    }

    #[test]
    fn work_dir_is_removed_after_merge() {
        let dir = tempfile::tempdir().unwrap();
        let work = dir.path().join("work");
        let mut sorter = ExternalSorter::new(60, work.clone());
        for i in 0u8..20 {
            sorter.push(vec![i], vec![i]).unwrap();
        }
        let rows = sorter.finish().unwrap();
        assert!(work.exists(), "spill runs should live in the work dir");
        let n = collect(rows).len();
        assert_eq!(n, 20);
        assert!(!work.exists(), "work dir should be cleaned up after the merge");
    }
}
