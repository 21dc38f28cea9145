//! Read-side reports over the mirror: overlap matrices, duplicate and
//! missing-event breakdowns, per-BCID and per-LBN profiles, and the
//! dataset detail table.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use ei_model::{EventKey, Guid};

use crate::error::{AnalyticsError, Result};
use crate::store::AnalyticsStore;
use crate::tables::{DatasetRow, LbnCount};

pub const DEFAULT_OVERLAP_THRESHOLD_PCT: f64 = 70.0;

/// How an overlap percentage is normalized: by the row dataset's own size,
/// or by the smaller of the pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OverlapAlgorithm {
    AOverLeft,
    #[default]
    AOverMin,
}

impl fmt::Display for OverlapAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OverlapAlgorithm::AOverLeft => "A_OVER_LEFT",
            OverlapAlgorithm::AOverMin => "A_OVER_MIN",
        })
    }
}

impl FromStr for OverlapAlgorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "A_OVER_LEFT" => Ok(OverlapAlgorithm::AOverLeft),
            "A_OVER_MIN" => Ok(OverlapAlgorithm::AOverMin),
            other => Err(format!("unknown overlap algorithm {other:?}")),
        }
    }
}

/// One axis entry of an overlap matrix.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct OverlapAxis {
    pub dataset_id: u32,
    pub dataset: String,
    pub n_events: u64,
}

/// One off-diagonal matrix cell, in row-major orientation: the percentage
/// is the row dataset's overlap with the column dataset.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct OverlapCell {
    pub common_events: u64,
    pub pct: f64,
    /// Strictly above the report threshold.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct OverlapMatrix {
    pub run: u32,
    pub algorithm: String,
    pub threshold_pct: f64,
    pub datasets: Vec<OverlapAxis>,
    /// Square, indexed `[row][column]`; `None` on the diagonal.
    pub cells: Vec<Vec<Option<OverlapCell>>>,
}

impl OverlapMatrix {
    pub fn cell(&self, row_id: u32, col_id: u32) -> Option<&OverlapCell> {
        let row = self.datasets.iter().position(|d| d.dataset_id == row_id)?;
        let col = self.datasets.iter().position(|d| d.dataset_id == col_id)?;
        self.cells[row][col].as_ref()
    }
}

/// One copy of a duplicated event: the kept row carries ordinal 0, the
/// diverted extras count upward from 1.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct DuplicateCopy {
    pub ordinal: u16,
    pub lbn: u32,
    pub guids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct DuplicatedEvent {
    pub run: u32,
    pub event: u64,
    pub copies: Vec<DuplicateCopy>,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct DuplicateReport {
    pub dataset_id: u32,
    pub dataset: String,
    pub n_extra_copies: u64,
    pub n_duplicated_events: u64,
    /// Duplicated events grouped by the LBN of their kept copy.
    pub by_lbn: BTreeMap<u32, Vec<DuplicatedEvent>>,
}

impl DuplicateReport {
    pub fn is_empty(&self) -> bool {
        self.by_lbn.is_empty()
    }
}

/// A maximal contiguous run of event numbers present in the reference but
/// absent from the dataset.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct MissingRange {
    pub first_event: u64,
    pub last_event: u64,
    pub n_events: u64,
    /// Reference LBNs whose event-number span intersects this range.
    pub probable_lbns: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct MissingEventReport {
    pub dataset_id: u32,
    pub reference_id: u32,
    pub run: u32,
    /// Record count the upstream bookkeeping claimed for the dataset.
    pub expected_upstream: u64,
    /// Rows the conversion delivered: stored events plus diverted copies.
    pub consumed: u64,
    pub stored_unique: u64,
    pub reference_unique: u64,
    pub n_missing: u64,
    pub ranges: Vec<MissingRange>,
}

/// Per-LBN profile: the materialized aggregate row joined with the
/// distribution of events over the files (GUIDs) covering that LBN.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct LbnProfile {
    pub lbn: u32,
    pub n_events: u64,
    pub n_unique_guids: u64,
    pub min_event: u64,
    pub max_event: u64,
    /// Events per indexed-file GUID within this LBN; a block split across a
    /// file boundary lists every file it spans.
    pub guid_events: Vec<(String, u64)>,
}

/// Prefix filters over the dataset detail table; empty filter matches all.
#[derive(Clone, Debug, Default)]
pub struct DatasetFilter {
    pub run: Option<u32>,
    pub project_prefix: Option<String>,
    pub stream_prefix: Option<String>,
    pub data_format_prefix: Option<String>,
}

impl DatasetFilter {
    pub fn matches(&self, row: &DatasetRow) -> bool {
        if self.run.is_some_and(|r| r != row.run) {
            return false;
        }
        let prefix_ok = |want: &Option<String>, have: &str| {
            want.as_deref().is_none_or(|p| have.starts_with(p))
        };
        prefix_ok(&self.project_prefix, &row.project)
            && prefix_ok(&self.stream_prefix, &row.stream)
            && prefix_ok(&self.data_format_prefix, &row.data_format)
    }
}

impl AnalyticsStore {
    /// Pairwise overlap matrix of one run from the materialized common-event
    /// counts, with percentages per the chosen normalization and cells
    /// strictly above the threshold flagged.
    pub fn dataset_overlaps(
        &self,
        run: u32,
        algorithm: OverlapAlgorithm,
        threshold_pct: f64,
    ) -> Result<OverlapMatrix> {
        let rows: Vec<DatasetRow> = self
            .datasets()?
            .into_iter()
            .filter(|r| r.run == run)
            .collect();
        let datasets: Vec<OverlapAxis> = rows
            .iter()
            .map(|r| OverlapAxis {
                dataset_id: r.dataset_id,
                dataset: r.dataset_name(),
                n_events: r.n_events,
            })
            .collect();
        let mut common: BTreeMap<(u32, u32), u64> = BTreeMap::new();
        for o in self.overlaps_for_run(run)? {
            common.insert((o.dataset_id_a, o.dataset_id_b), o.common_events);
            common.insert((o.dataset_id_b, o.dataset_id_a), o.common_events);
        }
        let mut cells = vec![vec![None; datasets.len()]; datasets.len()];
        for (i, a) in datasets.iter().enumerate() {
            for (j, b) in datasets.iter().enumerate() {
                if i == j {
                    continue;
                }
                let n = common
                    .get(&(a.dataset_id, b.dataset_id))
                    .copied()
                    .unwrap_or(0);
                let denom = match algorithm {
                    OverlapAlgorithm::AOverLeft => a.n_events,
                    OverlapAlgorithm::AOverMin => a.n_events.min(b.n_events),
                };
                let pct = if denom == 0 {
                    0.0
                } else {
                    100.0 * n as f64 / denom as f64
                };
                cells[i][j] = Some(OverlapCell {
                    common_events: n,
                    pct,
                    flagged: pct > threshold_pct,
                });
            }
        }
        Ok(OverlapMatrix {
            run,
            algorithm: algorithm.to_string(),
            threshold_pct,
            datasets,
            cells,
        })
    }

    /// Every duplicated key of one dataset with all of its copies — the kept
    /// row and the diverted extras — grouped by the LBN where the
    /// duplication occurred.
    pub fn duplicate_report(&self, dataset_id: u32) -> Result<DuplicateReport> {
        let row = self
            .dataset_row(dataset_id)?
            .ok_or(AnalyticsError::UnknownPartition { dataset_id })?;
        let extras = self.duplicates(dataset_id)?;
        let kept: BTreeMap<EventKey, crate::tables::EventEntry> = self
            .events(dataset_id)?
            .into_iter()
            .map(|e| (e.key, e))
            .collect();
        let mut by_key: BTreeMap<EventKey, Vec<DuplicateCopy>> = BTreeMap::new();
        for d in &extras {
            let copies = by_key.entry(d.event.key).or_insert_with(|| {
                let first = &kept[&d.event.key];
                vec![DuplicateCopy {
                    ordinal: 0,
                    lbn: first.lbn,
                    guids: guid_texts(first.guids().map(|(_, g)| g)),
                }]
            });
            copies.push(DuplicateCopy {
                ordinal: d.ordinal,
                lbn: d.event.lbn,
                guids: guid_texts(d.event.guids().map(|(_, g)| g)),
            });
        }
        let mut by_lbn: BTreeMap<u32, Vec<DuplicatedEvent>> = BTreeMap::new();
        for (key, copies) in by_key {
            by_lbn
                .entry(copies[0].lbn)
                .or_default()
                .push(DuplicatedEvent {
                    run: key.run,
                    event: key.event,
                    copies,
                });
        }
        Ok(DuplicateReport {
            dataset_id,
            dataset: row.dataset_name(),
            n_extra_copies: extras.len() as u64,
            n_duplicated_events: extras
                .iter()
                .map(|d| d.event.key)
                .collect::<BTreeSet<_>>()
                .len() as u64,
            by_lbn,
        })
    }

    /// Events the reference holds but the dataset lacks, as maximal
    /// contiguous event-number ranges attributed to the reference's LBNs,
    /// together with the per-stage counts that localize the loss.
    pub fn missing_event_report(
        &self,
        dataset_id: u32,
        reference_id: u32,
    ) -> Result<MissingEventReport> {
        let row = self
            .dataset_row(dataset_id)?
            .ok_or(AnalyticsError::UnknownPartition { dataset_id })?;
        let reference = self
            .dataset_row(reference_id)?
            .ok_or_else(|| AnalyticsError::NoReference {
                detail: format!("no dataset with id {reference_id}"),
            })?;
        if reference.run != row.run {
            return Err(AnalyticsError::NoReference {
                detail: format!(
                    "reference covers run {}, dataset covers run {}",
                    reference.run, row.run
                ),
            });
        }
        let have: HashSet<EventKey> = self.events(dataset_id)?.iter().map(|e| e.key).collect();
        let mut missing: Vec<u64> = self
            .events(reference_id)?
            .iter()
            .map(|e| e.key)
            .filter(|k| !have.contains(k))
            .map(|k| k.event)
            .collect();
        missing.sort_unstable();
        missing.dedup();
        let ref_lbns = self.lbn_counts(reference_id)?;
        let ranges = contiguous_ranges(&missing)
            .into_iter()
            .map(|(first, last)| MissingRange {
                first_event: first,
                last_event: last,
                n_events: last - first + 1,
                probable_lbns: lbns_covering(&ref_lbns, first, last),
            })
            .collect();
        Ok(MissingEventReport {
            dataset_id,
            reference_id,
            run: row.run,
            expected_upstream: row.expected_upstream,
            consumed: row.n_events + row.n_duplicates,
            stored_unique: row.n_events,
            reference_unique: reference.n_events,
            n_missing: missing.len() as u64,
            ranges,
        })
    }

    /// Histogram of stored events per bunch-crossing id.
    pub fn count_by_bcid(&self, dataset_id: u32) -> Result<BTreeMap<u16, u64>> {
        let mut hist = BTreeMap::new();
        for e in self.events(dataset_id)? {
            *hist.entry(e.bcid).or_insert(0u64) += 1;
        }
        Ok(hist)
    }

    /// Per-LBN profile joining the materialized aggregates with the
    /// per-file event distribution inside each block.
    pub fn count_by_lbn(&self, dataset_id: u32) -> Result<Vec<LbnProfile>> {
        let counts = self.lbn_counts(dataset_id)?;
        let mut per_guid: BTreeMap<u32, BTreeMap<Guid, u64>> = BTreeMap::new();
        for e in self.events(dataset_id)? {
            if let Some(g) = e.guid_refs[0] {
                *per_guid.entry(e.lbn).or_default().entry(g).or_insert(0) += 1;
            }
        }
        Ok(counts
            .into_iter()
            .map(|c| {
                let guid_events = per_guid
                    .remove(&c.lbn)
                    .unwrap_or_default()
                    .into_iter()
                    .map(|(g, n)| (g.to_text(), n))
                    .collect();
                LbnProfile {
                    lbn: c.lbn,
                    n_events: c.n_events,
                    n_unique_guids: c.n_unique_guids,
                    min_event: c.min_event,
                    max_event: c.max_event,
                    guid_events,
                }
            })
            .collect())
    }

    /// Dataset detail rows passing the filter, newest version first inside
    /// each (run, stream, data format) group.
    pub fn dataset_report(&self, filter: &DatasetFilter) -> Result<Vec<DatasetRow>> {
        let mut rows: Vec<DatasetRow> = self
            .datasets()?
            .into_iter()
            .filter(|r| filter.matches(r))
            .collect();
        rows.sort_by(|a, b| {
            (a.run, &a.stream, &a.data_format, a.rank).cmp(&(b.run, &b.stream, &b.data_format, b.rank))
        });
        Ok(rows)
    }
}

fn guid_texts(guids: impl Iterator<Item = Guid>) -> Vec<String> {
    guids.map(|g| g.to_text()).collect()
}

fn contiguous_ranges(sorted: &[u64]) -> Vec<(u64, u64)> {
    let mut out: Vec<(u64, u64)> = Vec::new();
    for &e in sorted {
        match out.last_mut() {
            Some((_, last)) if *last + 1 == e => *last = e,
            _ => out.push((e, e)),
        }
    }
    out
}

fn lbns_covering(counts: &[LbnCount], first: u64, last: u64) -> Vec<u32> {
    counts
        .iter()
        .filter(|c| c.min_event <= last && c.max_event >= first)
        .map(|c| c.lbn)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_merge_adjacent_events_only() {
        assert_eq!(
            contiguous_ranges(&[1, 2, 3, 7, 9, 10]),
            vec![(1, 3), (7, 7), (9, 10)]
        );
        assert!(contiguous_ranges(&[]).is_empty());
    }

    #[test]
    fn algorithm_names_round_trip() {
        for alg in [OverlapAlgorithm::AOverLeft, OverlapAlgorithm::AOverMin] {
            assert_eq!(alg.to_string().parse::<OverlapAlgorithm>().unwrap(), alg);
        }
        assert!("A_OVER_NOTHING".parse::<OverlapAlgorithm>().is_err());
        assert_eq!(OverlapAlgorithm::default(), OverlapAlgorithm::AOverMin);
    }

    #[test]
    fn lbn_attribution_uses_span_intersection() {
        let counts = vec![
            LbnCount {
                dataset_id: 1,
                lbn: 3,
                n_events: 10,
                n_unique_guids: 1,
                min_event: 100,
                max_event: 149,
            },
            LbnCount {
                dataset_id: 1,
                lbn: 4,
                n_events: 10,
                n_unique_guids: 1,
                min_event: 150,
                max_event: 199,
            },
        ];
        assert_eq!(lbns_covering(&counts, 100, 109), vec![3]);
        assert_eq!(lbns_covering(&counts, 140, 160), vec![3, 4]);
        assert_eq!(lbns_covering(&counts, 200, 210), Vec::<u32>::new());
    }
}
