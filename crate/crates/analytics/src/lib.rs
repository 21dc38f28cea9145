//! Relational mirror of the event store for bookkeeping analytics:
//! per-dataset event partitions imported from validated conversion output,
//! duplicate and overlap ledgers, materialized per-LBN aggregates, and the
//! reports built on top of them.

mod error;
mod reports;
mod store;
mod tables;

pub use error::{AnalyticsError, Result};
pub use reports::{
    DatasetFilter, DuplicateCopy, DuplicateReport, DuplicatedEvent, LbnProfile,
    MissingEventReport, MissingRange, OverlapAlgorithm, OverlapAxis, OverlapCell, OverlapMatrix,
    DEFAULT_OVERLAP_THRESHOLD_PCT,
};
pub use store::{
    AnalyticsStore, DroppedPartition, ImportOutcome, ImportPolicy, ImportSource, ImportSummary,
};
pub use tables::{
    guid_type_labels, DatasetRow, DuplicateEntry, EventEntry, LbnCount, OverlapRow,
    DUPLICATE_ROW_LEN, EVENT_ROW_LEN,
};
