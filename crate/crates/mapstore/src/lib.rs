//! Event storage: sorted, compressed per-dataset map files with sparse
//! indexes, a catalog of everything stored, an all-datasets event-lookup
//! table, an operation journal, and the import pipeline that turns finished
//! sequential files into queryable datasets.

mod error;
mod kvstore;
mod mapfile;
mod row;
mod seqfile;
mod store;

pub use error::{MapStoreError, Result};
pub use kvstore::KvTable;
pub use mapfile::{
    Codec, MapFileOptions, MapFileReader, MapFileSet, MapFileWriter, MapMode, DEFAULT_BLOCK_SIZE,
    DEFAULT_INDEX_INTERVAL,
};
pub use row::{lookup_key, lookup_value, parse_lookup_row, EventRow, LookupRow};
pub use seqfile::{SeqReader, SeqWriter, SEQ_MAGIC};
pub use store::{
    CatalogEntry, DuplicateNotice, EntryKind, EntryStatus, EventMatches, EventStore, ImportOptions,
    ImportReport, JournalEntry, LookupFilters, COMPLETION_LIST_NAME,
};
