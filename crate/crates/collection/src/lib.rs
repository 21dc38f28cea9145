//! The collection pipeline: indexing jobs that turn input event files into
//! stored framed objects, a supervisor that tracks every dataset through
//! validation and consumption, and consumers that land validated data as
//! sorted files for the map store.

mod consumer;
mod error;
mod input;
mod producer;
mod runtime;
mod sorter;
mod supervisor;
mod validation;

pub use consumer::{consume_validation, ConsumerConfig, DEFAULT_SORT_BUDGET};
pub use error::{CollectionError, Result};
pub use input::{read_event_file, EventFileReader, InputEvent, InputFileHeader};
pub use producer::{
    build_router, build_store, index_file, object_key, run_producer_job, FileIndexSummary,
    JobConfig, JobOutcome, NoSleep, RealSleeper, ReconnectingSender, ReportChannel, Sleeper,
    OBJECT_BUCKET, REPORT_ATTEMPTS, REPORT_BACKOFF_START,
};
pub use runtime::{
    ack_message_id, run_consumer_loop, run_supervisor_loop, stable_hash64, BrokerNoticeSender,
    JournalEntry, NoticeSender, SharedStatus, SupervisorRuntime,
};
pub use sorter::{ExternalSorter, SortedRows};
pub use supervisor::{
    DatasetState, DatasetStatus, Effect, EmitOutcome, FileProgress, Notification, Phase,
    QuarantineRecord, SupervisorConfig, SupervisorCore, SupervisorInput,
};
pub use validation::{ValidationEntry, ValidationObject};
