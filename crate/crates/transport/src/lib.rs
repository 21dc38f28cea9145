//! Shared infrastructure: the object store abstraction with local and
//! fallback backends, the durable message broker and its line protocol,
//! control-message schemas, monitoring metric records, and an injectable
//! clock for deterministic runs.

mod broker;
mod clock;
mod error;
mod messages;
mod metrics;
mod store;
mod uri;

pub use broker::{Broker, BrokerClient, BrokerConfig, BrokerHandle, Delivery, Subscriber};
pub use clock::{Clock, FixedClock, SystemClock};
pub use error::TransportError;
pub use messages::{
    AckStatus, ConsumptionAck, ControlBody, ControlMessage, DuplicateAlert, FileReport, JobReport,
    ValidationNotice, MAX_CONTROL_MESSAGE_BYTES,
};
pub use metrics::{read_module_metrics, MetricLevel, MetricRecord, MetricsWriter};
pub use store::{LocalStore, ObjectStore, PutReceipt, StoreRouter, UnavailableStore};
pub use uri::{Backend, ObjectUri};

pub type Result<T> = std::result::Result<T, TransportError>;
