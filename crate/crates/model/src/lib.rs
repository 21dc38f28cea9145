//! Core domain types for the event catalogue: file identifiers, event keys,
//! dataset names, event records with trigger information, and the dataset
//! registry that drives validation.

mod dataset;
mod error;
mod event;
mod guid;
mod key;
mod registry;
mod trigger;

pub use dataset::DatasetName;
pub use error::ModelError;
pub use event::{EventRecord, GuidRef, RefType, MAX_GUID_REFS};
pub use key::ENCODED_KEY_LEN;
pub use guid::Guid;
pub use key::EventKey;
pub use registry::{Registry, RegistryEntry, RegistryFile, RegistryStatus};
pub use trigger::{BitMask, TriggerBlock};

pub type Result<T> = std::result::Result<T, ModelError>;
