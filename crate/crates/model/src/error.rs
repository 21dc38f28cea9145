use thiserror::Error;

/// Errors raised while parsing or validating core domain values.
#[derive(Debug, Error)]
pub enum ModelError {
    #[error("malformed GUID {text:?}: {reason}")]
    MalformedGuid { text: String, reason: &'static str },

    #[error("malformed dataset name {text:?}: {reason}")]
    MalformedName { text: String, reason: String },

    #[error("malformed event key: expected 12 bytes, got {len}")]
    MalformedKey { len: usize },

    #[error("registry line {line_no}: {reason}")]
    MalformedRegistry { line_no: usize, reason: String },

    #[error("unknown dataset {name:?}")]
    UnknownDataset { name: String },

    #[error("invalid event record: {reason}")]
    InvalidRecord { reason: String },

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
