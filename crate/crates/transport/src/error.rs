use thiserror::Error;

/// Errors raised by object-store backends and the message broker.
#[derive(Debug, Error)]
pub enum TransportError {
    #[error("malformed object uri {text:?}: {reason}")]
    MalformedUri { text: String, reason: String },

    #[error("object not found: {uri}")]
    NotFound { uri: String },

    #[error("object already exists: {uri}")]
    KeyExists { uri: String },

    #[error("backend {backend} unavailable: {detail}")]
    BackendUnavailable { backend: String, detail: String },

    #[error("invalid object key {key:?}: {reason}")]
    InvalidKey { key: String, reason: String },

    #[error("message of {size} bytes exceeds the {limit}-byte broker frame limit")]
    MessageTooLarge { size: usize, limit: usize },

    #[error("broker protocol error: {0}")]
    Protocol(String),

    #[error("broker rejected request: {0}")]
    Rejected(String),

    #[error("malformed control message: {0}")]
    MalformedMessage(#[from] serde_json::Error),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
