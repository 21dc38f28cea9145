use thiserror::Error;

/// Errors surfaced by the storage layer.
#[derive(Debug, Error)]
pub enum MapStoreError {
    /// A writer was handed keys that go backwards.
    #[error("unsorted input at row {position}: key {next:?} sorts before {prev:?}")]
    UnsortedInput {
        position: u64,
        prev: Vec<u8>,
        next: Vec<u8>,
    },

    /// A file failed its whole-file checksum or structural validation.
    #[error("corrupt file {path}: {detail}")]
    Corrupt { path: String, detail: String },

    /// Stored checksum disagreed with the bytes on disk during verification.
    #[error("checksum mismatch for {path}")]
    ChecksumMismatch { path: String },

    /// A catalog entry with this name is already live.
    #[error("catalog conflict: {name} already has a live entry")]
    CatalogConflict { name: String },

    /// The named catalog entry does not exist.
    #[error("unknown catalog entry: {name}")]
    UnknownEntry { name: String },

    /// The dataset is not listed in the completion list next to its input file.
    #[error("dataset {dataset} is not present in the completion list")]
    NotValidated { dataset: String },

    /// A stored row could not be parsed back into its typed form.
    #[error("malformed row: {0}")]
    MalformedRow(String),

    #[error(transparent)]
    Model(#[from] ei_model::ModelError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MapStoreError>;
