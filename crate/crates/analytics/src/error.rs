use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    /// Staged rows failed a consistency check; nothing was committed.
    #[error("verification failed for {dataset}: {reason}")]
    VerificationFailure { dataset: String, reason: String },

    #[error("{dataset} is already imported; drop its partition first")]
    AlreadyImported { dataset: String },

    #[error("{dataset} has no live map-store entry")]
    SourceNotLive { dataset: String },

    #[error("{dataset} is not listed in the completion control file")]
    NotValidated { dataset: String },

    #[error("no partition for dataset id {dataset_id}")]
    UnknownPartition { dataset_id: u32 },

    #[error("no usable reference: {detail}")]
    NoReference { detail: String },

    #[error("malformed table file {path}: {detail}")]
    MalformedTable { path: String, detail: String },

    #[error(transparent)]
    MapStore(#[from] ei_mapstore::MapStoreError),

    #[error(transparent)]
    Model(#[from] ei_model::ModelError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AnalyticsError>;
