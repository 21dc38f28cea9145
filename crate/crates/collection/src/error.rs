use thiserror::Error;

/// Errors raised across the indexing pipeline: producers, the supervisor,
/// and consumers.
#[derive(Debug, Error)]
pub enum CollectionError {
    #[error("corrupt input file {path}: {detail}")]
    CorruptInput { path: String, detail: String },

    #[error("no object store accepted the output: {detail}")]
    AllStoresUnavailable { detail: String },

    #[error("broker unreachable after {attempts} attempts: {detail}")]
    BrokerUnreachable { attempts: u32, detail: String },

    #[error("fetch failure for {uri}: {detail}")]
    FetchFailure { uri: String, detail: String },

    #[error("partial object {uri}: {detail}")]
    PartialObject { uri: String, detail: String },

    #[error("bad configuration: {0}")]
    BadConfig(String),

    #[error(transparent)]
    Model(#[from] ei_model::ModelError),

    #[error(transparent)]
    Spb(#[from] ei_spb::SpbError),

    #[error(transparent)]
    Transport(#[from] ei_transport::TransportError),

    #[error(transparent)]
    MapStore(#[from] ei_mapstore::MapStoreError),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CollectionError>;
