use thiserror::Error;

#[derive(Debug, Error)]
pub enum TriggerError {
    #[error("menu source line {line}: {detail}")]
    MalformedMenuSource { line: usize, detail: String },

    #[error("duplicate counter {counter} for configuration key {smk} level {level}")]
    DuplicateCounter {
        smk: u32,
        level: String,
        counter: u32,
    },

    #[error("configuration key unresolvable: {detail}")]
    UnknownSmk { detail: String },

    #[error("dataset {dataset} carries no trigger data: {detail}")]
    NoTriggerData { dataset: String, detail: String },

    #[error(transparent)]
    MapStore(#[from] ei_mapstore::MapStoreError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TriggerError>;
