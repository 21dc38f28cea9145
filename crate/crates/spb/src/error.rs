use thiserror::Error;

/// Errors raised while encoding or decoding binary streams.
#[derive(Debug, Error)]
pub enum SpbError {
    #[error("bad stream magic: found {found:#010x}")]
    BadMagic { found: u32 },

    #[error("truncated stream: {context}")]
    TruncatedFrame { context: &'static str },

    #[error("unknown message type {0}")]
    UnknownType(u16),

    #[error("unsupported version {version} for message type {msg_type}")]
    UnsupportedVersion { msg_type: u16, version: u16 },

    #[error("field overflow: {0}")]
    FieldOverflow(String),

    #[error("malformed {msg} payload: {detail}")]
    MalformedPayload { msg: &'static str, detail: String },

    #[error("stream structure violation: {0}")]
    Structure(String),

    #[error("decompression failure: {0}")]
    Decompress(String),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl SpbError {
    /// Classify an i/o error seen while reading through the decompressor:
    /// clean EOF mid-frame means truncation, invalid data means a corrupt
    /// container, everything else is passed through.
    pub(crate) fn from_read(err: std::io::Error, context: &'static str) -> SpbError {
        match err.kind() {
            std::io::ErrorKind::UnexpectedEof => SpbError::TruncatedFrame { context },
            std::io::ErrorKind::InvalidData | std::io::ErrorKind::InvalidInput => {
                SpbError::Decompress(err.to_string())
            }
            _ => SpbError::Io(err),
        }
    }
}
