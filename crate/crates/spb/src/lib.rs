//! Compact binary stream format for indexing payloads.
//!
//! A stream is a gzip container whose uncompressed form is a 4-byte
//! little-endian magic number followed by framed messages. Each frame is two
//! little-endian 32-bit words — `(message_type << 16) | version` and the
//! payload length — followed by the payload bytes. A well-formed stream
//! carries exactly one header frame first and one trailer frame last, with
//! zero or more file groups in between; each group is bracketed by
//! begin/end frames, announces at least one trigger menu before its first
//! event, and emits a fresh menu whenever the configuration key changes.

mod error;
mod frame;
mod message;
mod payload;
mod stream;

pub use error::SpbError;
pub use frame::{Frame, MsgType, CURRENT_VERSION, SPB_MAGIC};
pub use message::{BeginGuid, EndGuid, Header, Message, Trailer, TriggerMenu};
pub use payload::{decode_event, encode_event};
pub use stream::{
    read_stream, scan_frames, write_stream, SpbReader, SpbWriter, StructureChecker,
};

pub type Result<T> = std::result::Result<T, SpbError>;
