use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ModelError;

/// Identity of one event: run number plus event number.
///
/// The 12-byte encoding is big-endian `run` followed by big-endian `event`,
/// so lexicographic order over encoded keys equals numeric order over
/// `(run, event)`. Sorted stores rely on that equivalence.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventKey {
    pub run: u32,
    pub event: u64,
}

pub const ENCODED_KEY_LEN: usize = 12;

impl EventKey {
    pub fn new(run: u32, event: u64) -> Self {
        EventKey { run, event }
    }

    pub fn encode(&self) -> [u8; ENCODED_KEY_LEN] {
        let mut out = [0u8; ENCODED_KEY_LEN];
        out[..4].copy_from_slice(&self.run.to_be_bytes());
        out[4..].copy_from_slice(&self.event.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() != ENCODED_KEY_LEN {
            return Err(ModelError::MalformedKey { len: bytes.len() });
        }
        let run = u32::from_be_bytes(bytes[..4].try_into().unwrap());
        let event = u64::from_be_bytes(bytes[4..].try_into().unwrap());
        Ok(EventKey { run, event })
    }
}

impl fmt::Display for EventKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.run, self.event)
    }
}

impl fmt::Debug for EventKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EventKey({}/{})", self.run, self.event)
    }
}
