use std::io::{Read, Write};

use crate::SpbError;

/// Magic number at the start of every uncompressed stream, written
/// little-endian (bytes `C7 C8 56 6E`).
pub const SPB_MAGIC: u32 = 0x6e56_c8c7;

/// The only frame version this codec writes or accepts.
pub const CURRENT_VERSION: u16 = 1;

/// Frame payload kinds, in wire order of a typical stream.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum MsgType {
    Header = 1,
    Trailer = 2,
    BeginGuid = 3,
    EndGuid = 4,
    TriggerMenu = 5,
    EiEvent = 6,
}

impl MsgType {
    pub fn from_code(code: u16) -> Option<Self> {
        match code {
            1 => Some(MsgType::Header),
            2 => Some(MsgType::Trailer),
            3 => Some(MsgType::BeginGuid),
            4 => Some(MsgType::EndGuid),
            5 => Some(MsgType::TriggerMenu),
            6 => Some(MsgType::EiEvent),
            _ => None,
        }
    }

    pub fn code(&self) -> u16 {
        *self as u16
    }
}

/// One wire frame: message type, frame version, and raw payload bytes.
///
/// On the wire the frame is `[(type << 16) | version]` and `[payload_len]`
/// as little-endian 32-bit words, then the payload.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Frame {
    pub msg_type: MsgType,
    pub version: u16,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, payload: Vec<u8>) -> Self {
        Frame {
            msg_type,
            version: CURRENT_VERSION,
            payload,
        }
    }

    /// Serialized size including the two header words.
    pub fn wire_len(&self) -> u64 {
        8 + self.payload.len() as u64
    }

    pub fn write_to<W: Write>(&self, sink: &mut W) -> std::io::Result<()> {
        let word1 = ((self.msg_type.code() as u32) << 16) | self.version as u32;
        sink.write_all(&word1.to_le_bytes())?;
        sink.write_all(&(self.payload.len() as u32).to_le_bytes())?;
        sink.write_all(&self.payload)
    }

    /// Read one frame. Returns `Ok(None)` on clean end of stream (no bytes
    /// available), `TruncatedFrame` when the stream stops mid-frame.
    pub fn read_from<R: Read>(source: &mut R) -> Result<Option<Frame>, SpbError> {
        let mut head = [0u8; 8];
        let mut filled = 0;
        while filled < head.len() {
            let n = source
                .read(&mut head[filled..])
                .map_err(|e| SpbError::from_read(e, "frame header"))?;
            if n == 0 {
                if filled == 0 {
                    return Ok(None);
                }
                return Err(SpbError::TruncatedFrame {
                    context: "frame header",
                });
            }
            filled += n;
        }
        let word1 = u32::from_le_bytes(head[..4].try_into().unwrap());
        let len = u32::from_le_bytes(head[4..].try_into().unwrap()) as usize;
        let type_code = (word1 >> 16) as u16;
        let version = (word1 & 0xFFFF) as u16;
        let msg_type = MsgType::from_code(type_code).ok_or(SpbError::UnknownType(type_code))?;
        if version != CURRENT_VERSION {
            return Err(SpbError::UnsupportedVersion {
                msg_type: type_code,
                version,
            });
        }
        let mut payload = vec![0u8; len];
        source
            .read_exact(&mut payload)
            .map_err(|e| SpbError::from_read(e, "frame payload"))?;
        Ok(Some(Frame {
            msg_type,
            version,
            payload,
        }))
    }
}
