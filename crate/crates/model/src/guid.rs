use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::ModelError;

/// 16-byte file identifier with a canonical 36-character text form
/// (`XXXXXXXX-XXXX-XXXX-XXXX-XXXXXXXXXXXX`, uppercase hex).
///
/// The text form encodes the bytes in order, two hex digits per byte;
/// parsing accepts lower- or mixed-case input but formatting is always
/// uppercase, so `to_text` is canonical.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Guid(pub [u8; 16]);

/// Byte offsets of the dash-separated groups in the text form: (hex chars, bytes).
const GROUPS: [usize; 5] = [4, 2, 2, 2, 6];

impl Guid {
    pub fn from_bytes(bytes: [u8; 16]) -> Self {
        Guid(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }

    /// Parse the canonical `8-4-4-4-12` hex text form. Case-insensitive.
    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let bad = |reason| ModelError::MalformedGuid {
            text: text.to_string(),
            reason,
        };
        if text.len() != 36 {
            return Err(bad("expected 36 characters"));
        }
        let mut bytes = [0u8; 16];
        let mut chars = text.bytes();
        let mut out = 0;
        for (gi, group_bytes) in GROUPS.iter().enumerate() {
            if gi > 0 && chars.next() != Some(b'-') {
                return Err(bad("expected '-' between groups"));
            }
            for _ in 0..*group_bytes {
                let hi = hex_val(chars.next().unwrap_or(0)).ok_or_else(|| bad("non-hex digit"))?;
                let lo = hex_val(chars.next().unwrap_or(0)).ok_or_else(|| bad("non-hex digit"))?;
                bytes[out] = (hi << 4) | lo;
                out += 1;
            }
        }
        Ok(Guid(bytes))
    }

    /// Canonical uppercase text form.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(36);
        let mut i = 0;
        for (gi, group_bytes) in GROUPS.iter().enumerate() {
            if gi > 0 {
                s.push('-');
            }
            for _ in 0..*group_bytes {
                s.push_str(&format!("{:02X}", self.0[i]));
                i += 1;
            }
        }
        s
    }
}

fn hex_val(c: u8) -> Option<u8> {
    match c {
        b'0'..=b'9' => Some(c - b'0'),
        b'a'..=b'f' => Some(c - b'a' + 10),
        b'A'..=b'F' => Some(c - b'A' + 10),
        _ => None,
    }
}

impl fmt::Display for Guid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl fmt::Debug for Guid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Guid({})", self.to_text())
    }
}

impl std::str::FromStr for Guid {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Guid::from_text(s)
    }
}

impl Serialize for Guid {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_text())
    }
}

impl<'de> Deserialize<'de> for Guid {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Guid::from_text(&text).map_err(serde::de::Error::custom)
    }
}
