use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::TransportError;

/// Storage backend addressed by an object URI. `Local` is the working
/// store, `S3c` an optional remote plug-in, `Fallback` the overflow store
/// used when a primary put fails.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Backend {
    Local,
    S3c,
    Fallback,
}

impl Backend {
    pub fn scheme(&self) -> &'static str {
        match self {
            Backend::Local => "local",
            Backend::S3c => "s3c",
            Backend::Fallback => "fallback",
        }
    }

    pub fn from_scheme(scheme: &str) -> Option<Self> {
        match scheme {
            "local" => Some(Backend::Local),
            "s3c" => Some(Backend::S3c),
            "fallback" => Some(Backend::Fallback),
            _ => None,
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.scheme())
    }
}

/// Address of one stored object: `backend://bucket/key`, where the key may
/// contain further slashes.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct ObjectUri {
    pub backend: Backend,
    pub bucket: String,
    pub key: String,
}

impl ObjectUri {
    pub fn new(backend: Backend, bucket: impl Into<String>, key: impl Into<String>) -> Self {
        ObjectUri {
            backend,
            bucket: bucket.into(),
            key: key.into(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, TransportError> {
        let bad = |reason: &str| TransportError::MalformedUri {
            text: text.to_string(),
            reason: reason.to_string(),
        };
        let (scheme, rest) = text
            .split_once("://")
            .ok_or_else(|| bad("missing '://'"))?;
        let backend = Backend::from_scheme(scheme)
            .ok_or_else(|| bad("unknown backend scheme"))?;
        let (bucket, key) = rest
            .split_once('/')
            .ok_or_else(|| bad("missing '/' between bucket and key"))?;
        if bucket.is_empty() {
            return Err(bad("empty bucket"));
        }
        if key.is_empty() {
            return Err(bad("empty key"));
        }
        Ok(ObjectUri {
            backend,
            bucket: bucket.to_string(),
            key: key.to_string(),
        })
    }
}

impl fmt::Display for ObjectUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}://{}/{}", self.backend.scheme(), self.bucket, self.key)
    }
}

impl std::str::FromStr for ObjectUri {
    type Err = TransportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ObjectUri::parse(s)
    }
}

impl Serialize for ObjectUri {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ObjectUri {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        ObjectUri::parse(&text).map_err(serde::de::Error::custom)
    }
}
