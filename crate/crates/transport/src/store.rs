use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use crate::{Backend, ObjectUri, TransportError};

/// Receipt for a stored object: where it landed, how many bytes, and the
/// checksum of the stored content.
#[derive(Clone, PartialEq, Debug)]
pub struct PutReceipt {
    pub uri: ObjectUri,
    pub bytes: u64,
    pub crc32: u32,
}

/// One object-store backend. Put never overwrites: an existing key is an
/// error. Listings come back in lexicographic key order.
pub trait ObjectStore: Send + Sync {
    fn backend(&self) -> Backend;
    fn put(&self, bucket: &str, key: &str, bytes: &[u8]) -> Result<PutReceipt, TransportError>;
    fn get(&self, bucket: &str, key: &str) -> Result<Vec<u8>, TransportError>;
    fn delete(&self, bucket: &str, key: &str) -> Result<(), TransportError>;
    fn list(&self, bucket: &str, key_prefix: &str) -> Result<Vec<String>, TransportError>;
}

fn check_key(key: &str) -> Result<(), TransportError> {
    let bad = |reason: &str| TransportError::InvalidKey {
        key: key.to_string(),
        reason: reason.to_string(),
    };
    if key.is_empty() {
        return Err(bad("empty"));
    }
    let path = Path::new(key);
    for component in path.components() {
        match component {
            Component::Normal(_) => {}
            _ => return Err(bad("keys must be plain relative paths")),
        }
    }
    if key.ends_with('/') {
        return Err(bad("trailing slash"));
    }
    Ok(())
}

/// Directory-tree backend: an object's key is its relative path below
/// `<root>/<bucket>/`.
pub struct LocalStore {
    backend_tag: Backend,
    root: PathBuf,
}

impl LocalStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        LocalStore {
            backend_tag: Backend::Local,
            root: root.into(),
        }
    }

    /// A directory-tree store serving the fallback role: receipts and
    /// listings carry `fallback://` URIs.
    pub fn new_fallback(root: impl Into<PathBuf>) -> Self {
        LocalStore {
            backend_tag: Backend::Fallback,
            root: root.into(),
        }
    }

    fn object_path(&self, bucket: &str, key: &str) -> Result<PathBuf, TransportError> {
        if bucket.is_empty() || bucket.contains('/') {
            return Err(TransportError::InvalidKey {
                key: bucket.to_string(),
                reason: "bucket must be a single path component".to_string(),
            });
        }
        check_key(key)?;
        Ok(self.root.join(bucket).join(key))
    }

    fn uri(&self, bucket: &str, key: &str) -> ObjectUri {
        ObjectUri::new(self.backend_tag, bucket, key)
    }
}

impl ObjectStore for LocalStore {
    fn backend(&self) -> Backend {
        self.backend_tag
    }

    fn put(&self, bucket: &str, key: &str, bytes: &[u8]) -> Result<PutReceipt, TransportError> {
        let path = self.object_path(bucket, key)?;
        let uri = self.uri(bucket, key);
        if path.exists() {
            return Err(TransportError::KeyExists {
                uri: uri.to_string(),
            });
        }
        let parent = path.parent().expect("object path has a parent");
        std::fs::create_dir_all(parent)?;
        // Write to a unique temporary, then link into place: the link fails
        // if the key appeared concurrently, and readers never observe a
        // partially written object.
        let tmp = parent.join(format!(
            ".put-{}-{:x}",
            std::process::id(),
            bytes.as_ptr() as usize
        ));
        std::fs::write(&tmp, bytes)?;
        let linked = std::fs::hard_link(&tmp, &path);
        let _ = std::fs::remove_file(&tmp);
        if let Err(e) = linked {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                return Err(TransportError::KeyExists {
                    uri: uri.to_string(),
                });
            }
            return Err(e.into());
        }
        Ok(PutReceipt {
            uri,
            bytes: bytes.len() as u64,
            crc32: crc32fast::hash(bytes),
        })
    }

    fn get(&self, bucket: &str, key: &str) -> Result<Vec<u8>, TransportError> {
        let path = self.object_path(bucket, key)?;
        std::fs::read(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                TransportError::NotFound {
                    uri: self.uri(bucket, key).to_string(),
                }
            } else {
                e.into()
            }
        })
    }

    fn delete(&self, bucket: &str, key: &str) -> Result<(), TransportError> {
        let path = self.object_path(bucket, key)?;
        std::fs::remove_file(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                TransportError::NotFound {
                    uri: self.uri(bucket, key).to_string(),
                }
            } else {
                e.into()
            }
        })
    }

    fn list(&self, bucket: &str, key_prefix: &str) -> Result<Vec<String>, TransportError> {
        let bucket_root = self.root.join(bucket);
        if !bucket_root.is_dir() {
            return Ok(Vec::new());
        }
        let mut keys = Vec::new();
        for entry in walkdir::WalkDir::new(&bucket_root) {
            let entry = entry.map_err(|e| {
                TransportError::Io(e.into_io_error().unwrap_or_else(|| {
                    std::io::Error::new(std::io::ErrorKind::Other, "walk error")
                }))
            })?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry
                .path()
                .strip_prefix(&bucket_root)
                .expect("entries live under the bucket root");
            let key = rel.to_string_lossy().replace(std::path::MAIN_SEPARATOR, "/");
            if key.starts_with(key_prefix) && !rel.file_name().is_some_and(starts_with_dot) {
                keys.push(key);
            }
        }
        keys.sort();
        Ok(keys)
    }
}

fn starts_with_dot(name: &std::ffi::OsStr) -> bool {
    name.to_string_lossy().starts_with('.')
}

/// A backend that refuses everything — stands in for an unreachable remote
/// store when exercising fallback behavior, or for an unconfigured backend.
pub struct UnavailableStore {
    backend_tag: Backend,
}

impl UnavailableStore {
    pub fn new(backend_tag: Backend) -> Self {
        UnavailableStore { backend_tag }
    }

    fn err(&self) -> TransportError {
        TransportError::BackendUnavailable {
            backend: self.backend_tag.to_string(),
            detail: "backend not reachable".to_string(),
        }
    }
}

impl ObjectStore for UnavailableStore {
    fn backend(&self) -> Backend {
        self.backend_tag
    }

    fn put(&self, _: &str, _: &str, _: &[u8]) -> Result<PutReceipt, TransportError> {
        Err(self.err())
    }

    fn get(&self, _: &str, _: &str) -> Result<Vec<u8>, TransportError> {
        Err(self.err())
    }

    fn delete(&self, _: &str, _: &str) -> Result<(), TransportError> {
        Err(self.err())
    }

    fn list(&self, _: &str, _: &str) -> Result<Vec<String>, TransportError> {
        Err(self.err())
    }
}

/// Routes URI-addressed operations to the backend that holds the object,
/// and retries failed primary puts once against the fallback store.
#[derive(Clone)]
pub struct StoreRouter {
    primary: Arc<dyn ObjectStore>,
    fallback: Option<Arc<dyn ObjectStore>>,
}

impl StoreRouter {
    pub fn new(primary: Arc<dyn ObjectStore>, fallback: Option<Arc<dyn ObjectStore>>) -> Self {
        StoreRouter { primary, fallback }
    }

    pub fn local_only(root: impl Into<PathBuf>) -> Self {
        StoreRouter::new(Arc::new(LocalStore::new(root)), None)
    }

    fn store_for(&self, backend: Backend) -> Result<&Arc<dyn ObjectStore>, TransportError> {
        if self.primary.backend() == backend {
            return Ok(&self.primary);
        }
        if let Some(fb) = &self.fallback {
            if fb.backend() == backend {
                return Ok(fb);
            }
        }
        Err(TransportError::BackendUnavailable {
            backend: backend.to_string(),
            detail: "no store configured for this backend".to_string(),
        })
    }

    /// Store a new object, preferring the primary backend. Any primary
    /// failure except an existing key is retried once on the fallback.
    pub fn put_new(
        &self,
        bucket: &str,
        key: &str,
        bytes: &[u8],
    ) -> Result<PutReceipt, TransportError> {
        match self.primary.put(bucket, key, bytes) {
            Ok(receipt) => Ok(receipt),
            Err(TransportError::KeyExists { uri }) => Err(TransportError::KeyExists { uri }),
            Err(primary_err) => match &self.fallback {
                Some(fb) => {
                    log::warn!(
                        "primary put of {bucket}/{key} failed ({primary_err}); using fallback"
                    );
                    fb.put(bucket, key, bytes)
                }
                None => Err(primary_err),
            },
        }
    }

    pub fn get(&self, uri: &ObjectUri) -> Result<Vec<u8>, TransportError> {
        self.store_for(uri.backend)?.get(&uri.bucket, &uri.key)
    }

    pub fn delete(&self, uri: &ObjectUri) -> Result<(), TransportError> {
        self.store_for(uri.backend)?.delete(&uri.bucket, &uri.key)
    }

    pub fn list(&self, prefix: &ObjectUri) -> Result<Vec<ObjectUri>, TransportError> {
        let store = self.store_for(prefix.backend)?;
        let keys = store.list(&prefix.bucket, &prefix.key)?;
        Ok(keys
            .into_iter()
            .map(|k| ObjectUri::new(prefix.backend, prefix.bucket.clone(), k))
            .collect())
    }
}
