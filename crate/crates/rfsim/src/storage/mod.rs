//! Three API-compatible blob storage tiers.
//!
//! - [`LocalStorage`]: per-worker ephemeral directory, used for caching
//!   near the compute.
//! - [`SharedStorage`]: a configured shared directory; lives as long as
//!   the cluster (deleting the directory models teardown).
//! - [`PersistentStorage`]: an S3-compatible object store over HTTP;
//!   outlives any cluster.
//!
//! All three satisfy the same [`StorageBackend`] contract and the same
//! randomized property suite. Keys are `namespace/name` with a restricted
//! character set so every tier (filesystem paths, URLs) renders them
//! verbatim.

use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

mod cache;
mod fs;
pub mod memserver;
mod s3;

pub use cache::cache_through;
pub use fs::{LocalStorage, SharedStorage};
pub use s3::{object_store_client, PersistentStorage, S3Config};

/// Key charset: ASCII letters, digits, `. _ - /`. Rendered form is
/// `namespace/name`, at most 512 bytes.
pub const KEY_MAX_LEN: usize = 512;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("invalid storage key: {0}")]
    InvalidKey(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("bucket does not exist: {0}")]
    NoSuchBucket(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("checksum mismatch for {key}")]
    ChecksumMismatch { key: String },
    #[error("storage backend error: {0}")]
    Backend(String),
    #[error("storage i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// `namespace/name` blob address, charset-validated.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StorageKey {
    namespace: String,
    name: String,
}

impl StorageKey {
    /// The namespace may contain `/` (nested namespaces); the name may
    /// not.
    pub fn new(namespace: &str, name: &str) -> Result<Self, StorageError> {
        let rendered_len = namespace.len() + 1 + name.len();
        if rendered_len > KEY_MAX_LEN {
            return Err(StorageError::InvalidKey(format!(
                "key length {rendered_len} exceeds {KEY_MAX_LEN}"
            )));
        }
        if name.is_empty() || name.contains('/') {
            return Err(StorageError::InvalidKey(format!(
                "name {name:?} must be a non-empty single segment"
            )));
        }
        for part in [namespace, name] {
            if !part
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-' | b'/'))
            {
                return Err(StorageError::InvalidKey(format!(
                    "{part:?} contains characters outside [A-Za-z0-9._-/]"
                )));
            }
        }
        for segment in namespace.split('/').chain(std::iter::once(name)) {
            if segment.is_empty() || segment == "." || segment == ".." {
                return Err(StorageError::InvalidKey(format!(
                    "segment {segment:?} in {namespace:?}/{name:?}"
                )));
            }
        }
        Ok(StorageKey {
            namespace: namespace.to_string(),
            name: name.to_string(),
        })
    }

    /// Parse a rendered `namespace/name` string.
    pub fn parse(rendered: &str) -> Result<Self, StorageError> {
        let (ns, name) = rendered.rsplit_once('/').ok_or_else(|| {
            StorageError::InvalidKey(format!("{rendered:?} has no namespace separator"))
        })?;
        StorageKey::new(ns, name)
    }

    pub fn namespace(&self) -> &str {
        &self.namespace
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn render(&self) -> String {
        format!("{}/{}", self.namespace, self.name)
    }

    /// Sibling key carrying cache metadata.
    pub(crate) fn with_suffix(&self, suffix: &str) -> StorageKey {
        StorageKey {
            namespace: self.namespace.clone(),
            name: format!("{}{suffix}", self.name),
        }
    }
}

impl fmt::Display for StorageKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.namespace, self.name)
    }
}

/// Proof of a completed put.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Receipt {
    pub backend: String,
    pub size: u64,
    pub sha256_hex: String,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write;
        write!(out, "{b:02x}").unwrap();
    }
    out
}

/// Uniform blob-store contract for all three tiers.
///
/// Semantics: `get(put(k, v)) == v`; overwrite is last-writer-wins;
/// `delete` is idempotent; `list(namespace)` returns exactly the live
/// keys of that namespace, sorted by name; `exists` never errors on a
/// merely-missing key.
pub trait StorageBackend: Send + Sync {
    fn id(&self) -> &str;
    fn put(&self, key: &StorageKey, bytes: &[u8]) -> Result<Receipt, StorageError>;
    fn get(&self, key: &StorageKey) -> Result<Vec<u8>, StorageError>;
    fn delete(&self, key: &StorageKey) -> Result<(), StorageError>;
    fn list(&self, namespace: &str) -> Result<Vec<StorageKey>, StorageError>;
    fn exists(&self, key: &StorageKey) -> Result<bool, StorageError>;
}

/// Storage settings resolved from the environment and/or a TOML config
/// file's `[storage]` section.
///
/// Environment variables: `RF_STORAGE_ENDPOINT` (base URL, bucket as the
/// path, e.g. `http://127.0.0.1:9000/rfsim`), `RF_STORAGE_KEY`,
/// `RF_STORAGE_SECRET`, `RF_SHARED_DIR`.
#[derive(Clone, Debug, Default, serde::Deserialize)]
pub struct StorageSettings {
    pub endpoint: Option<String>,
    pub key: Option<String>,
    pub secret: Option<String>,
    pub shared_dir: Option<String>,
}

impl StorageSettings {
    pub fn from_env() -> Self {
        StorageSettings {
            endpoint: std::env::var("RF_STORAGE_ENDPOINT").ok(),
            key: std::env::var("RF_STORAGE_KEY").ok(),
            secret: std::env::var("RF_STORAGE_SECRET").ok(),
            shared_dir: std::env::var("RF_SHARED_DIR").ok(),
        }
    }

    /// Parse a TOML document's `[storage]` section, then let the
    /// environment override individual fields.
    pub fn from_config_str(text: &str) -> Result<Self, StorageError> {
        #[derive(serde::Deserialize)]
        struct Doc {
            storage: Option<StorageSettings>,
        }
        let doc: Doc = toml::from_str(text)
            .map_err(|e| StorageError::Backend(format!("config parse: {e}")))?;
        let mut s = doc.storage.unwrap_or_default();
        let env = StorageSettings::from_env();
        s.endpoint = env.endpoint.or(s.endpoint);
        s.key = env.key.or(s.key);
        s.secret = env.secret.or(s.secret);
        s.shared_dir = env.shared_dir.or(s.shared_dir);
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_charset_enforced() {
        assert!(StorageKey::new("ens1", "r0").is_ok());
        assert!(StorageKey::new("sweep/p0", "r12.rftraj").is_ok());
        assert!(StorageKey::new("a b", "x").is_err());
        assert!(StorageKey::new("ens", "a b").is_err());
        assert!(StorageKey::new("ens", "x/y").is_err());
        assert!(StorageKey::new("", "x").is_err());
        assert!(StorageKey::new("..", "x").is_err());
        assert!(StorageKey::new("a//b", "x").is_err());
        let long = "a".repeat(520);
        assert!(StorageKey::new(&long, "x").is_err());
    }

    #[test]
    fn key_roundtrip_via_render() {
        let k = StorageKey::new("sweep/p3", "r7").unwrap();
        assert_eq!(k.render(), "sweep/p3/r7");
        assert_eq!(StorageKey::parse(&k.render()).unwrap(), k);
        assert_eq!(k.namespace(), "sweep/p3");
        assert_eq!(k.name(), "r7");
    }

    #[test]
    fn settings_from_toml() {
        let s = StorageSettings::from_config_str(
            "[storage]\nendpoint = \"http://127.0.0.1:9000/bkt\"\nkey = \"ak\"\nsecret = \"sk\"\nshared_dir = \"/tmp/shared\"\n",
        )
        .unwrap();
        assert_eq!(s.endpoint.as_deref(), Some("http://127.0.0.1:9000/bkt"));
        assert_eq!(s.shared_dir.as_deref(), Some("/tmp/shared"));
    }
}
