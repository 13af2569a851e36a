//! Filesystem-backed tiers: per-worker local scratch and the shared
//! cluster directory. Writes go through a temp file plus rename, so
//! concurrent puts (even to the same key) are atomic and last-writer-wins.

use std::io::Write;
use std::path::{Path, PathBuf};

use super::{sha256_hex, Receipt, StorageBackend, StorageError, StorageKey};

struct FsStore {
    root: PathBuf,
    id: &'static str,
}

impl FsStore {
    fn path_of(&self, key: &StorageKey) -> PathBuf {
        let mut p = self.root.clone();
        for segment in key.namespace().split('/') {
            p.push(segment);
        }
        p.push(key.name());
        p
    }

    fn put(&self, key: &StorageKey, bytes: &[u8]) -> Result<Receipt, StorageError> {
        let path = self.path_of(key);
        let dir = path.parent().expect("key paths always have a parent");
        std::fs::create_dir_all(dir)?;
        let mut tmp = tempfile::Builder::new()
            .prefix(".inflight-")
            .tempfile_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.flush()?;
        tmp.persist(&path)
            .map_err(|e| StorageError::Io(e.error))?;
        Ok(Receipt {
            backend: self.id.to_string(),
            size: bytes.len() as u64,
            sha256_hex: sha256_hex(bytes),
        })
    }

    fn get(&self, key: &StorageKey) -> Result<Vec<u8>, StorageError> {
        match std::fs::read(self.path_of(key)) {
            Ok(bytes) => Ok(bytes),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(StorageError::NotFound(key.render()))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn delete(&self, key: &StorageKey) -> Result<(), StorageError> {
        match std::fs::remove_file(self.path_of(key)) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(e.into()),
        }
    }

    fn list(&self, namespace: &str) -> Result<Vec<StorageKey>, StorageError> {
        // validate the namespace through the key rules
        let probe = StorageKey::new(namespace, "probe")?;
        let dir = self.path_of(&probe);
        let dir = dir.parent().unwrap();
        let mut out = Vec::new();
        let entries = match std::fs::read_dir(dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(e.into()),
        };
        for entry in entries {
            let entry = entry?;
            if !entry.file_type()?.is_file() {
                continue;
            }
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            if name.starts_with(".inflight-") {
                continue;
            }
            out.push(StorageKey::new(namespace, name)?);
        }
        out.sort();
        Ok(out)
    }

    fn exists(&self, key: &StorageKey) -> Result<bool, StorageError> {
        Ok(self.path_of(key).is_file())
    }
}

/// Ephemeral per-worker tier; the backing directory disappears with the
/// value (or is caller-provided).
pub struct LocalStorage {
    store: FsStore,
    _owned: Option<tempfile::TempDir>,
}

impl LocalStorage {
    /// Fresh private directory, removed on drop.
    pub fn ephemeral() -> Result<Self, StorageError> {
        let dir = tempfile::TempDir::with_prefix("rfsim-local-")?;
        Ok(LocalStorage {
            store: FsStore {
                root: dir.path().to_path_buf(),
                id: "local",
            },
            _owned: Some(dir),
        })
    }

    /// Use an existing directory as the local scratch root.
    pub fn at(root: &Path) -> Result<Self, StorageError> {
        std::fs::create_dir_all(root)?;
        Ok(LocalStorage {
            store: FsStore {
                root: root.to_path_buf(),
                id: "local",
            },
            _owned: None,
        })
    }

    pub fn root(&self) -> &Path {
        &self.store.root
    }
}

/// Cluster-lifetime tier over a shared directory. Deleting the directory
/// models cluster teardown; the data does not survive it.
pub struct SharedStorage {
    store: FsStore,
}

impl SharedStorage {
    pub fn at(root: &Path) -> Result<Self, StorageError> {
        std::fs::create_dir_all(root)?;
        Ok(SharedStorage {
            store: FsStore {
                root: root.to_path_buf(),
                id: "shared",
            },
        })
    }

    pub fn root(&self) -> &Path {
        &self.store.root
    }
}

macro_rules! delegate_backend {
    ($ty:ty) => {
        impl StorageBackend for $ty {
            fn id(&self) -> &str {
                self.store.id
            }
            fn put(&self, key: &StorageKey, bytes: &[u8]) -> Result<Receipt, StorageError> {
                self.store.put(key, bytes)
            }
            fn get(&self, key: &StorageKey) -> Result<Vec<u8>, StorageError> {
                self.store.get(key)
            }
            fn delete(&self, key: &StorageKey) -> Result<(), StorageError> {
                self.store.delete(key)
            }
            fn list(&self, namespace: &str) -> Result<Vec<StorageKey>, StorageError> {
                self.store.list(namespace)
            }
            fn exists(&self, key: &StorageKey) -> Result<bool, StorageError> {
                self.store.exists(key)
            }
        }
    };
}

delegate_backend!(LocalStorage);
delegate_backend!(SharedStorage);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_roundtrip_and_overwrite() {
        let store = LocalStorage::ephemeral().unwrap();
        let key = StorageKey::new("ns", "blob").unwrap();
        let receipt = store.put(&key, b"first").unwrap();
        assert_eq!(receipt.size, 5);
        assert_eq!(store.get(&key).unwrap(), b"first");
        store.put(&key, b"second").unwrap();
        assert_eq!(store.get(&key).unwrap(), b"second");
    }

    #[test]
    fn delete_then_get_is_not_found() {
        let store = LocalStorage::ephemeral().unwrap();
        let key = StorageKey::new("ns", "blob").unwrap();
        store.put(&key, b"x").unwrap();
        store.delete(&key).unwrap();
        assert!(matches!(store.get(&key), Err(StorageError::NotFound(_))));
        assert!(!store.exists(&key).unwrap());
        store.delete(&key).unwrap(); // idempotent
    }

    #[test]
    fn list_is_sorted_and_exact() {
        let store = LocalStorage::ephemeral().unwrap();
        for name in ["b", "a", "c"] {
            store
                .put(&StorageKey::new("ns", name).unwrap(), b"1")
                .unwrap();
        }
        store.put(&StorageKey::new("other", "d").unwrap(), b"1").unwrap();
        store.delete(&StorageKey::new("ns", "c").unwrap()).unwrap();
        let keys = store.list("ns").unwrap();
        let names: Vec<&str> = keys.iter().map(|k| k.name()).collect();
        assert_eq!(names, ["a", "b"]);
        assert_eq!(store.list("empty").unwrap(), vec![]);
    }

    #[test]
    fn nested_namespaces_map_to_directories() {
        let store = LocalStorage::ephemeral().unwrap();
        let key = StorageKey::new("sweep/p0", "r1").unwrap();
        store.put(&key, b"data").unwrap();
        assert_eq!(store.list("sweep/p0").unwrap(), vec![key]);
        assert_eq!(store.list("sweep").unwrap(), vec![]); // namespaces are exact
    }

    #[test]
    fn shared_storage_same_contract() {
        let dir = tempfile::TempDir::new().unwrap();
        let store = SharedStorage::at(dir.path()).unwrap();
        let key = StorageKey::new("ns", "blob").unwrap();
        store.put(&key, b"shared!").unwrap();
        assert_eq!(store.get(&key).unwrap(), b"shared!");
        assert_eq!(store.id(), "shared");
    }
}
