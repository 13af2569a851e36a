//! Read-through caching from any origin tier into local storage.

use super::{sha256_hex, LocalStorage, StorageBackend, StorageError, StorageKey};

const CHECKSUM_SUFFIX: &str = ".origin-sha256";

/// Fetch `key` through the local cache.
///
/// The first call pulls the bytes from `origin` and records them locally
/// together with their checksum; later calls are served locally after the
/// checksum verifies. A corrupted local copy is invalidated and refetched
/// once. When `expected_sha256` (from a put receipt) is given, bytes that
/// still fail it after the refetch are a checksum error.
pub fn cache_through(
    local: &LocalStorage,
    origin: &dyn StorageBackend,
    key: &StorageKey,
    expected_sha256: Option<&str>,
) -> Result<Vec<u8>, StorageError> {
    let meta_key = key.with_suffix(CHECKSUM_SUFFIX);
    if local.exists(key)? && local.exists(&meta_key)? {
        let bytes = local.get(key)?;
        let recorded = String::from_utf8(local.get(&meta_key)?)
            .map_err(|_| StorageError::Backend("corrupt cache metadata".into()))?;
        let actual = sha256_hex(&bytes);
        let wanted = expected_sha256.unwrap_or(&recorded);
        if actual == recorded && actual == wanted {
            return Ok(bytes);
        }
        local.delete(key)?;
        local.delete(&meta_key)?;
    }
    let bytes = origin.get(key)?;
    let actual = sha256_hex(&bytes);
    if let Some(expected) = expected_sha256 {
        if actual != expected {
            return Err(StorageError::ChecksumMismatch { key: key.render() });
        }
    }
    local.put(key, &bytes)?;
    local.put(&meta_key, actual.as_bytes())?;
    Ok(bytes)
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU64, Ordering};

    use super::*;
    use crate::storage::Receipt;

    /// Origin wrapper that counts fetches and can serve corrupted bytes.
    struct Instrumented<B> {
        inner: B,
        gets: AtomicU64,
        corrupt: bool,
    }

    impl<B: StorageBackend> StorageBackend for Instrumented<B> {
        fn id(&self) -> &str {
            self.inner.id()
        }
        fn put(&self, key: &StorageKey, bytes: &[u8]) -> Result<Receipt, StorageError> {
            self.inner.put(key, bytes)
        }
        fn get(&self, key: &StorageKey) -> Result<Vec<u8>, StorageError> {
            self.gets.fetch_add(1, Ordering::SeqCst);
            let mut bytes = self.inner.get(key)?;
            if self.corrupt {
                if let Some(b) = bytes.first_mut() {
                    *b ^= 0xFF;
                }
            }
            Ok(bytes)
        }
        fn delete(&self, key: &StorageKey) -> Result<(), StorageError> {
            self.inner.delete(key)
        }
        fn list(&self, ns: &str) -> Result<Vec<StorageKey>, StorageError> {
            self.inner.list(ns)
        }
        fn exists(&self, key: &StorageKey) -> Result<bool, StorageError> {
            self.inner.exists(key)
        }
    }

    fn instrumented(corrupt: bool) -> Instrumented<LocalStorage> {
        Instrumented {
            inner: LocalStorage::ephemeral().unwrap(),
            gets: AtomicU64::new(0),
            corrupt,
        }
    }

    #[test]
    fn second_read_hits_the_cache() {
        let local = LocalStorage::ephemeral().unwrap();
        let origin = instrumented(false);
        let key = StorageKey::new("ns", "blob").unwrap();
        origin.put(&key, b"payload").unwrap();

        let a = cache_through(&local, &origin, &key, None).unwrap();
        let b = cache_through(&local, &origin, &key, None).unwrap();
        assert_eq!(a, b"payload");
        assert_eq!(b, b"payload");
        assert_eq!(origin.gets.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn corrupted_local_copy_is_refetched_once() {
        let local = LocalStorage::ephemeral().unwrap();
        let origin = instrumented(false);
        let key = StorageKey::new("ns", "blob").unwrap();
        origin.put(&key, b"payload").unwrap();
        cache_through(&local, &origin, &key, None).unwrap();

        // flip a byte in the cached copy behind the cache's back
        local.put(&key, b"paXload").unwrap();
        let bytes = cache_through(&local, &origin, &key, None).unwrap();
        assert_eq!(bytes, b"payload");
        assert_eq!(origin.gets.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn missing_origin_key_creates_no_cache_entry() {
        let local = LocalStorage::ephemeral().unwrap();
        let origin = instrumented(false);
        let key = StorageKey::new("ns", "ghost").unwrap();
        assert!(matches!(
            cache_through(&local, &origin, &key, None),
            Err(StorageError::NotFound(_))
        ));
        assert!(!local.exists(&key).unwrap());
    }

    #[test]
    fn corrupt_origin_fails_against_receipt_checksum() {
        let local = LocalStorage::ephemeral().unwrap();
        let origin = instrumented(true);
        let key = StorageKey::new("ns", "blob").unwrap();
        let receipt = origin.put(&key, b"payload").unwrap();
        match cache_through(&local, &origin, &key, Some(&receipt.sha256_hex)) {
            Err(StorageError::ChecksumMismatch { .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(!local.exists(&key).unwrap());
    }
}
