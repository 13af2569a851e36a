//! Persistent tier: S3-compatible object store over HTTP.
//!
//! REST subset: PUT/GET/DELETE/HEAD object plus single-page
//! ListObjectsV2. Requests carry a pinned HMAC-SHA256 header signature
//! (see `docs/storage-http.md`); 5xx responses and transport failures are
//! retried with exponential backoff (3 attempts total), auth failures are
//! not retried.

use std::time::Duration;

use hmac::{Hmac, Mac};
use sha2::Sha256;

use super::{sha256_hex, Receipt, StorageBackend, StorageError, StorageKey};

/// Canonical request form covered by the signature.
pub(crate) fn string_to_sign(
    method: &str,
    path_and_query: &str,
    date: &str,
    content_sha256: &str,
) -> String {
    format!("{method}\n{path_and_query}\n{date}\n{content_sha256}")
}

/// Hex HMAC-SHA256 of the canonical form under the account secret.
pub(crate) fn sign(secret: &str, payload: &str) -> String {
    let mut mac =
        Hmac::<Sha256>::new_from_slice(secret.as_bytes()).expect("hmac accepts any key length");
    mac.update(payload.as_bytes());
    let out = mac.finalize().into_bytes();
    let mut hex = String::with_capacity(64);
    for b in out {
        use std::fmt::Write;
        write!(hex, "{b:02x}").unwrap();
    }
    hex
}

#[derive(Clone, Debug)]
pub struct S3Config {
    /// Base URL with the bucket as its path, e.g.
    /// `http://127.0.0.1:9000/rfsim-results`.
    pub endpoint: String,
    pub access_key: String,
    pub secret: String,
    /// Total attempts for retryable failures (5xx, transport).
    pub max_attempts: u32,
    /// Backoff before retry `n` is `backoff_ms << (n-1)`.
    pub backoff_ms: u64,
    pub timeout_ms: u64,
}

impl S3Config {
    pub fn new(endpoint: &str, access_key: &str, secret: &str) -> Self {
        S3Config {
            endpoint: endpoint.to_string(),
            access_key: access_key.to_string(),
            secret: secret.to_string(),
            max_attempts: 3,
            backoff_ms: 100,
            timeout_ms: 10_000,
        }
    }
}

/// Blob store client satisfying the [`StorageBackend`] contract over the
/// REST subset.
pub struct PersistentStorage {
    agent: ureq::Agent,
    base: String,
    bucket: String,
    cfg: S3Config,
}

/// Connect a persistent tier to an S3-compatible endpoint. The bucket is
/// taken from the endpoint path and assumed to exist.
pub fn object_store_client(cfg: S3Config) -> Result<PersistentStorage, StorageError> {
    PersistentStorage::connect(cfg)
}

impl PersistentStorage {
    pub fn connect(cfg: S3Config) -> Result<Self, StorageError> {
        let trimmed = cfg.endpoint.trim_end_matches('/');
        let scheme_end = trimmed
            .find("://")
            .ok_or_else(|| StorageError::Backend(format!("endpoint {trimmed:?} has no scheme")))?;
        let after = &trimmed[scheme_end + 3..];
        let slash = after.find('/').ok_or_else(|| {
            StorageError::Backend(format!(
                "endpoint {trimmed:?} must include the bucket as its path"
            ))
        })?;
        let bucket = &after[slash + 1..];
        if bucket.is_empty() || bucket.contains('/') {
            return Err(StorageError::Backend(format!(
                "endpoint bucket path {bucket:?} must be a single segment"
            )));
        }
        let base = format!("{}{}", &trimmed[..scheme_end + 3], &after[..slash]);
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .build()
            .into();
        Ok(PersistentStorage {
            agent,
            base,
            bucket: bucket.to_string(),
            cfg,
        })
    }

    pub fn bucket(&self) -> &str {
        &self.bucket
    }

    /// One signed request with retry on 5xx/transport failures.
    fn request(
        &self,
        method: &str,
        path_and_query: &str,
        body: Option<&[u8]>,
    ) -> Result<(u16, Vec<u8>), StorageError> {
        let url = format!("{}{}", self.base, path_and_query);
        let date = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs().to_string())
            .unwrap_or_else(|_| "0".to_string());
        let content_sha = sha256_hex(body.unwrap_or(b""));
        let payload = string_to_sign(method, path_and_query, &date, &content_sha);
        let signature = sign(&self.cfg.secret, &payload);
        let auth = format!("RFS1 {}:{signature}", self.cfg.access_key);

        let mut last_failure = String::new();
        for attempt in 1..=self.cfg.max_attempts {
            if attempt > 1 {
                std::thread::sleep(Duration::from_millis(
                    self.cfg.backoff_ms << (attempt - 2),
                ));
            }
            let sent = if method == "PUT" {
                self.agent
                    .put(&url)
                    .header("x-rf-date", &date)
                    .header("x-rf-content-sha256", &content_sha)
                    .header("authorization", &auth)
                    .send(body.unwrap_or(b""))
            } else {
                let req = match method {
                    "GET" => self.agent.get(&url),
                    "HEAD" => self.agent.head(&url),
                    "DELETE" => self.agent.delete(&url),
                    other => unreachable!("unexpected method {other}"),
                };
                req.header("x-rf-date", &date)
                    .header("x-rf-content-sha256", &content_sha)
                    .header("authorization", &auth)
                    .call()
            };
            match sent {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if (500..600).contains(&status) {
                        last_failure = format!("server returned {status}");
                        continue;
                    }
                    let bytes = resp
                        .body_mut()
                        .read_to_vec()
                        .map_err(|e| StorageError::Backend(format!("read body: {e}")))?;
                    return Ok((status, bytes));
                }
                Err(e) => {
                    last_failure = format!("transport: {e}");
                    continue;
                }
            }
        }
        Err(StorageError::RetriesExhausted {
            attempts: self.cfg.max_attempts,
            last: last_failure,
        })
    }

    fn object_path(&self, key: &StorageKey) -> String {
        format!("/{}/{}", self.bucket, key.render())
    }

    fn classify_404(&self, body: &[u8], key: Option<&StorageKey>) -> StorageError {
        let text = String::from_utf8_lossy(body);
        if text.contains("NoSuchBucket") {
            StorageError::NoSuchBucket(self.bucket.clone())
        } else {
            StorageError::NotFound(key.map_or_else(|| self.bucket.clone(), |k| k.render()))
        }
    }
}

impl StorageBackend for PersistentStorage {
    fn id(&self) -> &str {
        "persistent"
    }

    fn put(&self, key: &StorageKey, bytes: &[u8]) -> Result<Receipt, StorageError> {
        let (status, body) = self.request("PUT", &self.object_path(key), Some(bytes))?;
        match status {
            200 => Ok(Receipt {
                backend: "persistent".into(),
                size: bytes.len() as u64,
                sha256_hex: sha256_hex(bytes),
            }),
            403 => Err(StorageError::Auth(String::from_utf8_lossy(&body).into())),
            404 => Err(self.classify_404(&body, Some(key))),
            other => Err(StorageError::Backend(format!("PUT returned {other}"))),
        }
    }

    fn get(&self, key: &StorageKey) -> Result<Vec<u8>, StorageError> {
        let (status, body) = self.request("GET", &self.object_path(key), None)?;
        match status {
            200 => Ok(body),
            403 => Err(StorageError::Auth(String::from_utf8_lossy(&body).into())),
            404 => Err(self.classify_404(&body, Some(key))),
            other => Err(StorageError::Backend(format!("GET returned {other}"))),
        }
    }

    fn delete(&self, key: &StorageKey) -> Result<(), StorageError> {
        let (status, body) = self.request("DELETE", &self.object_path(key), None)?;
        match status {
            200 | 204 => Ok(()),
            403 => Err(StorageError::Auth(String::from_utf8_lossy(&body).into())),
            404 => match self.classify_404(&body, Some(key)) {
                StorageError::NotFound(_) => Ok(()), // deleting a missing key is fine
                err => Err(err),
            },
            other => Err(StorageError::Backend(format!("DELETE returned {other}"))),
        }
    }

    fn list(&self, namespace: &str) -> Result<Vec<StorageKey>, StorageError> {
        StorageKey::new(namespace, "probe")?; // charset check
        let path = format!("/{}?list-type=2&prefix={namespace}/", self.bucket);
        let (status, body) = self.request("GET", &path, None)?;
        match status {
            200 => {
                let text = String::from_utf8_lossy(&body);
                let mut out = Vec::new();
                let mut rest = text.as_ref();
                while let Some(start) = rest.find("<Key>") {
                    let tail = &rest[start + 5..];
                    let end = tail.find("</Key>").ok_or_else(|| {
                        StorageError::Backend("unterminated <Key> in listing".into())
                    })?;
                    let key = StorageKey::parse(&tail[..end])?;
                    // prefix matching also catches nested namespaces;
                    // keep only exact ones to mirror the directory tiers
                    if key.namespace() == namespace {
                        out.push(key);
                    }
                    rest = &tail[end + 6..];
                }
                out.sort();
                Ok(out)
            }
            403 => Err(StorageError::Auth(String::from_utf8_lossy(&body).into())),
            404 => Err(self.classify_404(&body, None)),
            other => Err(StorageError::Backend(format!("LIST returned {other}"))),
        }
    }

    fn exists(&self, key: &StorageKey) -> Result<bool, StorageError> {
        let (status, body) = self.request("HEAD", &self.object_path(key), None)?;
        match status {
            200 => Ok(true),
            404 => Ok(false),
            403 => Err(StorageError::Auth(String::from_utf8_lossy(&body).into())),
            other => Err(StorageError::Backend(format!("HEAD returned {other}"))),
        }
    }
}
