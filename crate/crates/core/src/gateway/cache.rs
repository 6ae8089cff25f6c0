//! Content-addressed response cache.
//!
//! Responses are stored one per file under
//! `<dir>/<backend identity>/<request digest>.json`. Writes go through a
//! temporary file in the same directory followed by an atomic rename, so
//! concurrent workers racing on the same digest simply converge on one of
//! the (identical) responses and a reader never observes a partial file.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fsutil;

use super::{request_digest, Backend, ChatRequest, ChatResponse};

/// On-disk cache keyed by (backend identity, request digest).
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(ResponseCache { dir })
    }

    fn entry_path(&self, backend_name: &str, digest: &str) -> PathBuf {
        // Backend identities are informational strings; keep only
        // filesystem-friendly characters when turning them into a directory.
        let safe: String = backend_name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
            .collect();
        self.dir.join(safe).join(format!("{digest}.json"))
    }

    pub fn get(&self, backend_name: &str, digest: &str) -> Result<Option<ChatResponse>> {
        let path = self.entry_path(backend_name, digest);
        let bytes = match std::fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let response = serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: format!("corrupt cache entry: {e}"),
        })?;
        Ok(Some(response))
    }

    pub fn put(&self, backend_name: &str, digest: &str, response: &ChatResponse) -> Result<()> {
        let path = self.entry_path(backend_name, digest);
        let parent = path.parent().expect("entry path has a parent");
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let bytes = serde_json::to_vec(response).expect("ChatResponse serializes");
        fsutil::atomic_write(&path, &bytes)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

/// Wraps a backend with the cache. Transparent by construction: a hit
/// returns the previously stored response bytes, a miss delegates and
/// stores.
pub struct CachedBackend<B> {
    inner: B,
    cache: ResponseCache,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, cache: ResponseCache) -> Self {
        CachedBackend { inner, cache }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        let digest = request_digest(request);
        let backend_name = self.inner.name();
        if let Some(hit) = self.cache.get(&backend_name, &digest)? {
            return Ok(hit);
        }
        let response = self.inner.complete(request)?;
        self.cache.put(&backend_name, &digest, &response)?;
        Ok(response)
    }
}
