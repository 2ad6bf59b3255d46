//! Content-addressed on-disk response cache.
//!
//! Layout: `<root>/<endpoint>/<first two hex chars>/<key>.json`, one file per
//! key. Writers race through `persist_noclobber`, so the first completed
//! write wins and every caller reads back the same bytes.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use super::{
    sha256_hex, Backend, BackendError, ChatReply, ChatRequest, ChatResponse, EmbedInput, EmbedRequest, EmbedResponse,
    Endpoint, TagRequest, TagResponse,
};

/// SHA-256 over the canonical JSON of (endpoint, model, request body with
/// images replaced by their digest, image digest).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub endpoint: Endpoint,
    pub hex: String,
}

impl CacheKey {
    fn from_parts(endpoint: Endpoint, model: &str, body: Value, image_digest: Option<&str>) -> Self {
        // serde_json maps are sorted by key, so this serialization is canonical
        let canonical = json!({
            "endpoint": endpoint,
            "model": model,
            "body": body,
            "image": image_digest,
        });
        let bytes = serde_json::to_vec(&canonical).expect("json value serializes");
        Self { endpoint, hex: sha256_hex(&bytes) }
    }

    pub fn chat(req: &ChatRequest) -> Self {
        let mut body = serde_json::to_value(req).expect("chat request serializes");
        body["image"] = Value::Null;
        body["model"] = Value::Null;
        Self::from_parts(Endpoint::Chat, &req.model, body, req.image.as_ref().map(|i| i.digest()))
    }

    pub fn embed(req: &EmbedRequest) -> Self {
        match &req.input {
            EmbedInput::Text { text } => {
                Self::from_parts(Endpoint::Embed, &req.model, json!({"kind": "text", "text": text}), None)
            }
            EmbedInput::Image { image } => {
                Self::from_parts(Endpoint::Embed, &req.model, json!({"kind": "image"}), Some(image.digest()))
            }
        }
    }

    pub fn tag(req: &TagRequest) -> Self {
        Self::from_parts(Endpoint::Tag, &req.model, json!({"labels": req.labels}), Some(req.image.digest()))
    }
}

#[derive(Debug)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, key: &CacheKey) -> PathBuf {
        self.root.join(key.endpoint.to_string()).join(&key.hex[..2]).join(format!("{}.json", key.hex))
    }

    pub fn get(&self, key: &CacheKey) -> io::Result<Option<Vec<u8>>> {
        match fs::read(self.path(key)) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Stores `bytes` unless the key already exists; returns the bytes that
    /// ended up on disk.
    pub fn put(&self, key: &CacheKey, bytes: &[u8]) -> io::Result<Vec<u8>> {
        let path = self.path(key);
        let dir = path.parent().expect("cache path has a parent");
        fs::create_dir_all(dir)?;
        if let Some(existing) = self.get(key)? {
            return Ok(existing);
        }
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.flush()?;
        match tmp.persist_noclobber(&path) {
            Ok(_) => Ok(bytes.to_vec()),
            Err(e) if e.error.kind() == io::ErrorKind::AlreadyExists => fs::read(&path),
            Err(e) => Err(e.error),
        }
    }
}

/// Any backend with the response cache in front of it.
pub struct CachedBackend<B> {
    inner: B,
    cache: ResponseCache,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<B: Backend> CachedBackend<B> {
    pub fn new(inner: B, cache: ResponseCache) -> Self {
        Self { inner, cache, hits: AtomicU64::new(0), misses: AtomicU64::new(0) }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    /// Returns the cached value and whether it was a hit.
    fn through<T, F>(&self, key: &CacheKey, compute: F) -> Result<(T, bool), BackendError>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T, BackendError>,
    {
        let cache_err = |e: io::Error| BackendError::Cache(format!("{}: {e}", key.hex));
        let decode = |bytes: &[u8]| {
            serde_json::from_slice::<T>(bytes)
                .map_err(|e| BackendError::Cache(format!("corrupt entry {}: {e}", key.hex)))
        };
        if let Some(bytes) = self.cache.get(key).map_err(cache_err)? {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok((decode(&bytes)?, true));
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let value = compute()?;
        let bytes = serde_json::to_vec(&value).expect("response serializes");
        let stored = self.cache.put(key, &bytes).map_err(cache_err)?;
        Ok((decode(&stored)?, false))
    }
}

impl<B: Backend> Backend for CachedBackend<B> {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        req.validate()?;
        let (reply, hit) = self.through(&CacheKey::chat(req), || {
            self.inner.chat(req).map(|r| ChatReply { text: r.text, latency_ms: Some(r.latency_ms) })
        })?;
        Ok(ChatResponse {
            text: reply.text,
            latency_ms: if hit { 0 } else { reply.latency_ms.unwrap_or(0) },
            cache_hit: hit,
        })
    }

    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, BackendError> {
        self.through(&CacheKey::embed(req), || self.inner.embed(req)).map(|(r, _)| r)
    }

    fn tag(&self, req: &TagRequest) -> Result<TagResponse, BackendError> {
        req.validate()?;
        self.through(&CacheKey::tag(req), || self.inner.tag(req)).map(|(r, _)| r)
    }
}
