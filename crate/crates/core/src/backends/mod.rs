//! Clients for the three model services the harness talks to.
//!
//! - chat: a vision-capable chat model answering one prompt per action
//! - embed: a dual text/image encoder used by the comprehensiveness metric
//! - tag: a multi-label tagger returning one confidence per candidate label
//!
//! [`HttpBackend`] speaks the JSON wire protocol (`/chat`, `/embed`, `/tag`),
//! [`MockBackend`] answers from a fixture file, [`CachedBackend`] puts the
//! on-disk response cache in front of either, and [`server`] exposes any
//! backend over the same protocol.

mod cache;
mod http;
mod mock;
pub mod server;

use std::fmt;
use std::sync::Arc;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::ActionKind;

pub use cache::{CacheKey, CachedBackend, ResponseCache};
pub use http::{ChatApi, Endpoints, HttpBackend, RetryPolicy};
pub use mock::{ChatFixture, FixtureFile, MockBackend};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("service unavailable: {0}")]
    Unavailable(String),
    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },
    #[error("protocol error: {message} (raw payload: {raw})")]
    Protocol { message: String, raw: String },
    #[error("no fixture for {0}")]
    MissingFixture(String),
    #[error("invalid fixture file: {0}")]
    Fixture(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cache error: {0}")]
    Cache(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Timeout(_) | BackendError::Unavailable(_) => true,
            BackendError::Http { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }

    pub(crate) fn protocol(message: impl Into<String>, raw: impl Into<String>) -> Self {
        BackendError::Protocol { message: message.into(), raw: raw.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Chat,
    Embed,
    Tag,
}

impl Endpoint {
    pub fn path(self) -> &'static str {
        match self {
            Endpoint::Chat => "/chat",
            Endpoint::Embed => "/embed",
            Endpoint::Tag => "/tag",
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.path()[1..])
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Image bytes plus media type. Serialized on the wire as
/// `{"data": <base64>, "media_type": ...}`.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "WireImage", into = "WireImage")]
pub struct ImageData {
    bytes: Arc<Vec<u8>>,
    media_type: String,
    digest: String,
}

#[derive(Serialize, Deserialize)]
struct WireImage {
    data: String,
    media_type: String,
}

impl TryFrom<WireImage> for ImageData {
    type Error = String;
    fn try_from(w: WireImage) -> Result<Self, Self::Error> {
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(w.data.as_bytes())
            .map_err(|e| format!("image data is not valid base64: {e}"))?;
        Ok(ImageData::new(bytes, w.media_type))
    }
}

impl From<ImageData> for WireImage {
    fn from(img: ImageData) -> Self {
        WireImage { data: img.base64(), media_type: img.media_type }
    }
}

impl fmt::Debug for ImageData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageData")
            .field("len", &self.bytes.len())
            .field("media_type", &self.media_type)
            .field("digest", &self.digest)
            .finish()
    }
}

impl ImageData {
    pub fn new(bytes: Vec<u8>, media_type: impl Into<String>) -> Self {
        let digest = sha256_hex(&bytes);
        Self { bytes: Arc::new(bytes), media_type: media_type.into(), digest }
    }

    /// Reads an image file, guessing the media type from the extension.
    pub fn from_path(path: &std::path::Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        let media_type = match ext.as_str() {
            "png" => "image/png",
            "jpg" | "jpeg" => "image/jpeg",
            "gif" => "image/gif",
            "webp" => "image/webp",
            "bmp" => "image/bmp",
            _ => "application/octet-stream",
        };
        Ok(Self::new(bytes, media_type))
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn media_type(&self) -> &str {
        &self.media_type
    }

    /// Lowercase hex SHA-256 of the raw bytes.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn base64(&self) -> String {
        base64::engine::general_purpose::STANDARD.encode(self.bytes.as_slice())
    }
}

/// Routing hints attached to chat requests. Real model servers ignore them;
/// the scripted mock uses them to pick a fixture.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMeta {
    pub action: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub prompt: String,
    #[serde(default)]
    pub image: Option<ImageData>,
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<ChatMeta>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::Precondition(format!("temperature {} < 0", self.temperature)));
        }
        if self.max_tokens < 1 {
            return Err(BackendError::Precondition("max_tokens must be at least 1".into()));
        }
        Ok(())
    }
}

/// Body of a `/chat` reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatReply {
    pub text: String,
    /// Server-side inference time, when the server reports it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub latency_ms: u64,
    pub cache_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbedInput {
    Text { text: String },
    Image { image: ImageData },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub model: String,
    #[serde(flatten)]
    pub input: EmbedInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vector: Vec<f64>,
    pub dim: usize,
}

impl EmbedResponse {
    pub fn new(vector: Vec<f64>) -> Self {
        let dim = vector.len();
        Self { vector, dim }
    }

    pub fn validate(&self, raw: &str) -> Result<(), BackendError> {
        if self.vector.len() != self.dim {
            return Err(BackendError::protocol(
                format!("embedding has {} values but dim {}", self.vector.len(), self.dim),
                raw,
            ));
        }
        if self.vector.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::protocol("embedding contains non-finite values", raw));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagRequest {
    pub model: String,
    pub image: ImageData,
    pub labels: Vec<String>,
}

impl TagRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.labels.is_empty() {
            return Err(BackendError::Precondition("tag request needs at least one label".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagResponse {
    pub confidences: Vec<f64>,
}

impl TagResponse {
    pub fn validate(&self, n_labels: usize, raw: &str) -> Result<(), BackendError> {
        if self.confidences.len() != n_labels {
            return Err(BackendError::protocol(
                format!("{} confidences for {} labels", self.confidences.len(), n_labels),
                raw,
            ));
        }
        if let Some(c) = self.confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(BackendError::protocol(format!("confidence {c} outside [0, 1]"), raw));
        }
        Ok(())
    }
}

/// The three model services behind one handle.
pub trait Backend: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError>;
    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, BackendError>;
    fn tag(&self, req: &TagRequest) -> Result<TagResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).chat(req)
    }
    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, BackendError> {
        (**self).embed(req)
    }
    fn tag(&self, req: &TagRequest) -> Result<TagResponse, BackendError> {
        (**self).tag(req)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).chat(req)
    }
    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, BackendError> {
        (**self).embed(req)
    }
    fn tag(&self, req: &TagRequest) -> Result<TagResponse, BackendError> {
        (**self).tag(req)
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).chat(req)
    }
    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, BackendError> {
        (**self).embed(req)
    }
    fn tag(&self, req: &TagRequest) -> Result<TagResponse, BackendError> {
        (**self).tag(req)
    }
}
