//! Blocking HTTP client for the `/chat`, `/embed` and `/tag` endpoints.

use std::time::{Duration, Instant};

use log::warn;
use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    Backend, BackendError, ChatReply, ChatRequest, ChatResponse, EmbedRequest, EmbedResponse, Endpoint, TagRequest,
    TagResponse,
};

/// How `/chat` is spoken: the harness's own schema, or an OpenAI-style
/// chat-completions endpoint with the image sent as a data URI.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatApi {
    #[default]
    Native,
    Openai,
}

/// Service URLs. Each is the full URL that requests are POSTed to.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    pub chat: Option<String>,
    pub embed: Option<String>,
    pub tag: Option<String>,
    pub chat_api: Option<ChatApi>,
    /// Sent as `Authorization: Bearer <token>`.
    pub api_token: Option<String>,
}

impl Endpoints {
    /// All three endpoints on one sidecar base URL.
    pub fn sidecar(base: &str) -> Self {
        let base = base.trim_end_matches('/');
        Self {
            chat: Some(format!("{base}/chat")),
            embed: Some(format!("{base}/embed")),
            tag: Some(format!("{base}/tag")),
            ..Self::default()
        }
    }

    /// Reads `COA_SIDECAR_URL`, `COA_CHAT_URL`, `COA_EMBED_URL`, `COA_TAG_URL`,
    /// `COA_CHAT_API` and `COA_API_TOKEN`.
    pub fn from_env() -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        let base = var("COA_SIDECAR_URL").map(|b| Self::sidecar(&b)).unwrap_or_default();
        Self {
            chat: var("COA_CHAT_URL"),
            embed: var("COA_EMBED_URL"),
            tag: var("COA_TAG_URL"),
            chat_api: var("COA_CHAT_API").and_then(|v| match v.to_ascii_lowercase().as_str() {
                "openai" => Some(ChatApi::Openai),
                "native" => Some(ChatApi::Native),
                _ => None,
            }),
            api_token: var("COA_API_TOKEN"),
        }
        .or(base)
    }

    /// Field-wise: keep `self`'s value where set, otherwise take `lower`'s.
    pub fn or(self, lower: Endpoints) -> Endpoints {
        Endpoints {
            chat: self.chat.or(lower.chat),
            embed: self.embed.or(lower.embed),
            tag: self.tag.or(lower.tag),
            chat_api: self.chat_api.or(lower.chat_api),
            api_token: self.api_token.or(lower.api_token),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.chat.is_none() && self.embed.is_none() && self.tag.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, initial_backoff: Duration::from_secs(1), timeout: Duration::from_secs(120) }
    }
}

pub struct HttpBackend {
    endpoints: Endpoints,
    retry: RetryPolicy,
    client: Client,
}

impl HttpBackend {
    pub fn new(endpoints: Endpoints, retry: RetryPolicy) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(retry.timeout)
            .build()
            .map_err(|e| BackendError::Config(format!("building http client: {e}")))?;
        Ok(Self { endpoints, retry, client })
    }

    fn url(&self, endpoint: Endpoint) -> Result<&str, BackendError> {
        let url = match endpoint {
            Endpoint::Chat => &self.endpoints.chat,
            Endpoint::Embed => &self.endpoints.embed,
            Endpoint::Tag => &self.endpoints.tag,
        };
        url.as_deref().ok_or_else(|| BackendError::Config(format!("no {endpoint} endpoint configured")))
    }

    fn post_once(&self, url: &str, body: &Value) -> Result<String, BackendError> {
        let mut rb = self.client.post(url).json(body);
        if let Some(tok) = &self.endpoints.api_token {
            rb = rb.bearer_auth(tok);
        }
        let resp = rb.send().map_err(classify)?;
        let status = resp.status();
        let text = resp.text().map_err(classify)?;
        if !status.is_success() {
            return Err(BackendError::Http { status: status.as_u16(), body: text });
        }
        Ok(text)
    }

    /// POSTs with bounded retries and exponential backoff on retryable errors.
    fn post(&self, endpoint: Endpoint, body: &Value) -> Result<(String, Duration), BackendError> {
        let url = self.url(endpoint)?;
        let mut backoff = self.retry.initial_backoff;
        let attempts = self.retry.attempts.max(1);
        for attempt in 1..=attempts {
            let start = Instant::now();
            match self.post_once(url, body) {
                Ok(text) => return Ok((text, start.elapsed())),
                Err(e) if e.is_retryable() && attempt < attempts => {
                    warn!("{endpoint} attempt {attempt}/{attempts} failed: {e}; retrying in {backoff:?}");
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
                Err(e) => return Err(e),
            }
        }
        unreachable!("loop returns on the last attempt")
    }

    fn chat_openai(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let mut content = vec![json!({"type": "text", "text": req.prompt})];
        if let Some(img) = &req.image {
            let uri = format!("data:{};base64,{}", img.media_type(), img.base64());
            content.push(json!({"type": "image_url", "image_url": {"url": uri}}));
        }
        let mut body = json!({
            "model": req.model,
            "messages": [{"role": "user", "content": content}],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
            "stream": false,
        });
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        let (raw, elapsed) = self.post(Endpoint::Chat, &body)?;
        let parsed: Value =
            serde_json::from_str(&raw).map_err(|e| BackendError::protocol(format!("invalid json: {e}"), &raw))?;
        let text = parsed
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::protocol("missing choices[0].message.content", &raw))?;
        Ok(ChatResponse { text: text.to_string(), latency_ms: millis(elapsed), cache_hit: false })
    }
}

fn millis(d: Duration) -> u64 {
    (d.as_millis() as u64).max(1)
}

fn classify(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout(e.to_string())
    } else if e.is_connect() || e.is_request() {
        BackendError::Unavailable(e.to_string())
    } else if e.is_body() || e.is_decode() {
        BackendError::protocol(e.to_string(), "")
    } else {
        BackendError::Unavailable(e.to_string())
    }
}

fn parse<T: for<'de> Deserialize<'de>>(raw: &str) -> Result<T, BackendError> {
    serde_json::from_str(raw).map_err(|e| BackendError::protocol(format!("unexpected response body: {e}"), raw))
}

impl Backend for HttpBackend {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        req.validate()?;
        if self.endpoints.chat_api.unwrap_or_default() == ChatApi::Openai {
            return self.chat_openai(req);
        }
        let body = serde_json::to_value(req).expect("chat request serializes");
        let (raw, elapsed) = self.post(Endpoint::Chat, &body)?;
        let reply: ChatReply = parse(&raw)?;
        let latency_ms = reply.latency_ms.filter(|&l| l > 0).unwrap_or_else(|| millis(elapsed));
        Ok(ChatResponse { text: reply.text, latency_ms, cache_hit: false })
    }

    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, BackendError> {
        let body = serde_json::to_value(req).expect("embed request serializes");
        let (raw, _) = self.post(Endpoint::Embed, &body)?;
        let resp: EmbedResponse = parse(&raw)?;
        resp.validate(&raw)?;
        Ok(resp)
    }

    fn tag(&self, req: &TagRequest) -> Result<TagResponse, BackendError> {
        req.validate()?;
        let body = serde_json::to_value(req).expect("tag request serializes");
        let (raw, _) = self.post(Endpoint::Tag, &body)?;
        let resp: TagResponse = parse(&raw)?;
        resp.validate(req.labels.len(), &raw)?;
        Ok(resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_urls() {
        let e = Endpoints::sidecar("http://localhost:8000/");
        assert_eq!(e.chat.as_deref(), Some("http://localhost:8000/chat"));
        assert_eq!(e.tag.as_deref(), Some("http://localhost:8000/tag"));
    }

    #[test]
    fn precedence_merge() {
        let flag = Endpoints { chat: Some("flag".into()), ..Default::default() };
        let file = Endpoints { chat: Some("file".into()), embed: Some("file".into()), ..Default::default() };
        let env = Endpoints { embed: Some("env".into()), tag: Some("env".into()), ..Default::default() };
        let merged = flag.or(file).or(env);
        assert_eq!(merged.chat.as_deref(), Some("flag"));
        assert_eq!(merged.embed.as_deref(), Some("file"));
        assert_eq!(merged.tag.as_deref(), Some("env"));
    }

    #[test]
    fn unconfigured_endpoint_is_config_error() {
        let b = HttpBackend::new(Endpoints::default(), RetryPolicy::default()).unwrap();
        let req = EmbedRequest { model: "m".into(), input: super::super::EmbedInput::Text { text: "a".into() } };
        assert!(matches!(b.embed(&req), Err(BackendError::Config(_))));
    }
}
