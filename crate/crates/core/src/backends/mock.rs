//! Scripted backend answering from a fixture file.
//!
//! Fixture format (JSON):
//!
//! ```json
//! {
//!   "latency_ms": 10,
//!   "chat": [
//!     {"image": "<sha256>", "action": "caption", "response": "a dog on grass"},
//!     {"image": "<sha256>", "action": "self_correct", "subject": "dog", "response": "Yes"},
//!     {"image": "<sha256>", "action": "final", "prompt_sha256": "<sha256>", "response": "dog"},
//!     {"image": "<sha256>", "action": "appearance", "error": "simulated outage"}
//!   ],
//!   "embed_text": {"This image contains dog": [1.0, 0.0]},
//!   "embed_image": {"<sha256>": [1.0, 0.0]},
//!   "tag": {"<sha256>": {"dog": 0.9}}
//! }
//! ```
//!
//! Chat lookups go from most to least specific: (subject, prompt hash),
//! (subject), (prompt hash), then an entry naming neither. Anything that does
//! not match is an error naming the key; there is no fallback response.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::marker::PhantomData;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::de::{Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};

use super::{
    sha256_hex, Backend, BackendError, ChatRequest, ChatResponse, EmbedInput, EmbedRequest, EmbedResponse, TagRequest,
    TagResponse,
};
use crate::domain::ActionKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatFixture {
    /// SHA-256 of the image bytes.
    pub image: String,
    pub action: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    /// Simulated service failure instead of a response.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ChatFixture {
    pub fn respond(image: &str, action: ActionKind, response: impl Into<String>) -> Self {
        Self {
            image: image.to_string(),
            action,
            subject: None,
            prompt_sha256: None,
            response: Some(response.into()),
            error: None,
        }
    }

    pub fn fail(image: &str, action: ActionKind, error: impl Into<String>) -> Self {
        Self { response: None, error: Some(error.into()), ..Self::respond(image, action, "") }
    }

    pub fn with_subject(mut self, subject: impl Into<String>) -> Self {
        self.subject = Some(subject.into());
        self
    }

    pub fn with_prompt(mut self, prompt: &str) -> Self {
        self.prompt_sha256 = Some(sha256_hex(prompt.as_bytes()));
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureFile {
    /// Synthetic latency reported for every chat call; defaults to 1 ms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
    #[serde(default)]
    pub chat: Vec<ChatFixture>,
    #[serde(default, deserialize_with = "unique_map")]
    pub embed_text: BTreeMap<String, Vec<f64>>,
    #[serde(default, deserialize_with = "unique_map")]
    pub embed_image: BTreeMap<String, Vec<f64>>,
    #[serde(default, deserialize_with = "unique_nested_map")]
    pub tag: BTreeMap<String, BTreeMap<String, f64>>,
}

impl FixtureFile {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Fixture(format!("reading {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| BackendError::Fixture(format!("{}: {e}", path.display())))
    }
}

struct UniqueMap<V>(BTreeMap<String, V>);

impl<'de, V: Deserialize<'de>> Deserialize<'de> for UniqueMap<V> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V_<V>(PhantomData<V>);
        impl<'de, V: Deserialize<'de>> Visitor<'de> for V_<V> {
            type Value = UniqueMap<V>;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map without duplicate keys")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
                let mut out = BTreeMap::new();
                while let Some((k, v)) = access.next_entry::<String, V>()? {
                    if out.contains_key(&k) {
                        return Err(serde::de::Error::custom(format!("duplicate key {k:?}")));
                    }
                    out.insert(k, v);
                }
                Ok(UniqueMap(out))
            }
        }
        d.deserialize_map(V_(PhantomData))
    }
}

fn unique_map<'de, D, V>(d: D) -> Result<BTreeMap<String, V>, D::Error>
where
    D: Deserializer<'de>,
    V: Deserialize<'de>,
{
    UniqueMap::<V>::deserialize(d).map(|m| m.0)
}

fn unique_nested_map<'de, D>(d: D) -> Result<BTreeMap<String, BTreeMap<String, f64>>, D::Error>
where
    D: Deserializer<'de>,
{
    let outer = UniqueMap::<UniqueMap<f64>>::deserialize(d)?;
    Ok(outer.0.into_iter().map(|(k, v)| (k, v.0)).collect())
}

type ChatKey = (String, ActionKind, Option<String>, Option<String>);

enum Scripted {
    Text(String),
    Fail(String),
}

pub struct MockBackend {
    latency_ms: u64,
    chat: HashMap<ChatKey, Scripted>,
    embed_text: BTreeMap<String, Vec<f64>>,
    embed_image: BTreeMap<String, Vec<f64>>,
    tag: BTreeMap<String, BTreeMap<String, f64>>,
    chat_calls: AtomicUsize,
    embed_calls: AtomicUsize,
    tag_calls: AtomicUsize,
}

impl MockBackend {
    pub fn from_fixtures(path: &Path) -> Result<Self, BackendError> {
        Self::new(FixtureFile::load(path)?)
    }

    pub fn new(file: FixtureFile) -> Result<Self, BackendError> {
        let mut chat = HashMap::new();
        for f in file.chat {
            let key = (
                f.image.to_ascii_lowercase(),
                f.action,
                f.subject.clone(),
                f.prompt_sha256.as_ref().map(|p| p.to_ascii_lowercase()),
            );
            let scripted = match (f.response, f.error) {
                (Some(text), None) => Scripted::Text(text),
                (None, Some(err)) => Scripted::Fail(err),
                _ => {
                    return Err(BackendError::Fixture(format!(
                        "chat entry {} needs exactly one of response/error",
                        describe(&key)
                    )))
                }
            };
            if chat.contains_key(&key) {
                return Err(BackendError::Fixture(format!("duplicate chat entry {}", describe(&key))));
            }
            chat.insert(key, scripted);
        }
        Ok(Self {
            latency_ms: file.latency_ms.unwrap_or(1),
            chat,
            embed_text: file.embed_text,
            embed_image: lower(file.embed_image),
            tag: lower(file.tag),
            chat_calls: AtomicUsize::new(0),
            embed_calls: AtomicUsize::new(0),
            tag_calls: AtomicUsize::new(0),
        })
    }

    /// Total requests answered (or refused) so far, across all endpoints.
    pub fn calls(&self) -> usize {
        self.chat_calls() + self.embed_calls.load(Ordering::SeqCst) + self.tag_calls.load(Ordering::SeqCst)
    }

    pub fn chat_calls(&self) -> usize {
        self.chat_calls.load(Ordering::SeqCst)
    }
}

fn lower<V>(m: BTreeMap<String, V>) -> BTreeMap<String, V> {
    m.into_iter().map(|(k, v)| (k.to_ascii_lowercase(), v)).collect()
}

fn describe(key: &ChatKey) -> String {
    let mut s = format!("(image={}, action={}", key.0, key.1);
    if let Some(subj) = &key.2 {
        s.push_str(&format!(", subject={subj:?}"));
    }
    if let Some(p) = &key.3 {
        s.push_str(&format!(", prompt_sha256={p}"));
    }
    s.push(')');
    s
}

impl Backend for MockBackend {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        self.chat_calls.fetch_add(1, Ordering::SeqCst);
        req.validate()?;
        let meta =
            req.meta.as_ref().ok_or_else(|| BackendError::MissingFixture("chat request without action meta".into()))?;
        let image = req.image.as_ref().map(|i| i.digest().to_string()).unwrap_or_default();
        let prompt = sha256_hex(req.prompt.as_bytes());
        let subject = meta.subject.clone();
        let candidates = [
            (subject.clone(), Some(prompt.clone())),
            (subject.clone(), None),
            (None, Some(prompt.clone())),
            (None, None),
        ];
        for (subj, p) in candidates {
            if let Some(s) = self.chat.get(&(image.clone(), meta.action, subj, p)) {
                return match s {
                    Scripted::Text(t) => {
                        Ok(ChatResponse { text: t.clone(), latency_ms: self.latency_ms, cache_hit: false })
                    }
                    Scripted::Fail(e) => Err(BackendError::Unavailable(e.clone())),
                };
            }
        }
        Err(BackendError::MissingFixture(format!("chat {}", describe(&(image, meta.action, subject, Some(prompt))))))
    }

    fn embed(&self, req: &EmbedRequest) -> Result<EmbedResponse, BackendError> {
        self.embed_calls.fetch_add(1, Ordering::SeqCst);
        let vector = match &req.input {
            EmbedInput::Text { text } => {
                self.embed_text.get(text).ok_or_else(|| BackendError::MissingFixture(format!("embed_text {text:?}")))?
            }
            EmbedInput::Image { image } => self
                .embed_image
                .get(image.digest())
                .ok_or_else(|| BackendError::MissingFixture(format!("embed_image {}", image.digest())))?,
        };
        Ok(EmbedResponse::new(vector.clone()))
    }

    fn tag(&self, req: &TagRequest) -> Result<TagResponse, BackendError> {
        req.validate()?;
        self.tag_calls.fetch_add(1, Ordering::SeqCst);
        let digest = req.image.digest();
        let table = self.tag.get(digest).ok_or_else(|| BackendError::MissingFixture(format!("tag image {digest}")))?;
        let confidences = req
            .labels
            .iter()
            .map(|l| {
                table
                    .get(l)
                    .copied()
                    .ok_or_else(|| BackendError::MissingFixture(format!("tag image {digest} label {l:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TagResponse { confidences })
    }
}
