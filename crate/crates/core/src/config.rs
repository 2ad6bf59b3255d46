//! The harness configuration file (TOML).
//!
//! ```toml
//! actions = [1, 2, 3, 4, 5]       # or "merged", "baseline_vqa", "baseline_caption"
//! templates = "templates.toml"    # optional; overrides individual prompts
//! parallelism = 4
//! ram_filter = false
//! sigma = 0.73
//!
//! [models]
//! chat = "llava-1.5-7b"
//! embed = "clip-vit-base-patch32"
//! tag = "ram-swin-large-14m"
//!
//! [decoding]
//! max_tokens = 256
//! yes_no_max_tokens = 64
//! temperature = 0.0
//! seed = 0
//!
//! [filter]
//! blocklist = ["image", "photo", "logo"]
//! min_token_len = 2
//!
//! [metric]
//! empty_prediction_policy = "score_half"
//! averaging = "splits"
//!
//! [endpoints]
//! sidecar = "http://127.0.0.1:8000"
//!
//! [retry]
//! attempts = 3
//! initial_backoff_ms = 1000
//! timeout_ms = 120000
//! ```
//!
//! Relative paths are resolved against the file's directory.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::backends::{sha256_hex, ChatApi, Endpoints, RetryPolicy};
use crate::chain::{ChainConfig, ChainError, ChainMode, Decoding, PromptTemplates};
use crate::filter::FilterConfig;
use crate::metrics::{Averaging, EmptyPredictionPolicy, MetricConfig, MetricError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Models {
    pub chat: String,
    pub embed: String,
    pub tag: String,
}

impl Default for Models {
    fn default() -> Self {
        let m = MetricConfig::default();
        Self { chat: ChainConfig::default().chat_model, embed: m.embed_model, tag: m.tag_model }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricSection {
    pub com_prompt_prefix: String,
    pub empty_prediction_policy: EmptyPredictionPolicy,
    pub averaging: Averaging,
}

impl Default for MetricSection {
    fn default() -> Self {
        let m = MetricConfig::default();
        Self {
            com_prompt_prefix: m.com_prompt_prefix,
            empty_prediction_policy: m.empty_prediction_policy,
            averaging: m.averaging,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointSection {
    /// Base URL serving all three endpoints; individual URLs override it.
    pub sidecar: Option<String>,
    pub chat: Option<String>,
    pub embed: Option<String>,
    pub tag: Option<String>,
    pub chat_api: Option<ChatApi>,
    pub api_token: Option<String>,
}

impl EndpointSection {
    pub fn endpoints(&self) -> Endpoints {
        let own = Endpoints {
            chat: self.chat.clone(),
            embed: self.embed.clone(),
            tag: self.tag.clone(),
            chat_api: self.chat_api,
            api_token: self.api_token.clone(),
        };
        match &self.sidecar {
            Some(base) => own.or(Endpoints::sidecar(base)),
            None => own,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrySection {
    pub attempts: u32,
    pub initial_backoff_ms: u64,
    pub timeout_ms: u64,
}

impl Default for RetrySection {
    fn default() -> Self {
        let r = RetryPolicy::default();
        Self {
            attempts: r.attempts,
            initial_backoff_ms: r.initial_backoff.as_millis() as u64,
            timeout_ms: r.timeout.as_millis() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub actions: ChainMode,
    pub templates: Option<PathBuf>,
    pub parallelism: usize,
    pub ram_filter: bool,
    pub sigma: f64,
    pub models: Models,
    pub decoding: Decoding,
    pub filter: FilterConfig,
    pub metric: MetricSection,
    pub endpoints: EndpointSection,
    pub retry: RetrySection,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        let c = ChainConfig::default();
        Self {
            actions: c.mode,
            templates: None,
            parallelism: c.parallelism,
            ram_filter: c.ram_filter,
            sigma: c.sigma,
            models: Models::default(),
            decoding: c.decoding,
            filter: c.filter,
            metric: MetricSection::default(),
            endpoints: EndpointSection::default(),
            retry: RetrySection::default(),
        }
    }
}

impl HarnessConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut cfg: HarnessConfig = toml::from_str(text)
            .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        resolve(&mut cfg.templates);
        resolve(&mut cfg.filter.extra_blocklist_path);
        resolve(&mut cfg.filter.noun_lexicon_path);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text, path)
    }

    pub fn chain_config(&self) -> Result<ChainConfig, ConfigError> {
        let templates = match &self.templates {
            Some(p) => PromptTemplates::load(p).map_err(ChainError::from)?,
            None => PromptTemplates::default(),
        };
        let cfg = ChainConfig {
            mode: self.actions.clone(),
            templates,
            filter: self.filter.clone(),
            decoding: self.decoding.clone(),
            chat_model: self.models.chat.clone(),
            ram_filter: self.ram_filter,
            sigma: self.sigma,
            parallelism: self.parallelism,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn metric_config(&self) -> Result<MetricConfig, ConfigError> {
        let cfg = MetricConfig {
            sigma: self.sigma,
            com_prompt_prefix: self.metric.com_prompt_prefix.clone(),
            strict_inequality: true,
            empty_prediction_policy: self.metric.empty_prediction_policy,
            averaging: self.metric.averaging,
            embed_model: self.models.embed.clone(),
            tag_model: self.models.tag.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            attempts: self.retry.attempts.max(1),
            initial_backoff: Duration::from_millis(self.retry.initial_backoff_ms),
            timeout: Duration::from_millis(self.retry.timeout_ms),
        }
    }
}

/// SHA-256 over everything that can change a prediction or a score: the
/// mode, template texts, filter and decoding settings and the metric config.
/// Endpoints and credentials are left out.
pub fn fingerprint(chain: &ChainConfig, metric: &MetricConfig) -> String {
    let v = json!({
        "mode": chain.mode.label(),
        "templates": chain.templates.hashes(),
        "filter": chain.filter,
        "decoding": chain.decoding,
        "chat_model": chain.chat_model,
        "ram_filter": chain.ram_filter,
        "metric": metric,
    });
    sha256_hex(v.to_string().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_defaults() {
        let c = HarnessConfig::parse("", Path::new("c.toml")).unwrap();
        assert_eq!(c, HarnessConfig::default());
        assert_eq!(c.chain_config().unwrap(), ChainConfig::default());
        assert_eq!(c.metric_config().unwrap(), MetricConfig::default());
        assert_eq!(c.retry_policy(), RetryPolicy::default());
    }

    #[test]
    fn full_file() {
        let text = r#"
            actions = [1, 5]
            parallelism = 2
            sigma = 0.6
            templates = "t.toml"
            [models]
            chat = "m"
            [metric]
            averaging = "images"
            empty_prediction_policy = "score_zero"
            [endpoints]
            sidecar = "http://h:1/"
            tag = "http://other/tag"
        "#;
        let c = HarnessConfig::parse(text, Path::new("/etc/coa/c.toml")).unwrap();
        assert_eq!(c.actions, ChainMode::Actions(vec![1, 5]));
        assert_eq!(c.templates.as_deref(), Some(Path::new("/etc/coa/t.toml")));
        let m = c.metric_config().unwrap();
        assert_eq!((m.sigma, m.averaging), (0.6, Averaging::Images));
        let e = c.endpoints.endpoints();
        assert_eq!(e.chat.as_deref(), Some("http://h:1/chat"));
        assert_eq!(e.tag.as_deref(), Some("http://other/tag"));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(HarnessConfig::parse("actions = [2, 5]", Path::new("c")).is_err());
        assert!(HarnessConfig::parse("bogus = 1", Path::new("c")).is_err());
        let c = HarnessConfig::parse("sigma = 1.5", Path::new("c")).unwrap();
        assert!(c.chain_config().is_err());
    }

    #[test]
    fn fingerprint_tracks_scoring_inputs() {
        let a = ChainConfig::default();
        let m = MetricConfig::default();
        assert_eq!(fingerprint(&a, &m), fingerprint(&a.clone(), &m.clone()));
        let mut t = a.clone();
        t.templates.caption = "Describe.".into();
        assert_ne!(fingerprint(&a, &m), fingerprint(&t, &m));
        let m2 = MetricConfig { sigma: 0.5, ..m.clone() };
        assert_ne!(fingerprint(&a, &m), fingerprint(&a, &m2));
        assert_ne!(fingerprint(&a, &m), fingerprint(&a.with_mode(ChainMode::Merged), &m));
    }
}
