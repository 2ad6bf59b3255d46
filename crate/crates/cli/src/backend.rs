use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, ValueEnum};
use coa_core::backends::{
    Backend, CachedBackend, ChatApi, Endpoints, HttpBackend, MockBackend, ResponseCache, RetryPolicy,
};
use coa_core::config::HarnessConfig;

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChatApiArg {
    Native,
    Openai,
}

/// Where model calls go. Either a fixture file or HTTP endpoints; endpoint
/// values come from flags, then the config file, then the environment.
#[derive(Debug, Clone, Args, Default)]
pub struct BackendArgs {
    /// Scripted fixture file answering every call offline.
    #[arg(long, conflicts_with_all = ["endpoint", "chat_url", "embed_url", "tag_url"])]
    pub fixtures: Option<PathBuf>,
    /// Base URL serving /chat, /embed and /tag.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub chat_url: Option<String>,
    #[arg(long)]
    pub embed_url: Option<String>,
    #[arg(long)]
    pub tag_url: Option<String>,
    /// Wire format of the chat endpoint.
    #[arg(long, value_enum)]
    pub chat_api: Option<ChatApiArg>,
    /// Response cache directory (defaults to `<out>/cache`).
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Send every request to the backend.
    #[arg(long)]
    pub no_cache: bool,
}

impl BackendArgs {
    fn flag_endpoints(&self) -> Endpoints {
        let own = Endpoints {
            chat: self.chat_url.clone(),
            embed: self.embed_url.clone(),
            tag: self.tag_url.clone(),
            chat_api: self.chat_api.map(|a| match a {
                ChatApiArg::Native => ChatApi::Native,
                ChatApiArg::Openai => ChatApi::Openai,
            }),
            api_token: None,
        };
        match &self.endpoint {
            Some(base) => own.or(Endpoints::sidecar(base)),
            None => own,
        }
    }

    pub fn endpoints(&self, cfg: &HarnessConfig) -> Endpoints {
        self.flag_endpoints().or(cfg.endpoints.endpoints()).or(Endpoints::from_env())
    }

    fn raw(&self, cfg: &HarnessConfig, retry: RetryPolicy) -> CliResult<Box<dyn Backend>> {
        if let Some(path) = &self.fixtures {
            if !path.is_file() {
                return Err(CliError::usage(format!("fixture file {} does not exist", path.display())));
            }
            return Ok(Box::new(MockBackend::from_fixtures(path)?));
        }
        let endpoints = self.endpoints(cfg);
        if endpoints.is_empty() {
            return Err(CliError::usage(
                "no backend: pass --fixtures, --endpoint, or configure endpoints in the config file or COA_SIDECAR_URL",
            ));
        }
        Ok(Box::new(HttpBackend::new(endpoints, retry)?))
    }

    /// The backend, behind the response cache unless caching is off or
    /// there is nowhere to put it.
    pub fn build(&self, cfg: &HarnessConfig, default_cache: Option<PathBuf>) -> CliResult<Box<dyn Backend>> {
        let raw = self.raw(cfg, cfg.retry_policy())?;
        if self.no_cache {
            return Ok(raw);
        }
        match self.cache_dir.clone().or(default_cache) {
            Some(dir) => {
                let cache = ResponseCache::open(&dir).with_context(|| format!("opening cache {}", dir.display()))?;
                Ok(Box::new(CachedBackend::new(raw, cache)))
            }
            None => Ok(raw),
        }
    }

    /// The backend with no cache in front, for latency measurements.
    pub fn build_uncached(&self, cfg: &HarnessConfig) -> CliResult<Box<dyn Backend>> {
        self.raw(cfg, cfg.retry_policy())
    }
}
