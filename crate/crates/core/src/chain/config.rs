use std::fmt;

use serde::{Deserialize, Serialize};

use super::templates::PromptTemplates;
use super::ChainError;
use crate::domain::ActionKind;
use crate::filter::FilterConfig;

/// The action prefixes that make sense as ablation rows. Final (5) is always
/// present; earlier actions are added one at a time.
pub const VALID_SUBSETS: [&[u8]; 5] = [&[5], &[1, 5], &[1, 2, 5], &[1, 2, 3, 5], &[1, 2, 3, 4, 5]];

/// Which interactions run for each image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawMode", into = "RawMode")]
pub enum ChainMode {
    /// A subset of the five chain actions, sorted, always ending in 5.
    Actions(Vec<u8>),
    Merged,
    BaselineVqa,
    BaselineCaption,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawMode {
    Actions(Vec<u8>),
    Named(String),
}

impl TryFrom<RawMode> for ChainMode {
    type Error = ChainError;
    fn try_from(raw: RawMode) -> Result<Self, Self::Error> {
        match raw {
            RawMode::Actions(a) => ChainMode::actions(&a),
            RawMode::Named(n) => n.parse(),
        }
    }
}

impl From<ChainMode> for RawMode {
    fn from(m: ChainMode) -> Self {
        match m {
            ChainMode::Actions(a) => RawMode::Actions(a),
            other => RawMode::Named(other.label()),
        }
    }
}

impl ChainMode {
    pub fn full() -> Self {
        ChainMode::Actions(vec![1, 2, 3, 4, 5])
    }

    pub fn actions(subset: &[u8]) -> Result<Self, ChainError> {
        let mut sorted = subset.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if VALID_SUBSETS.contains(&sorted.as_slice()) {
            Ok(ChainMode::Actions(sorted))
        } else {
            Err(ChainError::InvalidConfig(format!(
                "action subset {subset:?} is not one of {{5}}, {{1,5}}, {{1,2,5}}, {{1,2,3,5}}, {{1,2,3,4,5}}"
            )))
        }
    }

    /// The six configurations compared by `ablate`, baseline first.
    pub fn ablation_suite() -> Vec<ChainMode> {
        VALID_SUBSETS.iter().map(|s| ChainMode::Actions(s.to_vec())).chain([ChainMode::Merged]).collect()
    }

    pub fn runs(&self, action: ActionKind) -> bool {
        match (self, action.chain_index()) {
            (ChainMode::Actions(a), Some(i)) => a.contains(&i),
            (ChainMode::Merged, None) => action == ActionKind::MergedSingle,
            (ChainMode::BaselineVqa, None) => action == ActionKind::BaselineVqa,
            (ChainMode::BaselineCaption, None) => action == ActionKind::BaselineCaption,
            _ => false,
        }
    }

    /// Short name: `1+2+5`, `merged`, `baseline_vqa`, `baseline_caption`.
    pub fn label(&self) -> String {
        match self {
            ChainMode::Actions(a) => a.iter().map(u8::to_string).collect::<Vec<_>>().join("+"),
            ChainMode::Merged => "merged".into(),
            ChainMode::BaselineVqa => "baseline_vqa".into(),
            ChainMode::BaselineCaption => "baseline_caption".into(),
        }
    }
}

impl fmt::Display for ChainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl std::str::FromStr for ChainMode {
    type Err = ChainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "merged" | "merged_single" => Ok(ChainMode::Merged),
            "baseline_vqa" | "vqa" => Ok(ChainMode::BaselineVqa),
            "baseline_caption" | "caption" => Ok(ChainMode::BaselineCaption),
            "full" | "coa" => Ok(ChainMode::full()),
            other => {
                let nums: Result<Vec<u8>, _> = other.split(['+', ',']).map(|p| p.trim().parse::<u8>()).collect();
                match nums {
                    Ok(n) => ChainMode::actions(&n),
                    Err(_) => Err(ChainError::InvalidConfig(format!("unknown chain mode {s:?}"))),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Decoding {
    pub max_tokens: u32,
    pub yes_no_max_tokens: u32,
    pub temperature: f64,
    pub seed: Option<u64>,
}

impl Default for Decoding {
    fn default() -> Self {
        Self { max_tokens: 256, yes_no_max_tokens: 64, temperature: 0.0, seed: Some(0) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub mode: ChainMode,
    pub templates: PromptTemplates,
    pub filter: FilterConfig,
    pub decoding: Decoding,
    pub chat_model: String,
    pub ram_filter: bool,
    pub sigma: f64,
    pub parallelism: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            mode: ChainMode::full(),
            templates: PromptTemplates::default(),
            filter: FilterConfig::default(),
            decoding: Decoding::default(),
            chat_model: "llava-1.5-7b".into(),
            ram_filter: false,
            sigma: 0.73,
            parallelism: 4,
        }
    }
}

impl ChainConfig {
    pub fn with_mode(&self, mode: ChainMode) -> Self {
        Self { mode, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), ChainError> {
        if let ChainMode::Actions(a) = &self.mode {
            ChainMode::actions(a)?;
        }
        self.templates.validate()?;
        if self.parallelism == 0 {
            return Err(ChainError::InvalidConfig("parallelism must be at least 1".into()));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(ChainError::InvalidConfig(format!("sigma {} outside (0, 1)", self.sigma)));
        }
        if self.decoding.max_tokens == 0 || self.decoding.yes_no_max_tokens == 0 || self.decoding.temperature < 0.0 {
            return Err(ChainError::InvalidConfig("decoding needs max_tokens >= 1 and temperature >= 0".into()));
        }
        Ok(())
    }
}
