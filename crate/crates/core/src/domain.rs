//! Value types shared by the filter, chain, metrics and dataset modules.
//!
//! Everything here is plain data: no I/O, immutable once built, `Send + Sync`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::inflect;

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("label {0:?} is not in normal form")]
    NotNormalized(String),
    #[error("duplicate label {0:?}")]
    Duplicate(String),
    #[error("confidence list has {got} entries for {expected} labels")]
    ConfidenceLength { expected: usize, got: usize },
    #[error("confidence {0} outside [0, 1]")]
    ConfidenceRange(f64),
    #[error("split id {0} outside 0..=3")]
    InvalidSplit(i64),
}

/// Canonical form of a label: trimmed, lowercased, punctuation stripped from
/// every word, internal whitespace collapsed and the head (last) word
/// singularized.
///
/// Returns `None` when nothing is left, which callers treat as a droppable
/// token rather than an error.
pub fn normalize_label(raw: &str) -> Option<String> {
    let lowered = raw.trim().to_lowercase();
    let mut words: Vec<String> = lowered
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_string())
        .filter(|w| !w.is_empty())
        .collect();
    let mut head = words.pop()?;
    // singularizing can expose trailing punctuation ("a!s" -> "a!")
    for _ in 0..8 {
        let next = inflect::singularize(&head, inflect::default_rules());
        let next = next.trim_matches(|c: char| !c.is_alphanumeric());
        if next.is_empty() || next == head {
            break;
        }
        head = next.to_string();
    }
    words.push(head);
    Some(words.join(" "))
}

/// Normalizes each raw label, drops empties and keeps the first occurrence
/// of every normal form.
pub fn labelset_from<I, S>(raw: I) -> LabelSet
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut seen = HashSet::new();
    let labels =
        raw.into_iter().filter_map(|s| normalize_label(s.as_ref())).filter(|l| seen.insert(l.clone())).collect();
    LabelSet { labels, confidences: None }
}

/// Ordered, deduplicated set of normalized labels with optional per-label
/// confidences.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLabelSet")]
pub struct LabelSet {
    labels: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    confidences: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawLabelSet {
    labels: Vec<String>,
    #[serde(default)]
    confidences: Option<Vec<f64>>,
}

impl TryFrom<RawLabelSet> for LabelSet {
    type Error = LabelError;

    fn try_from(raw: RawLabelSet) -> Result<Self, Self::Error> {
        let set = LabelSet::from_normalized(raw.labels)?;
        match raw.confidences {
            Some(c) => set.with_confidences(c),
            None => Ok(set),
        }
    }
}

impl LabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set from labels that must already be in normal form and unique.
    pub fn from_normalized(labels: Vec<String>) -> Result<Self, LabelError> {
        let mut seen = HashSet::new();
        for label in &labels {
            if normalize_label(label).as_deref() != Some(label.as_str()) {
                return Err(LabelError::NotNormalized(label.clone()));
            }
            if !seen.insert(label.as_str()) {
                return Err(LabelError::Duplicate(label.clone()));
            }
        }
        Ok(Self { labels, confidences: None })
    }

    pub fn with_confidences(mut self, confidences: Vec<f64>) -> Result<Self, LabelError> {
        if confidences.len() != self.labels.len() {
            return Err(LabelError::ConfidenceLength { expected: self.labels.len(), got: confidences.len() });
        }
        if let Some(bad) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(LabelError::ConfidenceRange(*bad));
        }
        self.confidences = Some(confidences);
        Ok(self)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn confidences(&self) -> Option<&[f64]> {
        self.confidences.as_deref()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.iter().any(|l| l == label)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(String::as_str)
    }

    pub fn is_subset_of(&self, other: &LabelSet) -> bool {
        self.iter().all(|l| other.contains(l))
    }

    /// Keeps the labels whose index satisfies `keep`, preserving order and
    /// carrying confidences along.
    pub fn retain_indices(&self, keep: impl Fn(usize) -> bool) -> LabelSet {
        let idx: Vec<usize> = (0..self.labels.len()).filter(|&i| keep(i)).collect();
        LabelSet {
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
            confidences: self.confidences.as_ref().map(|c| idx.iter().map(|&i| c[i]).collect()),
        }
    }

    /// Comma-separated rendering used inside prompts.
    pub fn join(&self, sep: &str) -> String {
        self.labels.join(sep)
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.labels.join(", "))
    }
}

/// One of the four non-overlapping evaluation subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct SplitId(u8);

impl SplitId {
    pub const ALL: [SplitId; 4] = [SplitId(0), SplitId(1), SplitId(2), SplitId(3)];

    pub fn new(id: i64) -> Result<Self, LabelError> {
        match u8::try_from(id) {
            Ok(v) if v <= 3 => Ok(SplitId(v)),
            _ => Err(LabelError::InvalidSplit(id)),
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl TryFrom<i64> for SplitId {
    type Error = LabelError;
    fn try_from(v: i64) -> Result<Self, Self::Error> {
        SplitId::new(v)
    }
}

impl From<SplitId> for u8 {
    fn from(s: SplitId) -> u8 {
        s.0
    }
}

impl fmt::Display for SplitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A test image with its annotated labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub image_ref: PathBuf,
    pub gold_labels: LabelSet,
    pub split: SplitId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Caption,
    SelfCorrect,
    Appearance,
    Relationship,
    Final,
    MergedSingle,
    BaselineVqa,
    BaselineCaption,
}

impl ActionKind {
    pub const CHAIN: [ActionKind; 5] = [
        ActionKind::Caption,
        ActionKind::SelfCorrect,
        ActionKind::Appearance,
        ActionKind::Relationship,
        ActionKind::Final,
    ];

    /// 1-based position within the five-step chain, `None` for the
    /// single-call modes.
    pub fn chain_index(self) -> Option<u8> {
        ActionKind::CHAIN.iter().position(|a| *a == self).map(|p| p as u8 + 1)
    }

    pub fn from_chain_index(i: u8) -> Option<ActionKind> {
        ActionKind::CHAIN.get(usize::from(i).checked_sub(1)?).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Caption => "caption",
            ActionKind::SelfCorrect => "self_correct",
            ActionKind::Appearance => "appearance",
            ActionKind::Relationship => "relationship",
            ActionKind::Final => "final",
            ActionKind::MergedSingle => "merged_single",
            ActionKind::BaselineVqa => "baseline_vqa",
            ActionKind::BaselineCaption => "baseline_caption",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One prompt/response exchange with the chat model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub action: ActionKind,
    pub prompt: String,
    pub image_attached: bool,
    pub raw_response: String,
    /// Zero only for cache hits.
    pub latency_ms: u64,
    pub cache_hit: bool,
}

/// Per-image context accumulated across the actions of one chain run.
///
/// Fields fill in action order; `transcript` lists every interaction in the
/// order it was executed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub image_id: String,
    pub config: String,
    pub caption: Option<String>,
    pub initial_entities: LabelSet,
    /// `None` when the self-correct action was not part of the config.
    pub corrected_entities: Option<LabelSet>,
    pub appearance_notes: BTreeMap<String, String>,
    pub relationship_notes: String,
    pub final_labels: LabelSet,
    pub transcript: Vec<Interaction>,
    pub warnings: Vec<String>,
    pub total_latency_ms: u64,
}

impl ChainState {
    pub fn new(image_id: impl Into<String>, config: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            config: config.into(),
            caption: None,
            initial_entities: LabelSet::new(),
            corrected_entities: None,
            appearance_notes: BTreeMap::new(),
            relationship_notes: String::new(),
            final_labels: LabelSet::new(),
            transcript: Vec::new(),
            warnings: Vec::new(),
            total_latency_ms: 0,
        }
    }

    /// Entities the later actions operate on: the corrected list when
    /// self-correct ran, otherwise the caption entities.
    pub fn working_entities(&self) -> &LabelSet {
        self.corrected_entities.as_ref().unwrap_or(&self.initial_entities)
    }

    /// Copy with cache flags and latencies zeroed, for comparing the content
    /// of a cold run against a cache-warm rerun.
    pub fn without_timing(&self) -> ChainState {
        let mut s = self.clone();
        s.total_latency_ms = 0;
        for i in &mut s.transcript {
            i.latency_ms = 0;
            i.cache_hit = false;
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_label("Dogs").as_deref(), Some("dog"));
        assert_eq!(normalize_label("dog").as_deref(), Some("dog"));
        assert_eq!(normalize_label("  Buses ").as_deref(), Some("bus"));
        assert_eq!(normalize_label("Traffic  Lights").as_deref(), Some("traffic light"));
        assert_eq!(normalize_label("potted plant").as_deref(), Some("potted plant"));
        assert_eq!(normalize_label("dog."), Some("dog".into()));
        assert_eq!(normalize_label("  "), None);
        assert_eq!(normalize_label("..."), None);
    }

    #[test]
    fn labelset_from_examples() {
        assert_eq!(labelset_from(["Dog", "dogs", "cat"]).labels(), ["dog", "cat"]);
        assert!(labelset_from(Vec::<String>::new()).is_empty());
        assert_eq!(labelset_from(["photo"]).labels(), ["photo"]);
    }

    #[test]
    fn from_normalized_rejects_bad_input() {
        assert_eq!(LabelSet::from_normalized(vec!["Dogs".into()]), Err(LabelError::NotNormalized("Dogs".into())));
        assert_eq!(
            LabelSet::from_normalized(vec!["dog".into(), "dog".into()]),
            Err(LabelError::Duplicate("dog".into()))
        );
    }

    #[test]
    fn confidences_must_align() {
        let set = labelset_from(["dog", "cat"]);
        assert!(matches!(
            set.clone().with_confidences(vec![0.5]),
            Err(LabelError::ConfidenceLength { expected: 2, got: 1 })
        ));
        assert!(matches!(set.clone().with_confidences(vec![0.5, 1.5]), Err(LabelError::ConfidenceRange(_))));
        let with = set.with_confidences(vec![0.9, 0.1]).unwrap();
        let kept = with.retain_indices(|i| i == 0);
        assert_eq!(kept.labels(), ["dog"]);
        assert_eq!(kept.confidences(), Some(&[0.9][..]));
    }

    #[test]
    fn deserialization_validates() {
        let ok: LabelSet = serde_json::from_str(r#"{"labels":["dog","ball"]}"#).unwrap();
        assert_eq!(ok.len(), 2);
        assert!(serde_json::from_str::<LabelSet>(r#"{"labels":["Dogs"]}"#).is_err());
        assert!(serde_json::from_str::<LabelSet>(r#"{"labels":["dog"],"confidences":[0.1,0.2]}"#).is_err());
    }

    #[test]
    fn split_ids() {
        assert!(SplitId::new(3).is_ok());
        assert_eq!(SplitId::new(7), Err(LabelError::InvalidSplit(7)));
        assert_eq!(SplitId::new(-1), Err(LabelError::InvalidSplit(-1)));
        assert!(serde_json::from_str::<SplitId>("4").is_err());
    }

    #[test]
    fn chain_indices() {
        assert_eq!(ActionKind::Caption.chain_index(), Some(1));
        assert_eq!(ActionKind::Final.chain_index(), Some(5));
        assert_eq!(ActionKind::MergedSingle.chain_index(), None);
        assert_eq!(ActionKind::from_chain_index(3), Some(ActionKind::Appearance));
        assert_eq!(ActionKind::from_chain_index(0), None);
        assert_eq!(ActionKind::from_chain_index(6), None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalize_is_idempotent(raw in "[ A-Za-z.,'!-]{0,24}") {
                if let Some(once) = normalize_label(&raw) {
                    prop_assert_eq!(normalize_label(&once), Some(once.clone()));
                }
            }

            #[test]
            fn labelset_from_is_dedup_subsequence(raw in proptest::collection::vec("[A-Za-z]{1,8}s?", 0..12)) {
                let set = labelset_from(&raw);
                let normed: Vec<String> = raw.iter().filter_map(|r| normalize_label(r)).collect();
                // no two labels equal under normalization
                let uniq: HashSet<&str> = set.iter().collect();
                prop_assert_eq!(uniq.len(), set.len());
                // order is a subsequence of the normalized input
                let mut it = normed.iter();
                for l in set.iter() {
                    prop_assert!(it.any(|n| n == l));
                }
            }
        }
    }
}
