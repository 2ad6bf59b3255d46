//! Caption filtering: turns a free-text caption into an entity label set.
//!
//! Pipeline: tokenize, drop short tokens, keep nouns, singularize, remove
//! blocklisted words, deduplicate keeping first occurrence.

pub mod inflect;

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{normalize_label, LabelSet};
pub use inflect::{default_rules, singularize, InflectionRules, SuffixRule};

const BUNDLED_LEXICON: &str = include_str!("../../data/nouns.txt");

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("blocklist entry {0:?} is not a valid label")]
    BadBlocklistEntry(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub blocklist: BTreeSet<String>,
    /// Extra blocklist words, one per line; added to `blocklist`.
    pub extra_blocklist_path: Option<PathBuf>,
    /// Replaces the bundled noun lexicon when set.
    pub noun_lexicon_path: Option<PathBuf>,
    pub min_token_len: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            blocklist: ["image", "photo", "logo"].into_iter().map(String::from).collect(),
            extra_blocklist_path: None,
            noun_lexicon_path: None,
            min_token_len: 2,
        }
    }
}

/// Set of singular nouns.
#[derive(Debug, Clone)]
pub struct NounLexicon {
    nouns: HashSet<String>,
}

impl NounLexicon {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_LEXICON, default_rules())
    }

    pub fn from_file(path: &Path, rules: &InflectionRules) -> Result<Self, FilterError> {
        let text = read(path)?;
        Ok(Self::parse(&text, rules))
    }

    /// One noun per line; blank lines and `#` comments are ignored. Entries
    /// are stored singularized so plural spellings in the file still match.
    pub fn parse(text: &str, rules: &InflectionRules) -> Self {
        let nouns = word_lines(text).map(|w| singularize(&w, rules)).collect();
        Self { nouns }
    }

    pub fn contains(&self, singular: &str) -> bool {
        self.nouns.contains(singular)
    }

    pub fn len(&self) -> usize {
        self.nouns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nouns.is_empty()
    }
}

fn read(path: &Path) -> Result<String, FilterError> {
    fs::read_to_string(path).map_err(|source| FilterError::Io { path: path.to_path_buf(), source })
}

fn word_lines(text: &str) -> impl Iterator<Item = String> + '_ {
    text.lines().map(|l| l.trim()).filter(|l| !l.is_empty() && !l.starts_with('#')).map(|l| l.to_lowercase())
}

/// Lowercased word tokens in caption order. Any non-alphanumeric character
/// separates tokens, so contractions split on the apostrophe.
pub fn tokenize_caption(caption: &str) -> Vec<String> {
    caption.to_lowercase().split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(String::from).collect()
}

pub fn is_noun(token: &str, rules: &InflectionRules, lexicon: &NounLexicon) -> bool {
    lexicon.contains(&singularize(token, rules))
}

/// A [`FilterConfig`] with its files loaded.
#[derive(Debug, Clone)]
pub struct CaptionFilter {
    rules: InflectionRules,
    lexicon: NounLexicon,
    blocklist: HashSet<String>,
    min_token_len: usize,
}

impl Default for CaptionFilter {
    fn default() -> Self {
        Self::from_config(&FilterConfig::default()).expect("default filter config has no files")
    }
}

impl CaptionFilter {
    pub fn from_config(cfg: &FilterConfig) -> Result<Self, FilterError> {
        let rules = InflectionRules::default();
        let lexicon = match &cfg.noun_lexicon_path {
            Some(p) => NounLexicon::from_file(p, &rules)?,
            None => NounLexicon::bundled(),
        };
        let mut words: Vec<String> = cfg.blocklist.iter().cloned().collect();
        if let Some(p) = &cfg.extra_blocklist_path {
            words.extend(word_lines(&read(p)?));
        }
        let mut blocklist = HashSet::new();
        for w in words {
            // blocklist entries are compared against normalized labels
            let normal = normalize_label(&w).ok_or_else(|| FilterError::BadBlocklistEntry(w.clone()))?;
            blocklist.insert(normal);
        }
        Ok(Self { rules, lexicon, blocklist, min_token_len: cfg.min_token_len })
    }

    pub fn rules(&self) -> &InflectionRules {
        &self.rules
    }

    pub fn lexicon(&self) -> &NounLexicon {
        &self.lexicon
    }

    pub fn is_blocked(&self, label: &str) -> bool {
        self.blocklist.contains(label)
    }

    pub fn is_noun(&self, token: &str) -> bool {
        is_noun(token, &self.rules, &self.lexicon)
    }

    pub fn filter_caption(&self, caption: &str) -> LabelSet {
        let mut seen = HashSet::new();
        let labels: Vec<String> = tokenize_caption(caption)
            .into_iter()
            .filter(|t| t.chars().count() >= self.min_token_len)
            .filter(|t| self.is_noun(t))
            .map(|t| singularize(&t, &self.rules))
            .filter(|l| l.chars().count() >= self.min_token_len)
            .filter(|l| !self.blocklist.contains(l))
            .filter(|l| seen.insert(l.clone()))
            .collect();
        LabelSet::from_normalized(labels).expect("filter output is normalized and unique")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_examples() {
        assert_eq!(tokenize_caption("A dog and two cats."), ["a", "dog", "and", "two", "cats"]);
        assert!(tokenize_caption("").is_empty());
        assert_eq!(tokenize_caption("dog, dog"), ["dog", "dog"]);
        assert_eq!(tokenize_caption("The dog's bowl"), ["the", "dog", "s", "bowl"]);
        assert_eq!(tokenize_caption("It’s a T-Shirt"), ["it", "s", "a", "t", "shirt"]);
    }

    #[test]
    fn noun_examples() {
        let f = CaptionFilter::default();
        assert!(f.is_noun("dogs"));
        assert!(!f.is_noun("running"));
        assert!(!f.is_noun("and"));
        assert!(!f.is_noun("two"));
        assert!(!f.is_noun("playing"));
    }

    #[test]
    fn filter_examples() {
        let f = CaptionFilter::default();
        assert_eq!(
            f.filter_caption("A photo of two dogs playing with a ball on the grass").labels(),
            ["dog", "ball", "grass"]
        );
        assert!(f.filter_caption("image").is_empty());
        assert_eq!(f.filter_caption("Dogs and a dog").labels(), ["dog"]);
        assert!(f.filter_caption("").is_empty());
    }

    #[test]
    fn bundled_lexicon_is_singular() {
        let rules = default_rules();
        for w in word_lines(BUNDLED_LEXICON) {
            assert_eq!(singularize(&w, rules), w, "lexicon entry {w} is not singular");
        }
        assert!(!NounLexicon::bundled().contains("photos"));
    }

    #[test]
    fn extra_blocklist_and_custom_lexicon() {
        let dir = tempfile::tempdir().unwrap();
        let block = dir.path().join("block.txt");
        fs::write(&block, "# extra\nGrass\n\n").unwrap();
        let lex = dir.path().join("nouns.txt");
        fs::write(&lex, "dog\nball\ngrass\nwidgets\n").unwrap();
        let cfg =
            FilterConfig { extra_blocklist_path: Some(block), noun_lexicon_path: Some(lex), ..FilterConfig::default() };
        let f = CaptionFilter::from_config(&cfg).unwrap();
        assert_eq!(f.filter_caption("a dog with widgets and a cat on grass").labels(), ["dog", "widget"]);
    }

    #[test]
    fn missing_lexicon_file_is_an_error() {
        let cfg = FilterConfig { noun_lexicon_path: Some("/nonexistent/nouns.txt".into()), ..Default::default() };
        assert!(matches!(CaptionFilter::from_config(&cfg), Err(FilterError::Io { .. })));
    }

    #[test]
    fn min_token_len_is_configurable() {
        let cfg = FilterConfig { min_token_len: 4, ..Default::default() };
        let f = CaptionFilter::from_config(&cfg).unwrap();
        assert_eq!(f.filter_caption("a cat and a dog near a horse").labels(), ["horse"]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn caption() -> impl Strategy<Value = String> {
            let words = prop::sample::select(vec![
                "dog", "dogs", "Cats", "a", "the", "photo", "image", "logo", "grass", "buses", "people", "running",
                "and", "two", "sheep", "leaves", "glasses", "sky", "x", "zq", "ball,",
            ]);
            prop::collection::vec(prop_oneof![words.prop_map(String::from), "[a-zA-Z.,']{1,9}"], 0..16)
                .prop_map(|ws| ws.join(" "))
        }

        proptest! {
            #[test]
            fn idempotent_and_closed(c in caption()) {
                let f = CaptionFilter::default();
                let out = f.filter_caption(&c);
                let again = f.filter_caption(&out.join(" "));
                prop_assert_eq!(&again, &out);
                let tokens = tokenize_caption(&c);
                for l in out.iter() {
                    prop_assert!(!f.is_blocked(l));
                    prop_assert_eq!(normalize_label(l), Some(l.to_string()));
                    prop_assert!(tokens.iter().any(|t| singularize(t, f.rules()) == l));
                }
            }
        }
    }
}
