//! English plural → singular normalization.
//!
//! Lookup order: invariant words, irregular table, then the ordered suffix
//! rules. The result is iterated to a fixed point so `singularize` is
//! idempotent for every input.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

/// Word forms that look plural but are left untouched.
const INVARIANT: &[&str] = &[
    "sheep",
    "deer",
    "fish",
    "moose",
    "bison",
    "salmon",
    "trout",
    "shrimp",
    "swine",
    "aircraft",
    "series",
    "species",
    "news",
    "lens",
    "canvas",
    "atlas",
    "gas",
    "chaos",
    "bias",
    "christmas",
    "pants",
    "jeans",
    "shorts",
    "trousers",
    "scissors",
    "clothes",
    "glasses",
    "sunglasses",
    "eyeglasses",
    "goggles",
    "binoculars",
    "tongs",
    "pliers",
    "physics",
    "mathematics",
    "athletics",
    "gymnastics",
    "billiards",
];

const IRREGULAR: &[(&str, &str)] = &[
    ("people", "person"),
    ("persons", "person"),
    ("men", "man"),
    ("women", "woman"),
    ("children", "child"),
    ("feet", "foot"),
    ("teeth", "tooth"),
    ("geese", "goose"),
    ("mice", "mouse"),
    ("oxen", "ox"),
    ("knives", "knife"),
    ("wives", "wife"),
    ("lives", "life"),
    ("leaves", "leaf"),
    ("wolves", "wolf"),
    ("shelves", "shelf"),
    ("halves", "half"),
    ("calves", "calf"),
    ("loaves", "loaf"),
    ("thieves", "thief"),
    ("scarves", "scarf"),
    ("hooves", "hoof"),
    ("elves", "elf"),
    ("potatoes", "potato"),
    ("tomatoes", "tomato"),
    ("heroes", "hero"),
    ("echoes", "echo"),
    ("volcanoes", "volcano"),
    ("mosquitoes", "mosquito"),
    ("movies", "movie"),
    ("cookies", "cookie"),
    ("ties", "tie"),
    ("pies", "pie"),
    ("brownies", "brownie"),
    ("zombies", "zombie"),
    ("selfies", "selfie"),
    ("headaches", "headache"),
    ("niches", "niche"),
    ("caches", "cache"),
    ("moustaches", "moustache"),
    ("mustaches", "mustache"),
    ("avalanches", "avalanche"),
    ("quizzes", "quiz"),
    ("lenses", "lens"),
    ("gases", "gas"),
    ("canvases", "canvas"),
    ("atlases", "atlas"),
    ("cacti", "cactus"),
    ("fungi", "fungus"),
    ("octopi", "octopus"),
    ("criteria", "criterion"),
    ("phenomena", "phenomenon"),
];

/// A suffix rewrite. Applies when the word ends with `suffix`, has at least
/// `min_len` characters and does not end with any of `unless_ends`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuffixRule {
    pub suffix: String,
    pub replacement: String,
    pub min_len: usize,
    pub unless_ends: Vec<String>,
}

impl SuffixRule {
    fn new(suffix: &str, replacement: &str, min_len: usize, unless_ends: &[&str]) -> Self {
        Self {
            suffix: suffix.into(),
            replacement: replacement.into(),
            min_len,
            unless_ends: unless_ends.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn apply(&self, word: &str) -> Option<String> {
        if !word.ends_with(&self.suffix) || word.chars().count() < self.min_len {
            return None;
        }
        if self.unless_ends.iter().any(|u| word.ends_with(u.as_str())) {
            return None;
        }
        let stem = &word[..word.len() - self.suffix.len()];
        Some(format!("{stem}{}", self.replacement))
    }
}

#[derive(Debug, Clone)]
pub struct InflectionRules {
    pub invariant: HashSet<String>,
    pub irregulars: HashMap<String, String>,
    pub suffix_rules: Vec<SuffixRule>,
}

impl Default for InflectionRules {
    fn default() -> Self {
        Self {
            invariant: INVARIANT.iter().map(|s| s.to_string()).collect(),
            irregulars: IRREGULAR.iter().map(|(p, s)| (p.to_string(), s.to_string())).collect(),
            suffix_rules: vec![
                SuffixRule::new("ies", "y", 5, &[]),
                SuffixRule::new("sses", "ss", 5, &[]),
                SuffixRule::new("uses", "us", 5, &["ouses", "auses"]),
                SuffixRule::new("xes", "x", 4, &[]),
                SuffixRule::new("zzes", "zz", 5, &[]),
                SuffixRule::new("ches", "ch", 5, &[]),
                SuffixRule::new("shes", "sh", 5, &[]),
                SuffixRule::new("s", "", 3, &["ss", "us", "is"]),
            ],
        }
    }
}

impl InflectionRules {
    fn step(&self, word: &str) -> Option<String> {
        if self.invariant.contains(word) {
            return None;
        }
        if let Some(s) = self.irregulars.get(word) {
            return (s != word).then(|| s.clone());
        }
        self.suffix_rules.iter().find_map(|r| r.apply(word))
    }
}

pub fn default_rules() -> &'static InflectionRules {
    static RULES: OnceLock<InflectionRules> = OnceLock::new();
    RULES.get_or_init(InflectionRules::default)
}

/// Singular form of a lowercase token; identity when no plural pattern applies.
pub fn singularize(token: &str, rules: &InflectionRules) -> String {
    let mut word = token.to_string();
    // every step either shortens the word or maps it into the irregular
    // table's value set, so a handful of rounds always suffices
    for _ in 0..8 {
        match rules.step(&word) {
            Some(next) if next != word && !next.is_empty() => word = next,
            _ => break,
        }
    }
    word
}
