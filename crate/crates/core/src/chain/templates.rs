//! Prompt templates with `{slot}` placeholders.
//!
//! The two baseline prompts are the standard captioning / VQA prompts used by
//! BLIP-2 style demos. The chain templates are defaults written for each
//! action's role; override any of them from a TOML file.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::sha256_hex;

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("template {template}: slot {{{slot}}} appears {count} times, expected exactly once")]
    SlotCount { template: &'static str, slot: &'static str, count: usize },
    #[error("template {template}: unknown placeholder {{{name}}}")]
    UnknownSlot { template: &'static str, name: String },
    #[error("template {template}: unbalanced brace")]
    Unbalanced { template: &'static str },
    #[error("reading templates: {0}")]
    Load(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptTemplates {
    pub caption: String,
    pub self_correct: String,
    pub appearance: String,
    pub relationship: String,
    #[serde(rename = "final")]
    pub final_: String,
    pub merged_single: String,
    pub baseline_vqa: String,
    pub baseline_caption: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            caption: "Write a single-sentence caption describing this image.".into(),
            self_correct: "Is there a {entity} in this image? Answer with Yes or No.".into(),
            appearance: "The image contains the following entities: {entities}.\n\
                For each entity, describe its appearance and attributes (color, size, shape, material, state).\n\
                Answer with one line per entity in the form \"entity: description\"."
                .into(),
            relationship: "The image contains the following entities: {entities}.\n\
                Their appearance:\n{appearance}\n\
                Describe the relationships between these entities, and between each entity and the scene."
                .into(),
            final_: "Entities found so far: {entities}\n\
                Appearance details:\n{appearance}\n\
                Relationships:\n{relationships}\n\
                Using the image and the information above, list every entity present in the image. \
                Answer only with a comma-separated list of short noun labels."
                .into(),
            merged_single: "Look at the image carefully. First write a one-sentence caption. \
                Then list the entities in the image, check that each one is really present, \
                and describe the appearance and attributes of each entity. \
                Next describe the relationships between the entities. \
                Finally, taking all of this into account, give the complete list of entities \
                on a last line that starts with \"Labels:\" followed by comma-separated short noun labels."
                .into(),
            baseline_vqa: "Question: What are the names of objects in this image? Answer:".into(),
            baseline_caption: "Question: what\u{2019}s in the image? Answer:".into(),
        }
    }
}

impl PromptTemplates {
    /// Declared slots per template, in field order.
    fn slots(&self) -> [(&'static str, &str, &'static [&'static str]); 8] {
        [
            ("caption", &self.caption, &[]),
            ("self_correct", &self.self_correct, &["entity"]),
            ("appearance", &self.appearance, &["entities"]),
            ("relationship", &self.relationship, &["entities", "appearance"]),
            ("final", &self.final_, &["entities", "appearance", "relationships"]),
            ("merged_single", &self.merged_single, &[]),
            ("baseline_vqa", &self.baseline_vqa, &[]),
            ("baseline_caption", &self.baseline_caption, &[]),
        ]
    }

    /// Reads a TOML file; keys not present keep their defaults.
    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| TemplateError::Load(format!("{}: {e}", path.display())))?;
        let t: PromptTemplates =
            toml::from_str(&text).map_err(|e| TemplateError::Load(format!("{}: {e}", path.display())))?;
        t.validate()?;
        Ok(t)
    }

    /// Every declared slot appears exactly once and nothing else looks like
    /// a placeholder.
    pub fn validate(&self) -> Result<(), TemplateError> {
        for (name, text, declared) in self.slots() {
            let found = placeholders(name, text)?;
            for p in &found {
                if !declared.contains(&p.as_str()) {
                    return Err(TemplateError::UnknownSlot { template: name, name: p.clone() });
                }
            }
            for slot in declared {
                let count = found.iter().filter(|p| p == slot).count();
                if count != 1 {
                    return Err(TemplateError::SlotCount { template: name, slot, count });
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of each template text, keyed by template name.
    pub fn hashes(&self) -> BTreeMap<String, String> {
        self.slots().iter().map(|(name, text, _)| (name.to_string(), sha256_hex(text.as_bytes()))).collect()
    }
}

fn placeholders(template: &'static str, text: &str) -> Result<Vec<String>, TemplateError> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find(['{', '}']) {
        if rest.as_bytes()[open] == b'}' {
            return Err(TemplateError::Unbalanced { template });
        }
        let after = &rest[open + 1..];
        let close = after.find('}').ok_or(TemplateError::Unbalanced { template })?;
        let name = &after[..close];
        if name.contains('{') {
            return Err(TemplateError::Unbalanced { template });
        }
        out.push(name.to_string());
        rest = &after[close + 1..];
    }
    Ok(out)
}

/// Single-pass substitution: values are inserted verbatim and never
/// re-scanned, so braces inside model output cannot trigger substitution.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                match values.iter().find(|(k, _)| *k == name) {
                    Some((_, v)) => out.push_str(v),
                    None => out.push_str(&rest[open..open + close + 2]),
                }
                rest = &after[close + 1..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        PromptTemplates::default().validate().unwrap();
    }

    #[test]
    fn baseline_prompt_texts() {
        let t = PromptTemplates::default();
        assert_eq!(t.baseline_caption, "Question: what’s in the image? Answer:");
        assert_eq!(t.baseline_vqa, "Question: What are the names of objects in this image? Answer:");
    }

    #[test]
    fn rendering_binds_every_slot() {
        let t = PromptTemplates::default();
        let rendered = [
            render(&t.self_correct, &[("entity", "dog")]),
            render(&t.appearance, &[("entities", "dog, ball")]),
            render(&t.relationship, &[("entities", "dog"), ("appearance", "dog: brown")]),
            render(&t.final_, &[("entities", "dog"), ("appearance", "dog: brown"), ("relationships", "none")]),
        ];
        for r in rendered {
            assert!(!r.contains('{') && !r.contains('}'), "{r}");
        }
    }

    #[test]
    fn values_are_not_rescanned() {
        assert_eq!(render("a {x} b", &[("x", "{x}")]), "a {x} b");
        assert_eq!(render("{x}{y}", &[("x", "1"), ("y", "2")]), "12");
    }

    #[test]
    fn validation_errors() {
        let mut t =
            PromptTemplates { self_correct: "Is there a {entity} or {entity}?".into(), ..PromptTemplates::default() };
        assert_eq!(t.validate(), Err(TemplateError::SlotCount { template: "self_correct", slot: "entity", count: 2 }));
        t.self_correct = "no slot".into();
        assert!(matches!(t.validate(), Err(TemplateError::SlotCount { count: 0, .. })));
        t.self_correct = "{entity} {colour}".into();
        assert!(matches!(t.validate(), Err(TemplateError::UnknownSlot { .. })));
        t.self_correct = "{entity} {".into();
        assert!(matches!(t.validate(), Err(TemplateError::Unbalanced { .. })));
        t.self_correct = "{entity} }".into();
        assert!(matches!(t.validate(), Err(TemplateError::Unbalanced { .. })));
    }

    #[test]
    fn partial_toml_override() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.toml");
        std::fs::write(&p, "caption = \"Describe briefly.\"\n").unwrap();
        let t = PromptTemplates::load(&p).unwrap();
        assert_eq!(t.caption, "Describe briefly.");
        assert_eq!(t.self_correct, PromptTemplates::default().self_correct);
        std::fs::write(&p, "self_correct = \"no slot here\"\n").unwrap();
        assert!(PromptTemplates::load(&p).is_err());
    }
}
