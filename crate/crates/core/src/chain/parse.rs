//! Liberal parsers for free-form model output.

use std::collections::BTreeMap;

use crate::domain::{labelset_from, normalize_label, LabelSet};

/// Key under which appearance lines that match no entity are kept.
pub const RAW_KEY: &str = "_raw";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum YesNo {
    Yes,
    No,
    Ambiguous,
}

/// Classifies a yes/no answer by its first word.
pub fn parse_yes_no(answer: &str) -> YesNo {
    let first: String = answer
        .trim()
        .chars()
        .skip_while(|c| !c.is_alphanumeric())
        .take_while(|c| c.is_alphanumeric())
        .collect::<String>()
        .to_lowercase();
    match first.as_str() {
        "yes" => YesNo::Yes,
        "no" => YesNo::No,
        _ => YesNo::Ambiguous,
    }
}

fn strip_list_marker(item: &str) -> &str {
    let mut s = item.trim();
    s = s.trim_start_matches(['-', '*', '•', '·']).trim_start();
    // "1." / "1)" / "(1)"
    let inner = s.strip_prefix('(').unwrap_or(s);
    let digits = inner.len() - inner.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits > 0 {
        let after = &inner[digits..];
        if let Some(rest) = after.strip_prefix('.').or_else(|| after.strip_prefix(')')) {
            s = rest.trim_start();
        }
    }
    s
}

fn strip_leading_words<'a>(mut s: &'a str, words: &[&str]) -> &'a str {
    loop {
        let lower = s.to_lowercase();
        let hit = words.iter().find(|w| lower.starts_with(*w) && lower[w.len()..].starts_with(char::is_whitespace));
        match hit {
            Some(w) => s = s[w.len()..].trim_start(),
            None => return s,
        }
    }
}

/// Splits on commas, semicolons and newlines, strips list numbering,
/// bullets and leading articles, then normalizes and deduplicates.
pub fn parse_label_list(response: &str) -> LabelSet {
    let items = response
        .split([',', ';', '\n'])
        .map(strip_list_marker)
        .map(|s| strip_leading_words(s, &["a", "an", "the", "and", "or"]))
        .map(|s| s.trim_end_matches(['.', '!', ':']).trim());
    labelset_from(items)
}

/// The merged single-interaction answer ends with a `Labels:` line; when it
/// is missing the whole response is parsed as a list.
pub fn parse_merged_response(response: &str) -> LabelSet {
    let labels_line = response.lines().rev().find_map(|line| {
        let t = strip_list_marker(line);
        let lower = t.to_lowercase();
        lower.starts_with("labels:").then(|| t["labels:".len()..].to_string())
    });
    match labels_line {
        Some(l) => parse_label_list(&l),
        None => parse_label_list(response),
    }
}

/// Splits a batched appearance answer into one description per entity.
///
/// A line belongs to an entity when the text before its first `:` (or ` - `)
/// normalizes to that entity, or when the line starts with the entity name.
/// Unmatched non-empty lines are joined under [`RAW_KEY`].
pub fn parse_appearance(response: &str, entities: &LabelSet) -> BTreeMap<String, String> {
    let mut notes: BTreeMap<String, String> = BTreeMap::new();
    let mut raw: Vec<&str> = Vec::new();
    // longest names first so "traffic light" wins over "light"
    let mut by_len: Vec<&str> = entities.iter().collect();
    by_len.sort_by_key(|e| std::cmp::Reverse(e.len()));

    for line in response.lines() {
        let body = strip_list_marker(line).trim_start_matches("**").trim();
        if body.is_empty() {
            continue;
        }
        let matched = match_entity_line(body, &by_len);
        match matched {
            Some((entity, desc)) => {
                let slot = notes.entry(entity.to_string()).or_default();
                if !slot.is_empty() {
                    slot.push_str("; ");
                }
                slot.push_str(desc);
            }
            None => raw.push(line.trim()),
        }
    }
    if !raw.is_empty() {
        notes.insert(RAW_KEY.to_string(), raw.join("\n"));
    }
    notes
}

fn match_entity_line<'e, 'l>(body: &'l str, entities: &[&'e str]) -> Option<(&'e str, &'l str)> {
    if let Some(pos) = body.find(':').or_else(|| body.find(" - ").map(|p| p + 1)) {
        let head = body[..pos].replace("**", "");
        let head = strip_leading_words(head.trim(), &["a", "an", "the"]);
        if let Some(norm) = normalize_label(head) {
            if let Some(e) = entities.iter().find(|e| **e == norm) {
                return Some((e, body[pos + 1..].trim()));
            }
        }
    }
    let unarticled = strip_leading_words(body, &["a", "an", "the"]);
    let lower = unarticled.to_lowercase();
    if lower.len() != unarticled.len() {
        return None;
    }
    for e in entities {
        for form in [e.to_string(), format!("{e}s"), format!("{e}es")] {
            if lower.starts_with(&form) && lower[form.len()..].starts_with(|c: char| c.is_whitespace() || c == ',') {
                let desc = unarticled[form.len()..].trim_start_matches([',', ' ']);
                return Some((e, desc.trim()));
            }
        }
    }
    None
}

/// Prompt rendering of appearance notes: `entity: description` lines in
/// entity order, then any unparsed remainder.
pub fn render_appearance(notes: &BTreeMap<String, String>, entities: &LabelSet) -> String {
    let mut lines: Vec<String> = entities.iter().filter_map(|e| notes.get(e).map(|d| format!("{e}: {d}"))).collect();
    if let Some(raw) = notes.get(RAW_KEY) {
        lines.push(raw.clone());
    }
    lines.join("\n")
}
