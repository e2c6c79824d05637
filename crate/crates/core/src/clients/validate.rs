use std::fmt;

use serde::{Deserialize, Serialize};

/// Default word budget for one reasoning paragraph.
pub const MAX_REASONING_WORDS: usize = 80;

pub const FORBIDDEN_PHRASES: [&str; 7] = [
    "ground truth",
    "expert",
    "GT",
    "dataset",
    "label",
    "according to the images",
    "the trajectory suggests",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReasoningConstraints {
    pub max_words: usize,
    pub single_paragraph: bool,
    pub forbidden: Vec<String>,
}

impl Default for ReasoningConstraints {
    fn default() -> Self {
        Self {
            max_words: MAX_REASONING_WORDS,
            single_paragraph: true,
            forbidden: FORBIDDEN_PHRASES.iter().map(|p| p.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rejection {
    Empty,
    TooLong { words: usize, max: usize },
    LineBreak,
    Forbidden(String),
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::Empty => f.write_str("empty"),
            Rejection::TooLong { words, max } => write!(f, "too long ({words} words, max {max})"),
            Rejection::LineBreak => f.write_str("contains a line break"),
            Rejection::Forbidden(p) => write!(f, "forbidden: \"{p}\""),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(Rejection),
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept)
    }
}

/// Case-insensitive phrase match that only counts whole words, so "GT"
/// does not fire inside "length".
fn contains_phrase(haystack: &str, phrase: &str) -> bool {
    let hay = haystack.to_lowercase();
    let needle = phrase.to_lowercase();
    if needle.is_empty() {
        return false;
    }
    let is_word = |c: char| c.is_alphanumeric() || c == '_';
    let mut from = 0;
    while let Some(pos) = hay[from..].find(&needle) {
        let at = from + pos;
        let end = at + needle.len();
        let before_ok = hay[..at].chars().next_back().is_none_or(|c| !is_word(c));
        let after_ok = hay[end..].chars().next().is_none_or(|c| !is_word(c));
        if before_ok && after_ok {
            return true;
        }
        from = at + hay[at..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

pub fn validate_reasoning(text: &str, constraints: &ReasoningConstraints) -> Verdict {
    let words = text.split_whitespace().count();
    if words == 0 {
        return Verdict::Reject(Rejection::Empty);
    }
    if words > constraints.max_words {
        return Verdict::Reject(Rejection::TooLong {
            words,
            max: constraints.max_words,
        });
    }
    if constraints.single_paragraph && text.contains(['\n', '\r']) {
        return Verdict::Reject(Rejection::LineBreak);
    }
    match constraints
        .forbidden
        .iter()
        .find(|p| contains_phrase(text, p))
    {
        Some(p) => Verdict::Reject(Rejection::Forbidden(p.clone())),
        None => Verdict::Accept,
    }
}
