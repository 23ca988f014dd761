//! Topic, profanity, vocabulary and length screening.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::PostError;
use crate::text::{find_word, static_regex, truncate_at_sentence};

pub const LEXICONS: &str = include_str!("../../assets/postprocess/lexicons.json");

/// Topic expansions and the profanity list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Lexicons {
    #[serde(default)]
    pub topics: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub hap: Vec<String>,
}

impl Lexicons {
    pub fn builtin() -> Self {
        Self::from_json(LEXICONS).expect("shipped lexicons parse")
    }

    pub fn from_json(text: &str) -> Result<Self, PostError> {
        serde_json::from_str(text).map_err(|e| PostError::Config(format!("lexicons: {e}")))
    }

    /// The topic word itself plus its expansion list.
    pub fn terms_for(&self, topic: &str) -> Vec<String> {
        let key = topic.trim().to_lowercase();
        let mut terms = vec![key.clone()];
        if let Some(extra) = self.topics.get(&key) {
            terms.extend(extra.iter().map(|t| t.to_lowercase()));
        }
        terms.sort();
        terms.dedup();
        terms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenPolicy {
    #[serde(default)]
    pub avoid_topics: Vec<String>,
    /// Allowed content words. `None` disables the vocabulary check.
    #[serde(default)]
    pub vocabulary: Option<BTreeSet<String>>,
    #[serde(default)]
    pub char_limit: Option<usize>,
    #[serde(default = "yes")]
    pub block_hap: bool,
}

fn yes() -> bool {
    true
}

impl Default for ScreenPolicy {
    fn default() -> Self {
        Self {
            avoid_topics: Vec::new(),
            vocabulary: None,
            char_limit: None,
            block_hap: true,
        }
    }
}

impl ScreenPolicy {
    pub fn with_avoid_topics<S: Into<String>>(mut self, topics: impl IntoIterator<Item = S>) -> Self {
        self.avoid_topics = topics.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_char_limit(mut self, limit: usize) -> Self {
        self.char_limit = Some(limit);
        self
    }

    pub fn with_vocabulary<S: Into<String>>(mut self, words: impl IntoIterator<Item = S>) -> Self {
        self.vocabulary = Some(words.into_iter().map(|w| w.into().to_lowercase()).collect());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BlockReason {
    Topic { topic: String, term: String },
    Hap { term: String },
}

impl std::fmt::Display for BlockReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BlockReason::Topic { topic, term } => write!(f, "avoid topic `{topic}` (matched `{term}`)"),
            BlockReason::Hap { term } => write!(f, "HAP term `{term}`"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ScreenOutcome {
    Pass { text: String },
    /// Out-of-vocabulary content words; a regeneration signal.
    Flagged { text: String, words: Vec<String> },
    Blocked { reason: BlockReason },
}

impl ScreenOutcome {
    pub fn needs_regeneration(&self) -> bool {
        !matches!(self, ScreenOutcome::Pass { .. })
    }
}

const FUNCTION_WORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "nor", "so", "yet", "to", "in", "on", "at", "for", "with", "from", "by", "of",
    "as", "is", "was", "are", "were", "be", "been", "being", "has", "have", "had", "do", "does", "did", "will", "would",
    "can", "could", "shall", "should", "may", "might", "must", "that", "this", "these", "those", "than", "then", "it",
    "its", "he", "him", "his", "she", "her", "hers", "they", "them", "their", "theirs", "we", "us", "our", "you",
    "your", "i", "me", "my", "who", "whom", "whose", "which", "what", "when", "where", "while", "after", "before",
    "not", "no", "if", "up", "out", "into", "over", "again", "also", "very", "just", "all", "any", "each", "both",
];

fn contains_term(lower_text: &str, term: &str) -> bool {
    find_word(lower_text, term).is_some()
}

/// Lowercased content words that are not in `vocabulary`. Proper nouns and
/// tokens containing digits are skipped.
pub fn out_of_vocabulary(text: &str, vocabulary: &BTreeSet<String>) -> Vec<String> {
    let token_re = static_regex!(r"[\p{L}\p{N}'’\-]+");
    // (token, starts a sentence)
    let mut tokens: Vec<(&str, bool)> = Vec::new();
    let mut last_end = 0;
    for m in token_re.find_iter(text) {
        let starts = tokens.is_empty() || text[last_end..m.start()].contains(['.', '!', '?']);
        tokens.push((m.as_str(), starts));
        last_end = m.end();
    }
    let capitalized = |t: &str| t.chars().next().is_some_and(char::is_uppercase);
    let mut out = Vec::new();
    for (i, &(tok, at_start)) in tokens.iter().enumerate() {
        if tok.chars().any(|c| c.is_ascii_digit()) {
            continue;
        }
        if capitalized(tok) {
            // Mid-sentence capitals are proper nouns; so is a sentence opener
            // followed by another capitalized word.
            let next_cap = tokens.get(i + 1).is_some_and(|(n, s)| !s && capitalized(n));
            if !at_start || next_cap {
                continue;
            }
        }
        let lower = tok.to_lowercase();
        let lower = lower.trim_end_matches("'s").trim_end_matches("’s");
        if FUNCTION_WORDS.contains(&lower) || vocabulary.contains(lower) {
            continue;
        }
        if !out.iter().any(|w: &String| w == lower) {
            out.push(lower.to_string());
        }
    }
    out
}

/// Blocks avoid-topic and HAP hits, truncates to the character limit and
/// flags out-of-vocabulary content words.
pub fn screen(text: &str, policy: &ScreenPolicy, lexicons: &Lexicons) -> ScreenOutcome {
    let lower = text.to_lowercase();
    for topic in &policy.avoid_topics {
        for term in lexicons.terms_for(topic) {
            if !term.is_empty() && contains_term(&lower, &term) {
                return ScreenOutcome::Blocked {
                    reason: BlockReason::Topic {
                        topic: topic.clone(),
                        term,
                    },
                };
            }
        }
    }
    if policy.block_hap {
        for term in &lexicons.hap {
            if contains_term(&lower, &term.to_lowercase()) {
                return ScreenOutcome::Blocked {
                    reason: BlockReason::Hap { term: term.clone() },
                };
            }
        }
    }
    let text = match policy.char_limit {
        Some(limit) => truncate_at_sentence(text, limit),
        None => text.to_string(),
    };
    if let Some(vocab) = &policy.vocabulary {
        let words = out_of_vocabulary(&text, vocab);
        if !words.is_empty() {
            return ScreenOutcome::Flagged { text, words };
        }
    }
    ScreenOutcome::Pass { text }
}
