//! Lexical context retrieval for RAG-style context blocks.
//!
//! Scores are `Σ tf(t, d) · idf(t)` over the distinct query terms, with
//! `idf(t) = ln((N + 1) / (df(t) + 1)) + 1` computed over the candidate set.
//! Ties go to the more recent passage, then to the smaller `doc_id`.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::PromptError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Passage {
    pub doc_id: String,
    #[serde(default)]
    pub category: Option<String>,
    pub text: String,
    /// Larger is more recent.
    #[serde(default)]
    pub recency: u64,
}

impl Passage {
    pub fn new(doc_id: impl Into<String>, category: Option<&str>, text: impl Into<String>, recency: u64) -> Self {
        Self {
            doc_id: doc_id.into(),
            category: category.map(str::to_string),
            text: text.into(),
            recency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RetrievalCorpus {
    passages: Vec<Passage>,
}

impl<'de> Deserialize<'de> for RetrievalCorpus {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            passages: Vec<Passage>,
        }
        let raw = Raw::deserialize(d)?;
        RetrievalCorpus::new(raw.passages).map_err(serde::de::Error::custom)
    }
}

impl RetrievalCorpus {
    pub fn new(passages: Vec<Passage>) -> Result<Self, PromptError> {
        let mut seen = HashSet::new();
        for p in &passages {
            if !seen.insert(p.doc_id.as_str()) {
                return Err(PromptError::DuplicateDocument(p.doc_id.clone()));
            }
        }
        Ok(Self { passages })
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredPassage {
    pub passage: Passage,
    pub score: f64,
}

/// Pluggable retrieval backend.
pub trait Retriever: Send + Sync {
    fn retrieve(&self, query: &str, category: Option<&str>, corpus: &RetrievalCorpus, k: usize) -> Vec<ScoredPassage>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TfIdfRetriever;

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl Retriever for TfIdfRetriever {
    fn retrieve(&self, query: &str, category: Option<&str>, corpus: &RetrievalCorpus, k: usize) -> Vec<ScoredPassage> {
        let candidates: Vec<&Passage> = corpus
            .passages
            .iter()
            .filter(|p| category.is_none_or(|c| p.category.as_deref() == Some(c)))
            .collect();
        let docs: Vec<HashMap<String, usize>> = candidates
            .iter()
            .map(|p| {
                let mut tf = HashMap::new();
                for t in tokenize(&p.text) {
                    *tf.entry(t).or_insert(0) += 1;
                }
                tf
            })
            .collect();
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let n = candidates.len() as f64;
        let idf: HashMap<&str, f64> = terms
            .iter()
            .map(|t| {
                let df = docs.iter().filter(|d| d.contains_key(t)).count() as f64;
                (t.as_str(), ((n + 1.0) / (df + 1.0)).ln() + 1.0)
            })
            .collect();
        let mut scored: Vec<ScoredPassage> = candidates
            .iter()
            .zip(&docs)
            .map(|(p, tf)| {
                let score = terms
                    .iter()
                    .map(|t| *tf.get(t).unwrap_or(&0) as f64 * idf[t.as_str()])
                    .sum();
                ScoredPassage {
                    passage: (*p).clone(),
                    score,
                }
            })
            .collect();
        scored.sort_by(rank_order);
        scored.truncate(k);
        scored
    }
}

fn rank_order(a: &ScoredPassage, b: &ScoredPassage) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(b.passage.recency.cmp(&a.passage.recency))
        .then_with(|| a.passage.doc_id.cmp(&b.passage.doc_id))
}

/// Top-`k` passages under [`TfIdfRetriever`]. With a category only passages
/// tagged with it are candidates; without one the whole corpus is.
pub fn retrieve_context(query: &str, category: Option<&str>, corpus: &RetrievalCorpus, k: usize) -> Vec<ScoredPassage> {
    TfIdfRetriever.retrieve(query, category, corpus, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_scored_two_passages() {
        // Query terms: artist, singer, songwriter, tour. A shares 3, B shares 1.
        let corpus = RetrievalCorpus::new(vec![
            Passage::new("b", None, "a tour announced", 9),
            Passage::new("a", None, "artist singer songwriter", 1),
        ])
        .unwrap();
        let got = retrieve_context("artist singer songwriter tour", None, &corpus, 2);
        assert_eq!(got[0].passage.doc_id, "a");
        // Each shared term has df = 1 over N = 2: idf = ln(3/2) + 1.
        let idf = (3.0f64 / 2.0).ln() + 1.0;
        assert!((got[0].score - 3.0 * idf).abs() < 1e-12);
        assert!((got[1].score - idf).abs() < 1e-12);
    }

    #[test]
    fn category_restricts_candidates() {
        let corpus = RetrievalCorpus::new(vec![
            Passage::new("1", Some("GRAMMY Achievements"), "Artist Name won best album", 1),
            Passage::new("2", Some("Biography"), "Artist Name grew up by the sea", 2),
            Passage::new("3", None, "Artist Name Artist Name", 3),
        ])
        .unwrap();
        let got = retrieve_context("Artist Name", Some("GRAMMY Achievements"), &corpus, 10);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].passage.doc_id, "1");
        assert_eq!(retrieve_context("Artist Name", None, &corpus, 10).len(), 3);
    }

    #[test]
    fn ties_break_on_recency_then_id() {
        let corpus = RetrievalCorpus::new(vec![
            Passage::new("z", None, "x", 1),
            Passage::new("b", None, "x", 5),
            Passage::new("a", None, "x", 5),
        ])
        .unwrap();
        let ids: Vec<String> = retrieve_context("x", None, &corpus, 5)
            .into_iter()
            .map(|s| s.passage.doc_id)
            .collect();
        assert_eq!(ids, ["a", "b", "z"]);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let p = Passage::new("d", None, "t", 0);
        assert!(matches!(
            RetrievalCorpus::new(vec![p.clone(), p]),
            Err(PromptError::DuplicateDocument(_))
        ));
        assert!(serde_json::from_str::<RetrievalCorpus>(r#"{"passages":[{"doc_id":"d","text":"a"},{"doc_id":"d","text":"b"}]}"#).is_err());
    }
}
