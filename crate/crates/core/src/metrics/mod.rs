//! Evaluation metrics, the approach score card and corpus reports.

mod edit;
mod rouge;

pub use edit::{lev, lev_slice, lev_units, std_word_edit, Unit};
pub use rouge::{lcs_len, rouge_l, rouge_n, rouge_tokens, RougeScore};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("perplexity needs at least one token")]
    EmptySequence,
    #[error("{tokens} tokens but {logprobs} log-probabilities")]
    LengthMismatch { tokens: usize, logprobs: usize },
    #[error("log-probability {0} is not in (-inf, 0]")]
    BadLogProb(f64),
    #[error("factor `{name}` scored {score}, expected 1..=10")]
    FactorOutOfRange { name: String, score: u32 },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TokenLogProbs {
    pub tokens: Vec<String>,
    /// Natural-log probability of each token given the ones before it.
    pub logprobs: Vec<f64>,
}

/// `exp(−mean ln p(t_i | t_<i))`.
pub fn perplexity(lp: &TokenLogProbs) -> Result<f64, MetricsError> {
    if lp.tokens.len() != lp.logprobs.len() {
        return Err(MetricsError::LengthMismatch {
            tokens: lp.tokens.len(),
            logprobs: lp.logprobs.len(),
        });
    }
    if lp.logprobs.is_empty() {
        return Err(MetricsError::EmptySequence);
    }
    if let Some(bad) = lp.logprobs.iter().find(|l| !(l.is_finite() && **l <= 0.0)) {
        return Err(MetricsError::BadLogProb(*bad));
    }
    let mean = lp.logprobs.iter().sum::<f64>() / lp.logprobs.len() as f64;
    Ok((-mean).exp())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub factors: Vec<(String, u32)>,
    /// Lower is better.
    pub total: u32,
}

pub fn scorecard_total(factors: &[(&str, u32)]) -> Result<ScoreCard, MetricsError> {
    for (name, score) in factors {
        if !(1..=10).contains(score) {
            return Err(MetricsError::FactorOutOfRange {
                name: name.to_string(),
                score: *score,
            });
        }
    }
    Ok(ScoreCard {
        factors: factors.iter().map(|(n, s)| (n.to_string(), *s)).collect(),
        total: factors.iter().map(|(_, s)| s).sum(),
    })
}

/// Names ordered best (lowest total) first; ties by name.
pub fn rank_cards(cards: &[(&str, ScoreCard)]) -> Vec<String> {
    let mut v: Vec<(&str, u32)> = cards.iter().map(|(n, c)| (*n, c.total)).collect();
    v.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(b.0)));
    v.into_iter().map(|(n, _)| n.to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "lev")]
    Lev,
    #[serde(rename = "rouge1")]
    Rouge1,
    #[serde(rename = "rouge2")]
    Rouge2,
    #[serde(rename = "rougeL")]
    RougeL,
    #[serde(rename = "perplexity")]
    Perplexity,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Lev, Metric::Rouge1, Metric::Rouge2, Metric::RougeL, Metric::Perplexity];

    pub fn parse_list(s: &str) -> Result<Vec<Metric>, MetricsError> {
        s.split(',')
            .map(str::trim)
            .filter(|m| !m.is_empty())
            .map(|m| match m {
                "lev" => Ok(Metric::Lev),
                "rouge1" => Ok(Metric::Rouge1),
                "rouge2" => Ok(Metric::Rouge2),
                "rougeL" | "rougel" => Ok(Metric::RougeL),
                "perplexity" => Ok(Metric::Perplexity),
                other => Err(MetricsError::UnknownMetric(other.to_string())),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TextPair {
    pub generated: String,
    pub reference: String,
    #[serde(default)]
    pub logprobs: Option<TokenLogProbs>,
}

impl TextPair {
    pub fn new(generated: impl Into<String>, reference: impl Into<String>) -> Self {
        Self {
            generated: generated.into(),
            reference: reference.into(),
            logprobs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairs: usize,
    pub unit: Unit,
    /// Per-pair values; edit distance on its 0..100 scale, Rouge in 0..1.
    pub per_pair: Vec<BTreeMap<String, f64>>,
    /// Means across pairs. Rouge and edit scores are on a 0..100 scale,
    /// perplexity is left as is.
    pub aggregates: BTreeMap<String, f64>,
    /// Pairs that had no log-probabilities when perplexity was requested.
    #[serde(default)]
    pub perplexity_skipped: usize,
}

fn pair_metrics(p: &TextPair, metrics: &[Metric], unit: Unit) -> Result<BTreeMap<String, f64>, MetricsError> {
    let mut m = BTreeMap::new();
    let mut rouge = |name: &str, s: RougeScore| {
        m.insert(format!("{name}_recall"), s.recall);
        m.insert(format!("{name}_precision"), s.precision);
        m.insert(format!("{name}_f"), s.f);
    };
    for metric in metrics {
        match metric {
            Metric::Rouge1 => rouge("rouge1", rouge_n(&p.generated, &p.reference, 1)),
            Metric::Rouge2 => rouge("rouge2", rouge_n(&p.generated, &p.reference, 2)),
            Metric::RougeL => rouge("rougeL", rouge_l(&p.generated, &p.reference)),
            Metric::Lev | Metric::Perplexity => {}
        }
    }
    if metrics.contains(&Metric::Lev) {
        let (d, _, _) = lev_units(&p.generated, &p.reference, unit);
        m.insert("lev".into(), d as f64);
        m.insert("std_word_edit".into(), std_word_edit(&p.generated, &p.reference, unit));
    }
    if metrics.contains(&Metric::Perplexity) {
        if let Some(lp) = &p.logprobs {
            m.insert("perplexity".into(), perplexity(lp)?);
        }
    }
    Ok(m)
}

pub fn corpus_report(pairs: &[TextPair], metrics: &[Metric], unit: Unit) -> Result<EvalReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let per_pair: Vec<BTreeMap<String, f64>> = pairs
        .par_iter()
        .map(|p| pair_metrics(p, metrics, unit))
        .collect::<Result<_, _>>()?;
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for m in &per_pair {
        for (k, v) in m {
            let e = sums.entry(k.clone()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    let aggregates = sums
        .into_iter()
        .map(|(k, (sum, n))| {
            let mean = sum / n as f64;
            let scaled = if k.starts_with("rouge") { mean * 100.0 } else { mean };
            (k, scaled)
        })
        .collect();
    let perplexity_skipped = if metrics.contains(&Metric::Perplexity) {
        pairs.iter().filter(|p| p.logprobs.is_none()).count()
    } else {
        0
    };
    Ok(EvalReport {
        pairs: pairs.len(),
        unit,
        per_pair,
        aggregates,
        perplexity_skipped,
    })
}

impl EvalReport {
    /// Aligned two-column text table of the aggregates.
    pub fn to_table(&self) -> String {
        let width = self.aggregates.keys().map(String::len).max().unwrap_or(6).max(6);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>10}", "metric", "value");
        let _ = writeln!(out, "{}  {}", "-".repeat(width), "-".repeat(10));
        for (k, v) in &self.aggregates {
            let _ = writeln!(out, "{k:<width$}  {v:>10.2}");
        }
        let _ = writeln!(out, "{:<width$}  {:>10}", "pairs", self.pairs);
        out
    }
}
