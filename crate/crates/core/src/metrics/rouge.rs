//! Rouge-N and Rouge-L over lowercased, punctuation-free tokens.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RougeScore {
    pub recall: f64,
    pub precision: f64,
    pub f: f64,
}

impl RougeScore {
    fn from_counts(overlap: usize, ref_len: usize, gen_len: usize) -> Self {
        if ref_len == 0 || gen_len == 0 || overlap == 0 {
            return Self::default();
        }
        let recall = overlap as f64 / ref_len as f64;
        let precision = overlap as f64 / gen_len as f64;
        Self {
            recall,
            precision,
            f: 2.0 * recall * precision / (recall + precision),
        }
    }
}

/// Lowercases and turns every non-alphanumeric character into a separator.
pub fn rouge_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w).or_insert(0) += 1;
    }
    out
}

/// `t` is the generated text, `g` the reference. Overlap is the clipped
/// multiset intersection of n-grams.
pub fn rouge_n(t: &str, g: &str, n: usize) -> RougeScore {
    let tt = rouge_tokens(t);
    let gt = rouge_tokens(g);
    let tn = ngrams(&tt, n);
    let gn = ngrams(&gt, n);
    let overlap: usize = gn.iter().map(|(k, c)| (*c).min(*tn.get(k).unwrap_or(&0))).sum();
    RougeScore::from_counts(overlap, gn.values().sum(), tn.values().sum())
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(t: &str, g: &str) -> RougeScore {
    let tt = rouge_tokens(t);
    let gt = rouge_tokens(g);
    RougeScore::from_counts(lcs_len(&tt, &gt), gt.len(), tt.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn unigram_hand_example() {
        let s = rouge_n("the cat sat on mat", "the cat ran", 1);
        assert!(close(s.recall, 2.0 / 3.0) && close(s.precision, 2.0 / 5.0) && close(s.f, 0.5));
    }

    #[test]
    fn identical_and_disjoint() {
        let s = rouge_n("A b, c.", "a B c", 2);
        assert_eq!((s.recall, s.precision, s.f), (1.0, 1.0, 1.0));
        assert_eq!(rouge_n("x y", "z w", 1), RougeScore::default());
        assert_eq!(rouge_n("x", "x", 2), RougeScore::default());
    }

    #[test]
    fn clipping() {
        // "the" appears 3 times in t but once in g.
        let s = rouge_n("the the the", "the cat", 1);
        assert!(close(s.recall, 0.5) && close(s.precision, 1.0 / 3.0));
    }

    #[test]
    fn lcs_example() {
        let s = rouge_l("a b c d", "a c d");
        assert!(close(s.recall, 1.0) && close(s.precision, 0.75) && close(s.f, 6.0 / 7.0));
        assert_eq!(rouge_l("", "a"), RougeScore::default());
    }
}
