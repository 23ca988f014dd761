//! Edit distance and its standardized form.

use serde::{Deserialize, Serialize};

/// Unit the edit distance counts in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    #[default]
    Char,
    Word,
}

impl std::str::FromStr for Unit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "char" => Ok(Unit::Char),
            "word" => Ok(Unit::Word),
            other => Err(format!("unknown unit `{other}` (expected char or word)")),
        }
    }
}

/// Minimum number of insertions, deletions and substitutions turning `a`
/// into `b`. Two-row dynamic program.
pub fn lev_slice<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Character-level edit distance.
pub fn lev(t1: &str, t2: &str) -> usize {
    let a: Vec<char> = t1.chars().collect();
    let b: Vec<char> = t2.chars().collect();
    lev_slice(&a, &b)
}

/// Edit distance counted in `unit`s; words are whitespace-separated.
pub fn lev_units(t1: &str, t2: &str, unit: Unit) -> (usize, usize, usize) {
    match unit {
        Unit::Char => {
            let a: Vec<char> = t1.chars().collect();
            let b: Vec<char> = t2.chars().collect();
            (lev_slice(&a, &b), a.len(), b.len())
        }
        Unit::Word => {
            let a: Vec<&str> = t1.split_whitespace().collect();
            let b: Vec<&str> = t2.split_whitespace().collect();
            (lev_slice(&a, &b), a.len(), b.len())
        }
    }
}

/// `100 × (1 − lev / max(|t|, |g|))`; 100 when both are empty.
pub fn std_word_edit(t: &str, g: &str, unit: Unit) -> f64 {
    let (d, lt, lg) = lev_units(t, g, unit);
    let m = lt.max(lg);
    if m == 0 {
        return 100.0;
    }
    100.0 * (1.0 - d as f64 / m as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basics() {
        assert_eq!(lev("abc", "abc"), 0);
        assert_eq!(lev("", "golf"), 4);
        assert_eq!(lev("golf", ""), 4);
        assert_eq!(lev("kitten", "sitting"), 3);
        assert_eq!(lev("Jon Ram", "Jon Rahm"), 1);
    }

    #[test]
    fn standardized() {
        assert_eq!(std_word_edit("same", "same", Unit::Char), 100.0);
        assert_eq!(std_word_edit("abcd", "wxyz", Unit::Char), 0.0);
        assert_eq!(std_word_edit("", "", Unit::Char), 100.0);
        assert!((std_word_edit("kitten", "sitting", Unit::Char) - 100.0 * (1.0 - 3.0 / 7.0)).abs() < 1e-12);
        assert_eq!(std_word_edit("a b c", "a x c", Unit::Word), 100.0 * (1.0 - 1.0 / 3.0));
    }
}
