//! Roster-aware spelling repair for person names.

use std::collections::BTreeSet;

use serde_json::Value;

use super::extract::find_names;
use crate::metrics::lev;
use crate::model::{Claim, ClaimKind, ClaimValue, GroundTruthFeeds, PersonRecord, VerdictStatus, VerificationVerdict};
use crate::text::{find_word, static_regex};

/// Largest edit distance still treated as a misspelling.
pub const NAME_EDIT_THRESHOLD: usize = 2;

/// Disambiguation hints gathered from the sentence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NameClues {
    /// Nations mentioned in the text.
    pub nations: BTreeSet<String>,
    /// Ranks mentioned in the text.
    pub ranks: BTreeSet<u32>,
    /// People linked (draw, head-to-head or schedule) to someone named
    /// correctly in the text.
    pub related: BTreeSet<String>,
}

impl NameClues {
    pub fn from_text(text: &str, feeds: &GroundTruthFeeds) -> Self {
        let mut clues = NameClues::default();
        let lower = text.to_lowercase();
        for p in &feeds.rosters {
            if !p.nation.is_empty() && find_word(&lower, &p.nation.to_lowercase()).is_some() {
                clues.nations.insert(p.nation.clone());
            }
        }
        let rank_re = static_regex!(r"(?i)\b(?:ranked|rank|no\.)\s*(\d+)");
        for c in rank_re.captures_iter(text) {
            if let Ok(r) = c[1].parse() {
                clues.ranks.insert(r);
            }
        }
        for (_, _, name) in find_names(text, &feeds.rosters) {
            clues.related.extend(feeds.opponents_of(&name));
            if let Some(entry) = feeds.schedule.get(&name) {
                collect_strings(entry, &mut clues.related);
            }
            // Reverse schedule links: people whose schedule mentions `name`.
            if let Some(all) = feeds.schedule.as_object() {
                for (who, entry) in all {
                    let mut mentioned = BTreeSet::new();
                    collect_strings(entry, &mut mentioned);
                    if mentioned.contains(&name) {
                        clues.related.insert(who.clone());
                    }
                }
            }
        }
        clues
    }

    fn score(&self, p: &PersonRecord) -> usize {
        usize::from(self.nations.contains(&p.nation))
            + usize::from(p.rank.is_some_and(|r| self.ranks.contains(&r)))
            + usize::from(self.related.contains(&p.full_name))
    }
}

fn collect_strings(v: &Value, out: &mut BTreeSet<String>) {
    match v {
        Value::String(s) => {
            out.insert(s.clone());
        }
        Value::Array(a) => a.iter().for_each(|x| collect_strings(x, out)),
        Value::Object(m) => m.values().for_each(|x| collect_strings(x, out)),
        _ => {}
    }
}

/// Replaces capitalized word sequences that are within
/// [`NAME_EDIT_THRESHOLD`] edits of a roster name. Equidistant candidates are
/// separated by clue agreement; if that does not single one out the text is
/// left alone. Exact roster names are never touched.
pub fn correct_names(text: &str, rosters: &[PersonRecord], clues: &NameClues) -> String {
    if rosters.is_empty() {
        return text.to_string();
    }
    let word_re = static_regex!(r"\p{Lu}[\p{L}'’\-]*");
    let words: Vec<(usize, usize)> = word_re
        .find_iter(text)
        .filter(|m| !text[..m.start()].ends_with(|c: char| c.is_alphanumeric()))
        .map(|m| (m.start(), m.end()))
        .collect();
    // Runs of capitalized words separated by single spaces.
    let mut runs: Vec<Vec<(usize, usize)>> = Vec::new();
    for w in words {
        match runs.last_mut() {
            Some(run) if &text[run.last().expect("non-empty run").1..w.0] == " " => run.push(w),
            _ => runs.push(vec![w]),
        }
    }
    let lens: BTreeSet<usize> = rosters.iter().map(|p| p.full_name.split_whitespace().count()).collect();

    // (distance, -len, start, end, candidates)
    let mut windows: Vec<(usize, isize, usize, usize, Vec<&PersonRecord>)> = Vec::new();
    for run in &runs {
        for &len in &lens {
            if len == 0 || len > run.len() {
                continue;
            }
            for i in 0..=run.len() - len {
                let (s, e) = (run[i].0, run[i + len - 1].1);
                let window = &text[s..e];
                let mut best = usize::MAX;
                let mut cands: Vec<&PersonRecord> = Vec::new();
                for p in rosters.iter().filter(|p| p.full_name.split_whitespace().count() == len) {
                    let d = lev(window, &p.full_name);
                    if d < best {
                        best = d;
                        cands.clear();
                    }
                    if d == best {
                        cands.push(p);
                    }
                }
                let chars = window.chars().count();
                if best <= NAME_EDIT_THRESHOLD && best * 3 <= chars {
                    windows.push((best, -(len as isize), s, e, cands));
                }
            }
        }
    }
    windows.sort_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));

    let mut taken: Vec<(usize, usize)> = Vec::new();
    let mut fixes: Vec<(usize, usize, String)> = Vec::new();
    for (d, _, s, e, cands) in windows {
        if taken.iter().any(|&(a, b)| s < b && a < e) {
            continue;
        }
        taken.push((s, e));
        if d == 0 {
            continue;
        }
        let chosen = if cands.len() == 1 {
            Some(cands[0])
        } else {
            let scores: Vec<usize> = cands.iter().map(|p| clues.score(p)).collect();
            let top = *scores.iter().max().expect("non-empty");
            let winners: Vec<&PersonRecord> = cands.iter().zip(&scores).filter(|(_, s)| **s == top).map(|(p, _)| *p).collect();
            (top > 0 && winners.len() == 1).then(|| winners[0])
        };
        if let Some(p) = chosen {
            fixes.push((s, e, p.full_name.clone()));
        }
    }
    fixes.sort_by(|a, b| b.0.cmp(&a.0));
    let mut out = text.to_string();
    for (s, e, name) in fixes {
        out.replace_range(s..e, &name);
    }
    out
}

/// Outcome of [`repair_subjects`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SubjectRepair {
    pub text: String,
    pub verdicts: Vec<VerificationVerdict>,
    /// Roster names that do not belong in the text and could not be mapped
    /// back onto an expected subject.
    pub unresolved: Vec<String>,
}

/// Replaces roster names that are not among `expected` (the people the input
/// was about). A single stray name is mapped onto the single expected name
/// missing from the text; anything less clear-cut is reported as unresolved.
/// With no expectation the text is returned as is.
pub fn repair_subjects(text: &str, rosters: &[PersonRecord], expected: &[String]) -> SubjectRepair {
    let mut out = SubjectRepair {
        text: text.to_string(),
        ..Default::default()
    };
    if expected.is_empty() {
        return out;
    }
    let found = find_names(text, rosters);
    let strays: BTreeSet<&str> = found
        .iter()
        .map(|(_, _, n)| n.as_str())
        .filter(|n| !expected.iter().any(|e| e == n))
        .collect();
    if strays.is_empty() {
        return out;
    }
    let missing: Vec<&String> = expected
        .iter()
        .filter(|e| !found.iter().any(|(_, _, n)| n == *e))
        .collect();
    if strays.len() != 1 || missing.len() != 1 {
        out.unresolved = strays.into_iter().map(String::from).collect();
        return out;
    }
    let target = missing[0];
    let mut hits: Vec<&(usize, usize, String)> = found.iter().filter(|(_, _, n)| strays.contains(n.as_str())).collect();
    hits.sort_by(|a, b| b.0.cmp(&a.0));
    for (s, e, name) in hits {
        out.verdicts.push(VerificationVerdict {
            claim: Claim {
                kind: ClaimKind::Name,
                surface: name.clone(),
                value: ClaimValue::Text(name.clone()),
                start: *s,
                end: *e,
                attribute: Some("subject".into()),
                subject: Some(name.clone()),
            },
            status: VerdictStatus::Corrected,
            correction: Some(target.clone()),
        });
        out.text.replace_range(*s..*e, target);
    }
    out.verdicts.reverse();
    out
}
