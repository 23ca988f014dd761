//! Regex claim extraction.

use std::collections::BTreeMap;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::PostError;
use crate::model::{Claim, ClaimKind, ClaimValue, PersonRecord};
use crate::text::static_regex;

pub const PATTERNS: &str = include_str!("../../assets/postprocess/patterns.json");

/// Which name a statistic is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubjectRule {
    #[default]
    Preceding,
    Following,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimPattern {
    pub kind: ClaimKind,
    #[serde(default)]
    pub attribute: Option<String>,
    /// Capture group 1 must be the number.
    pub regex: String,
    #[serde(default)]
    pub subject: SubjectRule,
}

#[derive(Debug, Clone)]
struct Compiled {
    pattern: ClaimPattern,
    re: Regex,
}

/// Pattern sets keyed by scene; `default` applies to every scene after the
/// scene's own patterns.
#[derive(Debug, Clone)]
pub struct PatternRegistry {
    sets: BTreeMap<String, Vec<Compiled>>,
}

impl PatternRegistry {
    pub fn builtin() -> Self {
        Self::from_json(PATTERNS).expect("shipped patterns compile")
    }

    pub fn from_json(text: &str) -> Result<Self, PostError> {
        let raw: BTreeMap<String, Vec<ClaimPattern>> =
            serde_json::from_str(text).map_err(|e| PostError::Config(format!("patterns: {e}")))?;
        let mut sets = BTreeMap::new();
        for (scene, patterns) in raw {
            let mut compiled = Vec::new();
            for p in patterns {
                let re = Regex::new(&p.regex).map_err(|e| PostError::Config(format!("{scene}: {e}")))?;
                if re.captures_len() < 2 {
                    return Err(PostError::Config(format!("{scene}: pattern `{}` has no capture group", p.regex)));
                }
                compiled.push(Compiled { pattern: p, re });
            }
            sets.insert(scene, compiled);
        }
        Ok(Self { sets })
    }

    pub fn has_scene(&self, scene: &str) -> bool {
        self.sets.contains_key(scene)
    }

    fn for_scene(&self, scene: &str) -> impl Iterator<Item = &Compiled> {
        self.sets
            .get(scene)
            .into_iter()
            .flatten()
            .chain(self.sets.get("default").into_iter().flatten())
    }
}

/// `"46 th"` → `"46th"`.
pub fn normalize_ordinals(text: &str) -> String {
    let re = static_regex!(r"\b(\d+)\s+(st|nd|rd|th)\b");
    re.replace_all(text, "$1$2").into_owned()
}

fn overlaps(taken: &[(usize, usize)], s: usize, e: usize) -> bool {
    taken.iter().any(|&(a, b)| s < b && a < e)
}

fn ordinal_suffix_len(rest: &str) -> usize {
    for suf in ["st", "nd", "rd", "th"] {
        if rest.starts_with(suf) && !rest[2..].starts_with(|c: char| c.is_alphanumeric()) {
            return 2;
        }
    }
    0
}

/// Exact, word-bounded roster name occurrences, longest names first.
pub fn find_names(text: &str, rosters: &[PersonRecord]) -> Vec<(usize, usize, String)> {
    let mut names: Vec<&str> = rosters.iter().map(|p| p.full_name.as_str()).collect();
    names.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    names.dedup();
    let mut taken: Vec<(usize, usize)> = Vec::new();
    let mut out = Vec::new();
    for name in names {
        if name.is_empty() {
            continue;
        }
        for (s, _) in text.match_indices(name) {
            let e = s + name.len();
            let before_ok = !text[..s].ends_with(|c: char| c.is_alphanumeric());
            let after_ok = !text[e..].starts_with(|c: char| c.is_alphanumeric());
            if before_ok && after_ok && !overlaps(&taken, s, e) {
                taken.push((s, e));
                out.push((s, e, name.to_string()));
            }
        }
    }
    out.sort();
    out
}

/// Every number and every roster name in `text` becomes exactly one claim.
/// Numbers matched by a scene pattern carry its kind and attribute; the rest
/// are `other`.
pub fn classify_and_extract(text: &str, scene: &str, registry: &PatternRegistry, rosters: &[PersonRecord]) -> Vec<Claim> {
    let names = find_names(text, rosters);
    let mut claims: Vec<Claim> = names
        .iter()
        .map(|(s, e, n)| Claim {
            kind: ClaimKind::Name,
            surface: text[*s..*e].to_string(),
            value: ClaimValue::Text(n.clone()),
            start: *s,
            end: *e,
            attribute: None,
            subject: Some(n.clone()),
        })
        .collect();
    let mut taken: Vec<(usize, usize)> = names.iter().map(|(s, e, _)| (*s, *e)).collect();

    let subject_for = |pos: usize, rule: SubjectRule| -> Option<String> {
        match rule {
            SubjectRule::Preceding => names.iter().rev().find(|(_, e, _)| *e <= pos).map(|n| n.2.clone()),
            SubjectRule::Following => names.iter().find(|(s, _, _)| *s >= pos).map(|n| n.2.clone()),
        }
    };

    let mut numeric = |s: usize, e: usize, kind: ClaimKind, attribute: Option<String>, rule: SubjectRule, taken: &mut Vec<(usize, usize)>| {
        let digits_end = text[s..e].find(|c: char| !(c.is_ascii_digit() || c == '.')).map(|i| s + i).unwrap_or(e);
        let Ok(v) = text[s..digits_end].parse::<f64>() else { return };
        taken.push((s, e));
        claims.push(Claim {
            kind,
            surface: text[s..e].to_string(),
            value: ClaimValue::Number(v),
            start: s,
            end: e,
            attribute,
            subject: subject_for(s, rule),
        });
    };

    for c in registry.for_scene(scene) {
        for caps in c.re.captures_iter(text) {
            let Some(g) = caps.get(1) else { continue };
            let (s, mut e) = (g.start(), g.end());
            e += ordinal_suffix_len(&text[e..]);
            if overlaps(&taken, s, e) {
                continue;
            }
            numeric(s, e, c.pattern.kind, c.pattern.attribute.clone(), c.pattern.subject, &mut taken);
        }
    }
    let any_number = static_regex!(r"\b\d+(?:\.\d+)?(?:st|nd|rd|th)?\b");
    for m in any_number.find_iter(text) {
        if overlaps(&taken, m.start(), m.end()) {
            continue;
        }
        numeric(m.start(), m.end(), ClaimKind::Other, None, SubjectRule::Preceding, &mut taken);
    }
    claims.sort_by_key(|c| c.start);
    claims
}
