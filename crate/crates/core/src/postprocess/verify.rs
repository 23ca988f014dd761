//! Fact checking of extracted claims against the live feeds.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::model::{Claim, ClaimKind, ClaimValue, GroundTruthFeeds, PersonRecord, VerdictStatus, VerificationVerdict};
use crate::text::{number_text, ordinal};

fn verdict(claim: &Claim, status: VerdictStatus, correction: Option<String>) -> VerificationVerdict {
    VerificationVerdict {
        claim: claim.clone(),
        status,
        correction,
    }
}

fn is_ordinal(surface: &str) -> bool {
    ["st", "nd", "rd", "th"].iter().any(|s| surface.ends_with(s))
}

/// Names first: with a known subject the expected names are the subject and
/// their opponents. A roster name outside that set is replaced when exactly
/// one expected name is missing from the text. Numbers are then checked
/// against the feed facts of their (possibly corrected) subject.
pub fn verify_claims(claims: &[Claim], feeds: &GroundTruthFeeds, person: Option<&PersonRecord>) -> Vec<VerificationVerdict> {
    let mut out: Vec<Option<VerificationVerdict>> = vec![None; claims.len()];
    let mut renamed: BTreeMap<String, String> = BTreeMap::new();

    let name_of = |c: &Claim| match &c.value {
        ClaimValue::Text(t) => t.clone(),
        ClaimValue::Number(n) => number_text(*n),
    };

    if let Some(person) = person {
        let mut expected = vec![person.full_name.clone()];
        for o in feeds.opponents_of(&person.full_name) {
            if !expected.contains(&o) {
                expected.push(o);
            }
        }
        let present: Vec<String> = claims.iter().filter(|c| c.kind == ClaimKind::Name).map(name_of).collect();
        let missing: Vec<&String> = expected.iter().filter(|e| !present.contains(e)).collect();
        let mut unexpected: Vec<String> = present.iter().filter(|p| !expected.contains(p)).cloned().collect();
        unexpected.sort();
        unexpected.dedup();
        for (i, c) in claims.iter().enumerate() {
            if c.kind != ClaimKind::Name {
                continue;
            }
            let name = name_of(c);
            out[i] = Some(if expected.contains(&name) {
                verdict(c, VerdictStatus::Verified, None)
            } else if missing.len() == 1 && unexpected.len() == 1 {
                renamed.insert(name, missing[0].clone());
                verdict(c, VerdictStatus::Corrected, Some(missing[0].clone()))
            } else {
                verdict(c, VerdictStatus::Unverifiable, None)
            });
        }
    } else {
        for (i, c) in claims.iter().enumerate() {
            if c.kind == ClaimKind::Name {
                out[i] = Some(verdict(c, VerdictStatus::Verified, None));
            }
        }
    }

    for (i, c) in claims.iter().enumerate() {
        if out[i].is_some() {
            continue;
        }
        let subject = c
            .subject
            .as_ref()
            .map(|s| renamed.get(s).cloned().unwrap_or_else(|| s.clone()))
            .or_else(|| person.map(|p| p.full_name.clone()));
        let (Some(attribute), Some(subject), ClaimValue::Number(claimed)) = (&c.attribute, subject, &c.value) else {
            out[i] = Some(verdict(c, VerdictStatus::Unverifiable, None));
            continue;
        };
        let facts: Vec<f64> = feeds
            .facts(&subject, attribute)
            .iter()
            .filter_map(Value::as_f64)
            .collect();
        out[i] = Some(if facts.iter().any(|f| f == claimed) {
            verdict(c, VerdictStatus::Verified, None)
        } else if facts.len() == 1 {
            let fact = facts[0];
            let text = if is_ordinal(&c.surface) {
                ordinal(fact.round() as i64)
            } else {
                number_text(fact)
            };
            verdict(c, VerdictStatus::Corrected, Some(text))
        } else {
            verdict(c, VerdictStatus::Unverifiable, None)
        });
    }
    out.into_iter().map(|v| v.expect("every claim judged")).collect()
}

/// Splices corrections into `text`, last span first so offsets stay valid.
pub fn apply_corrections(text: &str, verdicts: &[VerificationVerdict]) -> String {
    let mut fixes: Vec<(usize, usize, &str)> = verdicts
        .iter()
        .filter(|v| v.status == VerdictStatus::Corrected)
        .filter_map(|v| v.correction.as_deref().map(|c| (v.claim.start, v.claim.end, c)))
        .collect();
    fixes.sort_by(|a, b| b.0.cmp(&a.0));
    let mut out = text.to_string();
    for (s, e, c) in fixes {
        if e <= out.len() && out.is_char_boundary(s) && out.is_char_boundary(e) {
            out.replace_range(s..e, c);
        }
    }
    out
}
