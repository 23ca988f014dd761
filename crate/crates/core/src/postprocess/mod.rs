//! `t = H(t_raw)`: hallucination repair and screening of generated text.
//!
//! Stages run in a fixed order: ordinal normalization, stray-subject repair,
//! claim extraction, fact verification with in-place corrections, roster
//! spelling repair, pronoun enforcement and finally screening.

mod extract;
mod names;
mod pronouns;
mod screen;
mod verify;

pub use extract::{classify_and_extract, find_names, normalize_ordinals, ClaimPattern, PatternRegistry, SubjectRule, PATTERNS};
pub use names::{correct_names, repair_subjects, NameClues, SubjectRepair, NAME_EDIT_THRESHOLD};
pub use pronouns::{enforce_pronouns, PronounTable, PRONOUNS};
pub use screen::{out_of_vocabulary, screen, BlockReason, Lexicons, ScreenOutcome, ScreenPolicy, LEXICONS};
pub use verify::{apply_corrections, verify_claims};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Claim, ClaimKind, ClaimValue, ContentState, GroundTruthFeeds, PersonRecord, VerdictStatus, VerificationVerdict};

/// Attempts (first generation included) before content goes to human review.
pub const DEFAULT_MAX_ATTEMPTS: u32 = 2;

#[derive(Debug, Error)]
pub enum PostError {
    #[error("post-processing config: {0}")]
    Config(String),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PostStatus {
    Final,
    Flagged { words: Vec<String> },
    Blocked { reason: BlockReason },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostResult {
    /// Repaired text. For blocked results this is the text before screening.
    pub text: String,
    pub verdicts: Vec<VerificationVerdict>,
    pub status: PostStatus,
}

impl PostResult {
    pub fn needs_regeneration(&self) -> bool {
        self.status != PostStatus::Final
    }

    pub fn corrected(&self) -> usize {
        self.verdicts.iter().filter(|v| v.status == VerdictStatus::Corrected).count()
    }
}

#[derive(Debug, Clone)]
pub struct PostProcessor {
    patterns: PatternRegistry,
    pronouns: PronounTable,
    lexicons: Lexicons,
}

impl Default for PostProcessor {
    fn default() -> Self {
        Self::builtin()
    }
}

fn read(dir: &Path, name: &str) -> Result<Option<String>, PostError> {
    let path = dir.join(name);
    if !path.exists() {
        return Ok(None);
    }
    std::fs::read_to_string(&path).map(Some).map_err(|source| PostError::Io {
        path: path.display().to_string(),
        source,
    })
}

impl PostProcessor {
    pub fn builtin() -> Self {
        Self {
            patterns: PatternRegistry::builtin(),
            pronouns: PronounTable::builtin(),
            lexicons: Lexicons::builtin(),
        }
    }

    pub fn new(patterns: PatternRegistry, pronouns: PronounTable, lexicons: Lexicons) -> Self {
        Self {
            patterns,
            pronouns,
            lexicons,
        }
    }

    /// Loads `patterns.json`, `pronouns.json` and `lexicons.json` from `dir`;
    /// any file that is missing falls back to the built-in copy.
    pub fn from_dir(dir: &Path) -> Result<Self, PostError> {
        let patterns = match read(dir, "patterns.json")? {
            Some(t) => PatternRegistry::from_json(&t)?,
            None => PatternRegistry::builtin(),
        };
        let pronouns = match read(dir, "pronouns.json")? {
            Some(t) => PronounTable::from_json(&t)?,
            None => PronounTable::builtin(),
        };
        let lexicons = match read(dir, "lexicons.json")? {
            Some(t) => Lexicons::from_json(&t)?,
            None => Lexicons::builtin(),
        };
        Ok(Self::new(patterns, pronouns, lexicons))
    }

    pub fn patterns(&self) -> &PatternRegistry {
        &self.patterns
    }

    pub fn lexicons(&self) -> &Lexicons {
        &self.lexicons
    }

    fn extract_verify(&self, text: &str, scene: &str, feeds: &GroundTruthFeeds, person: Option<&PersonRecord>) -> (String, Vec<VerificationVerdict>) {
        let claims = classify_and_extract(text, scene, &self.patterns, &feeds.rosters);
        let verdicts = verify_claims(&claims, feeds, person);
        (apply_corrections(text, &verdicts), verdicts)
    }

    pub fn post(&self, raw: &str, scene: &str, feeds: &GroundTruthFeeds, person: Option<&PersonRecord>, policy: &ScreenPolicy) -> PostResult {
        self.post_expecting(raw, scene, feeds, person, &[], policy)
    }

    /// [`PostProcessor::post`] for text about known people. Roster names
    /// outside `subjects` are mapped back onto the expected subject or, when
    /// that is ambiguous, flag the text.
    pub fn post_expecting(
        &self,
        raw: &str,
        scene: &str,
        feeds: &GroundTruthFeeds,
        person: Option<&PersonRecord>,
        subjects: &[String],
        policy: &ScreenPolicy,
    ) -> PostResult {
        let text = normalize_ordinals(raw);
        let first = repair_subjects(&text, &feeds.rosters, subjects);
        let mut subject_fixes = first.verdicts;
        let mut unresolved = first.unresolved;
        let (mut text, mut verdicts) = self.extract_verify(&first.text, scene, feeds, person);

        if !feeds.rosters.is_empty() {
            let clues = NameClues::from_text(&text, feeds);
            let renamed = correct_names(&text, &feeds.rosters, &clues);
            if renamed != text {
                let again = repair_subjects(&renamed, &feeds.rosters, subjects);
                subject_fixes.extend(again.verdicts);
                unresolved = again.unresolved;
                // Repaired names can bring new claims into view.
                let (fixed, more) = self.extract_verify(&again.text, scene, feeds, person);
                text = fixed;
                let prior_fixes: Vec<VerificationVerdict> =
                    verdicts.into_iter().filter(|v| v.status == VerdictStatus::Corrected).collect();
                verdicts = prior_fixes.into_iter().chain(more).collect();
            }
        }
        verdicts.splice(0..0, subject_fixes);

        if let Some(p) = person {
            text = enforce_pronouns(&text, p.pronoun_class, &self.pronouns);
        }

        match screen(&text, policy, &self.lexicons) {
            ScreenOutcome::Pass { text } if unresolved.is_empty() => PostResult {
                text,
                verdicts,
                status: PostStatus::Final,
            },
            ScreenOutcome::Pass { text } => PostResult {
                text,
                verdicts,
                status: PostStatus::Flagged { words: unresolved },
            },
            ScreenOutcome::Flagged { text, mut words } => {
                words.extend(unresolved);
                PostResult {
                    text,
                    verdicts,
                    status: PostStatus::Flagged { words },
                }
            }
            ScreenOutcome::Blocked { reason } => {
                verdicts.push(blocked_verdict(&text, &reason));
                PostResult {
                    text,
                    verdicts,
                    status: PostStatus::Blocked { reason },
                }
            }
        }
    }

    /// Generates and post-processes up to `max_attempts` times. The first
    /// clean result is returned in `draft`; if every attempt needs
    /// regeneration the last one is returned in `pending_review`.
    pub fn post_with_regeneration<E>(
        &self,
        max_attempts: u32,
        scene: &str,
        feeds: &GroundTruthFeeds,
        person: Option<&PersonRecord>,
        subjects: &[String],
        policy: &ScreenPolicy,
        mut generate: impl FnMut(u32) -> Result<String, E>,
    ) -> Result<RegenOutcome, E> {
        let max_attempts = max_attempts.max(1);
        let mut attempt = 0;
        loop {
            let raw = generate(attempt)?;
            let result = self.post_expecting(&raw, scene, feeds, person, subjects, policy);
            attempt += 1;
            if !result.needs_regeneration() {
                return Ok(RegenOutcome {
                    raw,
                    result,
                    attempts: attempt,
                    state: ContentState::Draft,
                });
            }
            if attempt >= max_attempts {
                return Ok(RegenOutcome {
                    raw,
                    result,
                    attempts: attempt,
                    state: ContentState::PendingReview,
                });
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegenOutcome {
    pub raw: String,
    pub result: PostResult,
    pub attempts: u32,
    pub state: ContentState,
}

fn blocked_verdict(text: &str, reason: &BlockReason) -> VerificationVerdict {
    let term = match reason {
        BlockReason::Topic { term, .. } | BlockReason::Hap { term } => term.to_lowercase(),
    };
    let lower = text.to_lowercase();
    // Lowercasing can shift byte offsets for some scripts; only keep offsets
    // that are valid in the original text.
    let (start, end) = match lower.find(&term) {
        Some(s) if lower.len() == text.len() => (s, s + term.len()),
        _ => (0, 0),
    };
    VerificationVerdict {
        claim: Claim {
            kind: ClaimKind::Other,
            surface: text.get(start..end).unwrap_or_default().to_string(),
            value: ClaimValue::Text(term),
            start,
            end,
            attribute: Some("screen".into()),
            subject: None,
        },
        status: VerdictStatus::Blocked,
        correction: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PronounClass;
    use serde_json::json;

    fn feeds() -> GroundTruthFeeds {
        GroundTruthFeeds {
            rosters: vec![
                PersonRecord::new("Player One", "USA", PronounClass::Feminine).with_rank(46),
                PersonRecord::new("Player Two", "ESP", PronounClass::Feminine).with_rank(3),
            ],
            draws_or_leaderboard: json!({"pairings": [["Player One", "Player Two"]]}),
            ..Default::default()
        }
    }

    #[test]
    fn clean_text_is_unchanged_and_verified() {
        let f = feeds();
        let raw = "Player One, ranked 46th in the world, will face Player Two.";
        let r = PostProcessor::builtin().post(raw, "tennis/match_start", &f, f.person("Player One"), &ScreenPolicy::default());
        assert_eq!(r.text, raw);
        assert_eq!(r.status, PostStatus::Final);
        assert!(r.verdicts.iter().all(|v| v.status == VerdictStatus::Verified), "{:?}", r.verdicts);
    }

    #[test]
    fn corrupted_rank_repaired() {
        let f = feeds();
        let raw = "Player One, ranked 44 th in the world, will face Player Two.";
        let r = PostProcessor::builtin().post(raw, "tennis/match_start", &f, f.person("Player One"), &ScreenPolicy::default());
        assert_eq!(r.text, "Player One, ranked 46th in the world, will face Player Two.");
        assert_eq!(r.corrected(), 1);
    }

    #[test]
    fn misspelled_name_repaired_and_pronouns_enforced() {
        let f = feeds();
        let raw = "Player Onn, ranked 46th, will face Player Two. He is ready.";
        let r = PostProcessor::builtin().post(raw, "tennis/match_start", &f, f.person("Player One"), &ScreenPolicy::default());
        assert_eq!(r.text, "Player One, ranked 46th, will face Player Two. She is ready.");
    }

    #[test]
    fn blocked_twice_goes_to_review() {
        let f = feeds();
        let policy = ScreenPolicy::default().with_avoid_topics(["violence"]);
        let pp = PostProcessor::builtin();
        let out = pp
            .post_with_regeneration::<()>(DEFAULT_MAX_ATTEMPTS, "tennis/match_start", &f, None, &[], &policy, |_| {
                Ok("Player One got into a fight.".into())
            })
            .unwrap();
        assert_eq!(out.attempts, 2);
        assert_eq!(out.state, ContentState::PendingReview);
        assert!(out.result.verdicts.iter().any(|v| v.status == VerdictStatus::Blocked));

        let out = pp
            .post_with_regeneration::<()>(DEFAULT_MAX_ATTEMPTS, "tennis/match_start", &f, None, &[], &policy, |i| {
                Ok(if i == 0 { "A fight broke out." } else { "Player One walks on court." }.into())
            })
            .unwrap();
        assert_eq!((out.attempts, out.state), (2, ContentState::Draft));
    }

    #[test]
    fn post_is_idempotent_on_examples() {
        let f = feeds();
        let pp = PostProcessor::builtin();
        let policy = ScreenPolicy::default().with_char_limit(60);
        for raw in [
            "Player Onn, ranked 12 th, will face Player Two. He is ready.",
            "Player Two ranked 46th in the world will play against Player One.",
            "Player One ranked 50th in the world. Her opponent is Player Twoo.",
        ] {
            let once = pp.post(raw, "tennis/match_start", &f, f.person("Player One"), &policy);
            let twice = pp.post(&once.text, "tennis/match_start", &f, f.person("Player One"), &policy);
            assert_eq!(once.text, twice.text, "{raw}");
        }
    }
}
