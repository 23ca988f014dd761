//! Deterministic offline backend driven by per-scene answer templates.
//!
//! Answer templates use `${field}` slots (`${field|ord}` for ordinals,
//! `${a.0}` for array items) filled from the prompt's JSON input, plus the
//! pronoun slots `${subj}`, `${obj}`, `${poss}` and their capitalized forms.
//! A `{placeholder}` without the dollar sign is left alone, which is what the
//! slot generator relies on.
//!
//! With probability `corruption_rate` exactly one numeric slot is moved by
//! ±1..9 (never below zero) or one name slot is swapped for another roster
//! name. The decision uses its own random stream so that the sentence chosen
//! does not depend on the corruption rate.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{finish, DecodingParams, GenerateError, Generation, TextGenerator};
use crate::hash::fnv1a64_parts;
use crate::model::{EngineeredPrompt, PronounClass};
use crate::ontology::NAME_FIELDS;
use crate::prompt::STOP_SEQUENCE;
use crate::text::{number_text, ordinal};

pub const ANSWERS: &str = include_str!("../../assets/answers.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corruption {
    pub slot: String,
    pub original: String,
    pub planted: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub generation: Generation,
    pub variant: Option<usize>,
    pub corruption: Option<Corruption>,
}

#[derive(Debug, Clone)]
pub struct MockGenerator {
    answers: BTreeMap<String, Vec<String>>,
    corruption_rate: f64,
    roster: Vec<String>,
    slot_re: Regex,
    pronoun_re: Regex,
}

impl Default for MockGenerator {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone)]
enum Piece {
    Text(String),
    Slot { path: String, ord: bool },
}

impl MockGenerator {
    pub fn new() -> Self {
        let answers: BTreeMap<String, Vec<String>> = serde_json::from_str(ANSWERS).expect("shipped answers parse");
        Self {
            answers,
            corruption_rate: 0.0,
            roster: Vec::new(),
            slot_re: Regex::new(r"\$\{([A-Za-z0-9_.]+)(\|ord)?\}").expect("static regex"),
            pronoun_re: Regex::new(r"(?i)use (feminine|masculine|neutral) pronouns").expect("static regex"),
        }
    }

    pub fn with_corruption_rate(mut self, rate: f64) -> Self {
        self.corruption_rate = rate.clamp(0.0, 1.0);
        self
    }

    /// Names available for name-swap corruption.
    pub fn with_roster(mut self, names: impl IntoIterator<Item = String>) -> Self {
        self.roster = names.into_iter().collect();
        self
    }

    pub fn with_answers(mut self, scene: impl Into<String>, variants: Vec<String>) -> Self {
        self.answers.insert(scene.into(), variants);
        self
    }

    pub fn corruption_rate(&self) -> f64 {
        self.corruption_rate
    }

    fn parse(&self, template: &str) -> Vec<Piece> {
        let mut out = Vec::new();
        let mut last = 0;
        for caps in self.slot_re.captures_iter(template) {
            let m = caps.get(0).expect("whole match");
            if m.start() > last {
                out.push(Piece::Text(template[last..m.start()].to_string()));
            }
            out.push(Piece::Slot {
                path: caps[1].to_string(),
                ord: caps.get(2).is_some(),
            });
            last = m.end();
        }
        if last < template.len() {
            out.push(Piece::Text(template[last..].to_string()));
        }
        out
    }

    /// Generation plus the planted corruption, if any.
    pub fn generate_traced(&self, prompt: &EngineeredPrompt, params: &DecodingParams) -> Result<Trace, GenerateError> {
        params.validate()?;
        if prompt.rendered.trim().is_empty() {
            return Err(GenerateError::Permanent("empty prompt".into()));
        }
        let params_json = serde_json::to_string(params).map_err(|e| GenerateError::Permanent(e.to_string()))?;
        let seed = fnv1a64_parts([
            params.seed.to_le_bytes().as_slice(),
            prompt.rendered.as_bytes(),
            params_json.as_bytes(),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut corrupt_rng = ChaCha8Rng::seed_from_u64(seed);
        corrupt_rng.set_stream(1);

        let data: Value = serde_json::from_str(&prompt.input).unwrap_or(Value::Null);
        let pronouns = self
            .pronoun_re
            .captures(&prompt.instruction)
            .or_else(|| self.pronoun_re.captures(&prompt.rendered))
            .and_then(|c| PronounClass::parse(&c[1]))
            .unwrap_or(PronounClass::Neutral);

        let eligible: Vec<(usize, Vec<Piece>)> = self
            .answers
            .get(&prompt.scene)
            .map(|vs| {
                vs.iter()
                    .enumerate()
                    .map(|(i, v)| (i, self.parse(v)))
                    .filter(|(_, pieces)| {
                        pieces.iter().all(|p| match p {
                            Piece::Text(_) => true,
                            Piece::Slot { path, .. } => pronoun(path, pronouns).is_some() || lookup(&data, path).is_some(),
                        })
                    })
                    .collect()
            })
            .unwrap_or_default();

        let roll: f64 = corrupt_rng.random();
        let wants_corruption = roll < self.corruption_rate;

        if eligible.is_empty() {
            // No answer template fits: echo the input line.
            let text = format!("{}{STOP_SEQUENCE}", prompt.input.trim());
            return Ok(Trace {
                generation: finish(&text, params.max_tokens),
                variant: None,
                corruption: None,
            });
        }

        let n = eligible.len();
        let pick = if params.temperature == 0.0 {
            0
        } else {
            let span = ((n as f64 * params.temperature.min(1.0)).ceil() as usize).clamp(1, n);
            rng.random_range(0..span)
        };
        let (variant, pieces) = &eligible[pick];

        // Candidate slot occurrences for corruption.
        let present_names: Vec<&str> = NAME_FIELDS
            .iter()
            .filter_map(|f| data.get(*f).and_then(Value::as_str))
            .collect();
        let mut candidates: Vec<usize> = Vec::new();
        for (i, p) in pieces.iter().enumerate() {
            if let Piece::Slot { path, .. } = p {
                match lookup(&data, path) {
                    Some(Value::Number(_)) => candidates.push(i),
                    Some(Value::String(_))
                        if NAME_FIELDS.contains(&path.as_str())
                            && self.roster.iter().any(|r| !present_names.contains(&r.as_str())) =>
                    {
                        candidates.push(i)
                    }
                    _ => {}
                }
            }
        }
        let target = (wants_corruption && !candidates.is_empty())
            .then(|| candidates[corrupt_rng.random_range(0..candidates.len())]);

        let mut text = String::new();
        let mut corruption = None;
        for (i, p) in pieces.iter().enumerate() {
            match p {
                Piece::Text(t) => text.push_str(t),
                Piece::Slot { path, ord } => {
                    if let Some(word) = pronoun(path, pronouns) {
                        text.push_str(word);
                        continue;
                    }
                    let value = lookup(&data, path).expect("eligible variant");
                    let original = format_value(value, *ord);
                    if Some(i) != target {
                        text.push_str(&original);
                        continue;
                    }
                    let planted = match value {
                        Value::Number(n) => {
                            let v = n.as_f64().unwrap_or(0.0);
                            let d: f64 = corrupt_rng.random_range(1..=9) as f64;
                            let up: bool = corrupt_rng.random();
                            let moved = if up || v - d < 0.0 { v + d } else { v - d };
                            format_value(&Value::from(moved), *ord)
                        }
                        _ => {
                            let pool: Vec<&String> = self
                                .roster
                                .iter()
                                .filter(|r| !present_names.contains(&r.as_str()))
                                .collect();
                            pool[corrupt_rng.random_range(0..pool.len())].clone()
                        }
                    };
                    text.push_str(&planted);
                    corruption = Some(Corruption {
                        slot: path.clone(),
                        original,
                        planted,
                    });
                }
            }
        }
        text.push_str(STOP_SEQUENCE);
        Ok(Trace {
            generation: finish(&text, params.max_tokens),
            variant: Some(*variant),
            corruption,
        })
    }
}

impl TextGenerator for MockGenerator {
    fn name(&self) -> &str {
        "mock"
    }

    fn generate(&self, prompt: &EngineeredPrompt, params: &DecodingParams) -> Result<Generation, GenerateError> {
        self.generate_traced(prompt, params).map(|t| t.generation)
    }
}

fn lookup<'a>(data: &'a Value, path: &str) -> Option<&'a Value> {
    let mut cur = data;
    for part in path.split('.') {
        cur = match cur {
            Value::Object(m) => m.get(part)?,
            Value::Array(a) => a.get(part.parse::<usize>().ok()?)?,
            _ => return None,
        };
    }
    match cur {
        Value::Null | Value::Object(_) | Value::Array(_) => None,
        v => Some(v),
    }
}

fn format_value(v: &Value, ord: bool) -> String {
    match v {
        Value::Number(n) => {
            let f = n.as_f64().unwrap_or(0.0);
            if ord {
                ordinal(f.round() as i64)
            } else {
                number_text(f)
            }
        }
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn pronoun(slot: &str, class: PronounClass) -> Option<&'static str> {
    use PronounClass::*;
    Some(match (slot, class) {
        ("subj", Masculine) => "he",
        ("subj", Feminine) => "she",
        ("subj", Neutral) => "they",
        ("Subj", Masculine) => "He",
        ("Subj", Feminine) => "She",
        ("Subj", Neutral) => "They",
        ("obj", Masculine) => "him",
        ("obj", Feminine) => "her",
        ("obj", Neutral) => "them",
        ("poss", Masculine) => "his",
        ("poss", Feminine) => "her",
        ("poss", Neutral) => "their",
        ("Poss", Masculine) => "His",
        ("Poss", Feminine) => "Her",
        ("Poss", Neutral) => "Their",
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::FinishReason;
    use crate::model::PromptDraft;
    use crate::prompt::{build_prompt, PromptOptions};
    use serde_json::json;

    fn golf_prompt(hole: i64) -> EngineeredPrompt {
        let draft = PromptDraft::new("Describe the shot.", "golf/shot");
        build_prompt(
            &draft,
            &json!({"player": "Golf Player One", "hole": hole, "ball_position": "Pine Straw", "shot": 2, "player_rank": 12}),
            &PromptOptions::default(),
        )
        .unwrap()
    }

    #[test]
    fn temp_zero_is_deterministic_and_uses_tuple() {
        let g = MockGenerator::new();
        let mut p = DecodingParams::golf();
        p.temperature = 0.0;
        let a = g.generate(&golf_prompt(9), &p).unwrap();
        assert!(a.text.contains("hole 9") && a.text.contains("Pine Straw"), "{}", a.text);
        assert_eq!(a.finish_reason, FinishReason::Stop);
        for _ in 0..5 {
            assert_eq!(g.generate(&golf_prompt(9), &p).unwrap(), a);
        }
    }

    #[test]
    fn same_seed_same_output_any_temperature() {
        let g = MockGenerator::new().with_corruption_rate(0.5);
        let p = DecodingParams::tennis().with_seed(77);
        assert_eq!(
            g.generate_traced(&golf_prompt(3), &p).unwrap(),
            g.generate_traced(&golf_prompt(3), &p).unwrap()
        );
    }

    #[test]
    fn max_tokens_bound() {
        let g = MockGenerator::new();
        let mut p = DecodingParams::golf();
        p.max_tokens = 3;
        let out = g.generate(&golf_prompt(9), &p).unwrap();
        assert_eq!(out.text.split_whitespace().count(), 3);
        assert_eq!(out.finish_reason, FinishReason::Length);
    }

    #[test]
    fn corruption_changes_exactly_one_slot() {
        let g = MockGenerator::new().with_corruption_rate(1.0);
        let clean = MockGenerator::new();
        for seed in 0..200 {
            let p = DecodingParams::golf().with_seed(seed);
            let t = g.generate_traced(&golf_prompt(9), &p).unwrap();
            let c = t.corruption.clone().expect("rate 1 always corrupts");
            assert_ne!(c.original, c.planted);
            let base = clean.generate_traced(&golf_prompt(9), &p).unwrap();
            assert_eq!(base.variant, t.variant, "variant independent of corruption");
            let diff = base
                .generation
                .text
                .split_whitespace()
                .zip(t.generation.text.split_whitespace())
                .filter(|(a, b)| a != b)
                .count();
            assert_eq!(diff, 1, "{} vs {}", base.generation.text, t.generation.text);
        }
    }

    #[test]
    fn name_swap_uses_roster() {
        let g = MockGenerator::new()
            .with_corruption_rate(1.0)
            .with_roster(["Golf Player One".to_string(), "Golf Player Two".to_string()]);
        let mut swaps = 0;
        for seed in 0..300 {
            let t = g.generate_traced(&golf_prompt(9), &DecodingParams::golf().with_seed(seed)).unwrap();
            let c = t.corruption.unwrap();
            if c.slot == "player" {
                assert_eq!(c.planted, "Golf Player Two");
                swaps += 1;
            }
        }
        assert!(swaps > 0);
    }

    #[test]
    fn pronouns_follow_instruction() {
        let draft = PromptDraft::new("Tell a story.", "music/artist_story");
        let person = crate::model::PersonRecord::new("Artist Name", "", PronounClass::Feminine);
        let prompt = build_prompt(
            &draft,
            &json!({"artist": "Artist Name"}),
            &PromptOptions {
                subject: Some(&person),
                ..Default::default()
            },
        )
        .unwrap();
        let out = MockGenerator::new().generate(&prompt, &DecodingParams::music()).unwrap();
        assert!(out.text.contains(" her "), "{}", out.text);
    }

    #[test]
    fn unknown_scene_echoes_input() {
        let prompt = EngineeredPrompt {
            scene: "x/y".into(),
            input: "hello there".into(),
            rendered: "input: hello there".into(),
            ..Default::default()
        };
        assert_eq!(MockGenerator::new().generate(&prompt, &DecodingParams::golf()).unwrap().text, "hello there");
    }
}
