//! Exemplar banks and few-shot block assembly.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::model::Exemplar;

/// Terminates every exemplar output.
pub const STOP_SEQUENCE: &str = "\n\nDone";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExemplarBank {
    pub scene_type: String,
    pub examples: Vec<Exemplar>,
    #[serde(default)]
    pub style: String,
}

impl ExemplarBank {
    pub fn new(scene_type: impl Into<String>, examples: Vec<Exemplar>) -> Self {
        Self {
            scene_type: scene_type.into(),
            examples,
            style: String::new(),
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, PromptError> {
        serde_json::from_slice(bytes).map_err(|e| PromptError::Asset(e.to_string()))
    }

    /// The first `k` exemplars of a `seed`-determined shuffle.
    pub fn select(&self, k: usize, seed: u64) -> Result<Vec<Exemplar>, PromptError> {
        if k > self.examples.len() {
            return Err(PromptError::NotEnoughExemplars {
                scene: self.scene_type.clone(),
                wanted: k,
                available: self.examples.len(),
            });
        }
        let mut idx: Vec<usize> = (0..self.examples.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Ok(idx[..k].iter().map(|&i| self.examples[i].clone()).collect())
    }
}

/// `input:`/`output:` pairs, each output closed by [`STOP_SEQUENCE`].
pub fn exemplar_block(examples: &[Exemplar]) -> String {
    let mut out = String::new();
    for (i, ex) in examples.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str("input: ");
        out.push_str(&ex.input);
        out.push_str("\noutput: ");
        out.push_str(&ex.output);
        out.push_str(STOP_SEQUENCE);
    }
    out
}

pub fn assemble_few_shot(instruction: &str, bank: &ExemplarBank, k: usize, seed: u64) -> Result<String, PromptError> {
    let chosen = bank.select(k, seed)?;
    if chosen.is_empty() {
        return Ok(instruction.to_string());
    }
    Ok(format!("{instruction}\n{}", exemplar_block(&chosen)))
}
