//! `t_raw = LLM(p′′)`: pluggable text generation backends.

mod mock;
mod remote;

pub use mock::{Corruption, MockGenerator, Trace, ANSWERS};
pub use remote::{RemoteConfig, RemoteGenerator, RemoteRequest, RemoteResponse};

use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::EngineeredPrompt;
use crate::prompt::STOP_SEQUENCE;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerateError {
    /// Worth another attempt: timeouts, 5xx.
    #[error("retryable generation failure: {0}")]
    Retryable(String),
    /// Budget exhausted, bad request, bad configuration.
    #[error("permanent generation failure: {0}")]
    Permanent(String),
    #[error("invalid decoding parameters: {0}")]
    InvalidParams(String),
}

impl GenerateError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GenerateError::Retryable(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
    pub beams: u32,
    pub max_tokens: u32,
    #[serde(default)]
    pub seed: u64,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self::golf()
    }
}

impl DecodingParams {
    /// Conservative factual preset: low temperature, top_k 10, top_p 1.
    pub fn golf() -> Self {
        Self {
            temperature: 0.1,
            top_k: 10,
            top_p: 1.0,
            beams: 1,
            max_tokens: 120,
            seed: 0,
        }
    }

    /// Temperature 1 with 5 beams.
    pub fn tennis() -> Self {
        Self {
            temperature: 1.0,
            top_k: 50,
            top_p: 1.0,
            beams: 5,
            max_tokens: 120,
            seed: 0,
        }
    }

    /// Temperature 1 with top_k 50.
    pub fn football() -> Self {
        Self {
            temperature: 1.0,
            top_k: 50,
            top_p: 1.0,
            beams: 1,
            max_tokens: 80,
            seed: 0,
        }
    }

    /// High temperature, top_k 100.
    pub fn music() -> Self {
        Self {
            temperature: 0.85,
            top_k: 100,
            top_p: 1.0,
            beams: 1,
            max_tokens: 160,
            seed: 0,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "golf" | "conservative" => Some(Self::golf()),
            "tennis" => Some(Self::tennis()),
            "football" => Some(Self::football()),
            "music" => Some(Self::music()),
            _ => None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), GenerateError> {
        let bad = |m: &str| Err(GenerateError::InvalidParams(m.to_string()));
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return bad("temperature must be a finite value ≥ 0");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must be in (0, 1]");
        }
        if self.top_k == 0 || self.beams == 0 || self.max_tokens == 0 {
            return bad("top_k, beams and max_tokens must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendProfile {
    pub name: String,
    pub preset: DecodingParams,
    #[serde(default)]
    pub corruption_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    /// Raw text with the stop sequence removed.
    pub text: String,
    pub finish_reason: FinishReason,
}

pub trait TextGenerator: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, prompt: &EngineeredPrompt, params: &DecodingParams) -> Result<Generation, GenerateError>;
}

/// Cuts `text` at the stop sequence (if any) and at `max_tokens`
/// whitespace-separated tokens.
pub fn finish(text: &str, max_tokens: u32) -> Generation {
    let (body, stopped) = match text.find(STOP_SEQUENCE) {
        Some(i) => (&text[..i], true),
        None => (text, false),
    };
    let tokens: Vec<&str> = body.split_whitespace().collect();
    if tokens.len() > max_tokens as usize {
        return Generation {
            text: tokens[..max_tokens as usize].join(" "),
            finish_reason: FinishReason::Length,
        };
    }
    Generation {
        text: body.trim().to_string(),
        finish_reason: if stopped { FinishReason::Stop } else { FinishReason::Length },
    }
}

/// Workers needed to sustain `target_rps` when each call takes
/// `latency_s` seconds and a worker runs `concurrency` calls at once.
pub fn estimate_capacity(target_rps: f64, latency_s: f64, concurrency: u32) -> u64 {
    if target_rps <= 0.0 || latency_s <= 0.0 || concurrency == 0 {
        return 0;
    }
    let raw = target_rps * latency_s / concurrency as f64;
    // Guard against float noise such as 834.0000000000001.
    let rounded = raw.round();
    if (raw - rounded).abs() < 1e-9 {
        rounded as u64
    } else {
        raw.ceil() as u64
    }
}

/// Counting semaphore bounding in-flight remote calls.
#[derive(Debug)]
pub struct ConcurrencyGate {
    limit: usize,
    in_use: Mutex<usize>,
    freed: Condvar,
}

pub struct GatePermit<'a> {
    gate: &'a ConcurrencyGate,
}

impl ConcurrencyGate {
    pub fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            in_use: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> GatePermit<'_> {
        let mut n = self.in_use.lock().expect("gate poisoned");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("gate poisoned");
        }
        *n += 1;
        GatePermit { gate: self }
    }

    pub fn in_use(&self) -> usize {
        *self.in_use.lock().expect("gate poisoned")
    }
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        let mut n = self.gate.in_use.lock().expect("gate poisoned");
        *n -= 1;
        self.gate.freed.notify_one();
    }
}
