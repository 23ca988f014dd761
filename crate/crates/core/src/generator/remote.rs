//! HTTP inference client.
//!
//! Protocol: `POST {url}` with `{prompt, temperature, top_k, top_p, beams,
//! max_tokens, stop}` and an optional bearer token; the service answers
//! `{text}`. Timeouts, transport failures and 5xx are retried once after a
//! backoff, 402/429 mean the budget is spent.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::{finish, ConcurrencyGate, DecodingParams, FinishReason, GenerateError, Generation, TextGenerator};
use crate::model::EngineeredPrompt;
use crate::prompt::STOP_SEQUENCE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteRequest {
    pub prompt: String,
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
    pub beams: u32,
    pub max_tokens: u32,
    pub stop: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub url: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub token_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_concurrency")]
    pub max_in_flight: usize,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_timeout_ms() -> u64 {
    10_000
}
fn default_concurrency() -> usize {
    8
}
fn default_backoff_ms() -> u64 {
    200
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            token_env: None,
            timeout_ms: default_timeout_ms(),
            max_in_flight: default_concurrency(),
            backoff_ms: default_backoff_ms(),
        }
    }
}

pub struct RemoteGenerator {
    config: RemoteConfig,
    token: Option<String>,
    agent: Agent,
    gate: Arc<ConcurrencyGate>,
}

impl std::fmt::Debug for RemoteGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteGenerator")
            .field("url", &self.config.url)
            .field("has_token", &self.token.is_some())
            .finish()
    }
}

impl RemoteGenerator {
    pub fn new(config: RemoteConfig) -> Self {
        let token = config.token_env.as_deref().and_then(|k| std::env::var(k).ok());
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Arc::new(ConcurrencyGate::new(config.max_in_flight));
        Self {
            config,
            token,
            agent,
            gate,
        }
    }

    fn call_once(&self, body: &RemoteRequest) -> Result<String, GenerateError> {
        let _permit = self.gate.acquire();
        let mut req = self.agent.post(&self.config.url);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let resp = req
            .send_json(body)
            .map_err(|e| GenerateError::Retryable(format!("transport: {e}")))?;
        let status = resp.status().as_u16();
        match status {
            200..=299 => {
                let parsed: RemoteResponse = resp
                    .into_body()
                    .read_json()
                    .map_err(|e| GenerateError::Permanent(format!("bad response body: {e}")))?;
                Ok(parsed.text)
            }
            402 | 429 => Err(GenerateError::Permanent(format!("budget exceeded (HTTP {status})"))),
            500..=599 => Err(GenerateError::Retryable(format!("HTTP {status}"))),
            _ => Err(GenerateError::Permanent(format!("HTTP {status}"))),
        }
    }
}

impl TextGenerator for RemoteGenerator {
    fn name(&self) -> &str {
        "remote"
    }

    fn generate(&self, prompt: &EngineeredPrompt, params: &DecodingParams) -> Result<Generation, GenerateError> {
        params.validate()?;
        if prompt.rendered.trim().is_empty() {
            return Err(GenerateError::Permanent("empty prompt".into()));
        }
        let body = RemoteRequest {
            prompt: prompt.rendered.clone(),
            temperature: params.temperature,
            top_k: params.top_k,
            top_p: params.top_p,
            beams: params.beams,
            max_tokens: params.max_tokens,
            stop: vec![STOP_SEQUENCE.to_string()],
        };
        let text = match self.call_once(&body) {
            Err(e) if e.is_retryable() => {
                std::thread::sleep(Duration::from_millis(self.config.backoff_ms));
                self.call_once(&body)?
            }
            other => other?,
        };
        let mut g = finish(&text, params.max_tokens);
        if !text.contains(STOP_SEQUENCE) && g.text.split_whitespace().count() < params.max_tokens as usize {
            // The service strips the stop sequence itself.
            g.finish_reason = FinishReason::Stop;
        }
        Ok(g)
    }
}
