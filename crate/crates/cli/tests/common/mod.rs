//! Fixtures shared by the integration tests: the example config files and
//! helpers for driving the router in-process.

#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

use gentext::server::{router, AppState};
use gentext_core::clock::SimClock;
use gentext_core::model::GroundTruthFeeds;
use gentext_core::pipeline::{Pipeline, PipelineConfig, PipelineParts};
use gentext_core::prompt::{Passage, RetrievalCorpus};

pub fn config_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../config")
}

pub fn example_feeds() -> GroundTruthFeeds {
    let text = std::fs::read_to_string(config_dir().join("feeds.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn example_corpus() -> RetrievalCorpus {
    let text = std::fs::read_to_string(config_dir().join("corpus.json")).unwrap();
    let passages: Vec<Passage> = serde_json::from_str(&text).unwrap();
    RetrievalCorpus::new(passages).unwrap()
}

/// Built-in config on a simulated clock with the example feeds and corpus.
pub fn pipeline_with(config: PipelineConfig) -> Arc<Pipeline> {
    Arc::new(
        Pipeline::with_parts(
            config,
            PipelineParts {
                clock: Some(SimClock::new()),
                feeds: Some(example_feeds()),
                corpus: Some(example_corpus()),
                ..Default::default()
            },
        )
        .unwrap(),
    )
}

pub fn app(p: &Arc<Pipeline>, token: Option<&str>) -> Router {
    router(
        AppState {
            pipeline: p.clone(),
            admin_token: token.map(str::to_string),
        },
        None,
    )
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>, token: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, value)
}
