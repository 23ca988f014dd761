//! HTTP surface: the consumer endpoints (`/personalize`, `/content/{id}`)
//! and the admin API used by the review console (`/review/*`, `/purge`,
//! `/story`, `/events`).
//!
//! Admin routes require `Authorization: Bearer <token>` when a token is
//! configured. Errors come back as `{"error": "..."}` with a matching status;
//! review conflicts add the item's current `state` and `revision`.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use gentext_core::model::{ContentState, ScoringEvent};
use gentext_core::pipeline::{PersonalizeRequest, Pipeline, PipelineError, ReviewError, ReviewItem, StoryRequest};
use gentext_core::store::{content_object_key, StoreError};

#[derive(Clone)]
pub struct AppState {
    pub pipeline: Arc<Pipeline>,
    pub admin_token: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({"error": message.into()}),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match &e {
            PipelineError::Config(_) | PipelineError::UnknownScene(_) | PipelineError::Model(_) | PipelineError::Script { .. } => {
                StatusCode::BAD_REQUEST
            }
            PipelineError::Store(StoreError::NotFound(_)) => StatusCode::NOT_FOUND,
            PipelineError::Store(StoreError::Unavailable(_)) => StatusCode::SERVICE_UNAVAILABLE,
            PipelineError::Generate(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        match e {
            ReviewError::NotFound(_) => ApiError::new(StatusCode::NOT_FOUND, e.to_string()),
            ReviewError::Invalid(_) => ApiError::new(StatusCode::BAD_REQUEST, e.to_string()),
            ReviewError::Conflict { state, revision, .. } => ApiError {
                status: StatusCode::CONFLICT,
                body: json!({"error": e.to_string(), "state": state, "revision": revision}),
            },
            ReviewError::Pipeline(p) => p.into(),
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs `f` off the async workers; generation and store writes block.
async fn blocking<T, E>(f: impl FnOnce() -> Result<T, E> + Send + 'static) -> Result<T, ApiError>
where
    T: Send + 'static,
    E: Into<ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(Into::into)
}

async fn require_token(State(s): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &s.admin_token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError::new(StatusCode::UNAUTHORIZED, "missing or wrong admin token").into_response();
        }
    }
    next.run(req).await
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

async fn personalize(State(s): State<AppState>, Json(req): Json<PersonalizeRequest>) -> Result<Response, ApiError> {
    let out = s.pipeline.personalize(&req)?;
    Ok(Json(out).into_response())
}

async fn content(State(s): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let entry = s.pipeline.cdn().fetch(&content_object_key(&id)).map_err(PipelineError::from)?;
    let mut resp = (StatusCode::OK, entry.bytes).into_response();
    let headers = resp.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    if let Ok(v) = HeaderValue::from_str(&format!("\"{}\"", entry.etag)) {
        headers.insert(header::ETAG, v);
    }
    Ok(resp)
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    state: Option<String>,
}

async fn review_list(State(s): State<AppState>, Query(q): Query<ListQuery>) -> ApiResult<Vec<ReviewItem>> {
    let name = q.state.as_deref().unwrap_or("pending_review");
    let state = ContentState::parse(name).ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, format!("unknown state `{name}`")))?;
    Ok(Json(s.pipeline.review_list(state)?))
}

async fn review_get(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<ReviewItem> {
    Ok(Json(s.pipeline.review_get(&id)?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditBody {
    pub final_text: String,
    pub revision: u32,
}

async fn review_put(State(s): State<AppState>, Path(id): Path<String>, Json(body): Json<EditBody>) -> ApiResult<ReviewItem> {
    let p = s.pipeline.clone();
    Ok(Json(blocking(move || p.review_edit(&id, &body.final_text, body.revision)).await?))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ApproveBody {
    #[serde(default)]
    pub revision: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApproveResponse {
    pub item: ReviewItem,
    /// The public object changed and its CDN key was purged.
    pub purged: bool,
}

async fn review_approve(State(s): State<AppState>, Path(id): Path<String>, body: Option<Json<ApproveBody>>) -> ApiResult<ApproveResponse> {
    let revision = body.and_then(|Json(b)| b.revision);
    let p = s.pipeline.clone();
    let (item, purged) = blocking(move || p.review_approve(&id, revision)).await?;
    Ok(Json(ApproveResponse { item, purged }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectBody {
    #[serde(default)]
    pub revision: Option<u32>,
    #[serde(default = "yes")]
    pub regenerate: bool,
}

impl Default for RejectBody {
    fn default() -> Self {
        Self {
            revision: None,
            regenerate: true,
        }
    }
}

fn yes() -> bool {
    true
}

async fn review_reject(State(s): State<AppState>, Path(id): Path<String>, body: Option<Json<RejectBody>>) -> ApiResult<ReviewItem> {
    let b = body.map(|Json(b)| b).unwrap_or_default();
    let p = s.pipeline.clone();
    Ok(Json(blocking(move || p.review_reject(&id, b.revision, b.regenerate)).await?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PurgeBody {
    pub keys: Vec<String>,
}

async fn purge(State(s): State<AppState>, Json(body): Json<PurgeBody>) -> ApiResult<Value> {
    let purged = s.pipeline.purge(&body.keys);
    Ok(Json(json!({"purged": purged})))
}

async fn story(State(s): State<AppState>, Json(req): Json<StoryRequest>) -> Result<Response, ApiError> {
    let p = s.pipeline.clone();
    let out = blocking(move || p.compose_story(&req)).await?;
    Ok(Json(out).into_response())
}

/// Accepts one event or an array of events onto the bus.
async fn events(State(s): State<AppState>, Json(body): Json<Value>) -> ApiResult<Value> {
    let list: Vec<ScoringEvent> = match body {
        Value::Array(_) => serde_json::from_value(body),
        other => serde_json::from_value(other).map(|e| vec![e]),
    }
    .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let mut partitions = Vec::with_capacity(list.len());
    for e in list {
        partitions.push(s.pipeline.submit(e)?);
    }
    Ok(Json(json!({"accepted": partitions.len(), "partitions": partitions})))
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let admin = Router::new()
        .route("/review", get(review_list))
        .route("/review/{id}", get(review_get).put(review_put))
        .route("/review/{id}/approve", post(review_approve))
        .route("/review/{id}/reject", post(review_reject))
        .route("/purge", post(purge))
        .route("/story", post(story))
        .route("/events", post(events))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    let app = Router::new()
        .route("/healthz", get(health))
        .route("/personalize", post(personalize))
        .route("/content/{id}", get(content))
        .merge(admin)
        .with_state(state);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}
