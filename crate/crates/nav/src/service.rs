//! HTTP endpoints over one read-only graph.
//!
//! | method | path             | body                              | reply          |
//! |--------|------------------|-----------------------------------|----------------|
//! | POST   | `/query`         | `{"text": .., "timing": false}`   | NavGoal        |
//! | POST   | `/plan`          | `{"from": [x,y,z], "to_view": ..}`| Plan           |
//! | GET    | `/health`        |                                   | `{"status": "ok", ..}` |
//! | GET    | `/graph/summary` |                                   | GraphSummary   |
//!
//! Errors are `{"error": .., "kind": ..}` with 400 for malformed requests, 404
//! for unknown views, 422 for valid requests the graph cannot satisfy and 502
//! for provider failures. Failed queries also carry the partial trace.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hmsg::fast::MatchError;
use hmsg::geometry::Point3;
use hmsg::model::SceneGraph;
use hmsg::parser::ParseError;
use hmsg::planner::{plan_from, PlanError};
use hmsg::providers::ProviderSuite;
use hmsg::slow::{fsr_query, FsrError, FsrOptions, PipelineError, TraceStep};
use serde::{Deserialize, Serialize};
use tracing::warn;

#[derive(Clone)]
pub struct AppState {
    graph: Arc<SceneGraph>,
    providers: ProviderSuite,
    options: FsrOptions,
}

impl AppState {
    pub fn new(graph: SceneGraph, providers: ProviderSuite, options: FsrOptions) -> Self {
        Self { graph: Arc::new(graph), providers, options }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRequest {
    pub text: String,
    #[serde(default)]
    pub timing: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanRequest {
    pub from: Point3,
    pub to_view: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TraceStep>,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, error: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { error: error.into(), kind: kind.to_owned(), trace: Vec::new() } }
    }

    fn bad_request(error: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad-request", error)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<FsrError> for ApiError {
    fn from(e: FsrError) -> Self {
        let (status, kind) = match &e.source {
            PipelineError::Parse(ParseError::Provider(_)) | PipelineError::Match(MatchError::Provider(_)) => {
                (StatusCode::BAD_GATEWAY, "provider")
            }
            PipelineError::Parse(_) => (StatusCode::BAD_REQUEST, "bad-instruction"),
            PipelineError::Match(_) | PipelineError::EmptyGoalView(_) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "no-goal")
            }
        };
        let mut err = ApiError::new(status, kind, e.to_string());
        err.body.trace = e.trace;
        err
    }
}

impl From<PlanError> for ApiError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::UnknownView(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown-view", e.to_string()),
            PlanError::Unreachable { .. } => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unreachable", e.to_string()),
            PlanError::NoViews => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "no-views", e.to_string()),
        }
    }
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request: {e}")))
}

async fn query(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: QueryRequest = parse_body(&body)?;
    if req.text.trim().is_empty() {
        return Err(ApiError::bad_request("instruction text is empty"));
    }
    let options = FsrOptions { record_timing: req.timing, ..state.options };
    // provider calls block; keep them off the async workers
    let result = tokio::task::spawn_blocking(move || fsr_query(&req.text, &state.graph, &state.providers, &options))
        .await
        .map_err(|e| {
            warn!(error = %e, "query task failed");
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "query task failed")
        })?;
    Ok(Json(result?).into_response())
}

async fn plan(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: PlanRequest = parse_body(&body)?;
    if !req.from.iter().all(|c| c.is_finite()) {
        return Err(ApiError::bad_request("`from` must be finite"));
    }
    let p = plan_from(&req.from, &req.to_view.as_str().into(), &state.graph)?;
    Ok(Json(p).into_response())
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "nodes": state.graph.node_count() }))
}

async fn summary(State(state): State<AppState>) -> Response {
    Json(state.graph.summary()).into_response()
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/query", post(query))
        .route("/plan", post(plan))
        .route("/health", get(health))
        .route("/graph/summary", get(summary))
        .with_state(state)
}
