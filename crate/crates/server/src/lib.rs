//! HTTP API over a [`StudyService`].
//!
//! | Method | Path | Caller |
//! |---|---|---|
//! | GET | `/studies/{id}/next-task?rater={rater}` | rater |
//! | POST | `/tasks/{id}/rating` | rater |
//! | POST | `/tasks/{id}/unviewable` | rater |
//! | GET | `/studies/{id}/summary` | admin |
//! | GET | `/studies/{id}/export?format=json\|csv` | admin |
//! | GET | `/healthz` | anyone |
//!
//! Callers authenticate with `Authorization: Bearer {token}`. Rater tokens map
//! to one rater id; admin tokens may export. Errors are JSON objects
//! `{"error": kind, "message": text}`.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use medeval::study::{RatingSubmission, StudyError, StudyService};
use serde::{Deserialize, Serialize};

/// Bearer tokens. JSON: `{"raters": {"token": "rater id"}, "admins": ["token"]}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokens {
    #[serde(default)]
    pub raters: BTreeMap<String, String>,
    #[serde(default)]
    pub admins: Vec<String>,
}

impl Tokens {
    pub fn from_path(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[derive(Clone)]
pub struct AppState {
    pub service: Arc<StudyService>,
    pub tokens: Arc<Tokens>,
}

impl AppState {
    pub fn new(service: StudyService, tokens: Tokens) -> Self {
        AppState { service: Arc::new(service), tokens: Arc::new(tokens) }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, kind, message: message.into() }
    }
}

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        let (status, kind) = match &e {
            StudyError::UnknownStudy(_) | StudyError::UnknownTask(_) => (StatusCode::NOT_FOUND, "not_found"),
            StudyError::WrongRater { .. } => (StatusCode::FORBIDDEN, "forbidden"),
            StudyError::Validation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "validation"),
            StudyError::Conflict(_) | StudyError::Excluded(_) | StudyError::StudyExists(_) => (StatusCode::CONFLICT, "conflict"),
            StudyError::Invalid(_) | StudyError::Infeasible { .. } => (StatusCode::BAD_REQUEST, "invalid"),
            StudyError::Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        ApiError::new(status, kind, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            log::error!("{}", self.message);
        }
        (self.status, Json(serde_json::json!({"error": self.kind, "message": self.message}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn bearer(headers: &HeaderMap) -> ApiResult<&str> {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim)
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing bearer token"))
}

fn rater(state: &AppState, headers: &HeaderMap) -> ApiResult<String> {
    let token = bearer(headers)?;
    state
        .tokens
        .raters
        .get(token)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "unknown rater token"))
}

fn admin(state: &AppState, headers: &HeaderMap) -> ApiResult<()> {
    let token = bearer(headers)?;
    if state.tokens.admins.iter().any(|t| t == token) {
        Ok(())
    } else {
        Err(ApiError::new(StatusCode::FORBIDDEN, "forbidden", "admin token required"))
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, StudyError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Deserialize)]
struct NextTaskQuery {
    rater: Option<String>,
}

async fn next_task(
    State(state): State<AppState>,
    headers: HeaderMap,
    UrlPath(study): UrlPath<String>,
    Query(q): Query<NextTaskQuery>,
) -> ApiResult<Response> {
    let who = rater(&state, &headers)?;
    if q.rater.as_ref().is_some_and(|r| *r != who) {
        return Err(ApiError::new(StatusCode::FORBIDDEN, "forbidden", "token does not belong to the requested rater"));
    }
    match state.service.next_task(&study, &who)? {
        Some(payload) => Ok(Json(payload).into_response()),
        None => Ok(StatusCode::NO_CONTENT.into_response()),
    }
}

async fn rating(
    State(state): State<AppState>,
    headers: HeaderMap,
    UrlPath(task): UrlPath<String>,
    Json(submission): Json<RatingSubmission>,
) -> ApiResult<Response> {
    let who = rater(&state, &headers)?;
    let service = Arc::clone(&state.service);
    let ack = blocking(move || service.record_rating(&task, &who, &submission)).await?;
    Ok(Json(ack).into_response())
}

#[derive(Deserialize)]
struct UnviewableBody {
    #[serde(default)]
    reason: String,
}

async fn unviewable(
    State(state): State<AppState>,
    headers: HeaderMap,
    UrlPath(task): UrlPath<String>,
    Json(body): Json<UnviewableBody>,
) -> ApiResult<Response> {
    let who = rater(&state, &headers)?;
    let service = Arc::clone(&state.service);
    let ack = blocking(move || service.mark_unviewable(&task, &who, &body.reason)).await?;
    Ok(Json(ack).into_response())
}

async fn summary(State(state): State<AppState>, headers: HeaderMap, UrlPath(study): UrlPath<String>) -> ApiResult<Response> {
    admin(&state, &headers)?;
    Ok(Json(state.service.summary(&study)?).into_response())
}

#[derive(Deserialize)]
struct ExportQuery {
    format: Option<String>,
}

async fn export(
    State(state): State<AppState>,
    headers: HeaderMap,
    UrlPath(study): UrlPath<String>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<Response> {
    admin(&state, &headers)?;
    match q.format.as_deref().unwrap_or("json") {
        "json" => Ok(Json(state.service.export(&study)?).into_response()),
        "csv" => Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], state.service.export_csv(&study)?).into_response()),
        other => Err(ApiError::new(StatusCode::BAD_REQUEST, "invalid", format!("unknown export format {other:?}"))),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/studies/{id}/next-task", get(next_task))
        .route("/studies/{id}/summary", get(summary))
        .route("/studies/{id}/export", get(export))
        .route("/tasks/{id}/rating", post(rating))
        .route("/tasks/{id}/unviewable", post(unviewable))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
