use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use casematch::review::{LabelSubmission, ReviewSession};
use casematch::Error;
use serde_json::json;

pub type SharedSession = Arc<Mutex<ReviewSession>>;

pub fn router(session: ReviewSession) -> Router {
    router_with(Arc::new(Mutex::new(session)))
}

pub fn router_with(state: SharedSession) -> Router {
    Router::new()
        .route("/api/queue/next", get(next_item))
        .route("/api/labels", post(post_label))
        .route("/api/pairs/:a/:b", get(pair_detail))
        .route("/api/stats", get(stats))
        .route("/api/export", get(export))
        .with_state(state)
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::UnknownPair(..) | Error::UnknownReport(_) => StatusCode::NOT_FOUND,
            Error::InvalidLabel(_) | Error::InvalidConfig(_) | Error::Json(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

fn lock(state: &SharedSession) -> std::sync::MutexGuard<'_, ReviewSession> {
    state.lock().unwrap_or_else(|p| p.into_inner())
}

async fn next_item(
    State(state): State<SharedSession>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    let annotator = q
        .get("annotator")
        .filter(|a| !a.trim().is_empty())
        .ok_or_else(|| ApiError(StatusCode::BAD_REQUEST, "query parameter `annotator` is required".into()))?;
    match lock(&state).next_for(annotator)? {
        Some(item) => Ok(Json(item).into_response()),
        None => Ok(StatusCode::NO_CONTENT.into_response()),
    }
}

async fn post_label(State(state): State<SharedSession>, body: Bytes) -> Result<Response, ApiError> {
    let submission: LabelSubmission = serde_json::from_slice(&body)
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("malformed label: {e}")))?;
    let annotation = lock(&state).submit(submission)?;
    Ok(Json(annotation).into_response())
}

async fn pair_detail(
    State(state): State<SharedSession>,
    Path((a, b)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    Ok(Json(lock(&state).pair(&a, &b)?).into_response())
}

async fn stats(State(state): State<SharedSession>) -> Result<Response, ApiError> {
    Ok(Json(lock(&state).stats()?).into_response())
}

async fn export(State(state): State<SharedSession>) -> Result<Response, ApiError> {
    let log = lock(&state).export();
    let mut body = Vec::new();
    for a in &log {
        serde_json::to_writer(&mut body, a).map_err(Error::from)?;
        body.push(b'\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}
