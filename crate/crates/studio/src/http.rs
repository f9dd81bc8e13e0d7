//! HTTP/JSON front of the studio. Handlers only read snapshots or hand
//! commands to session workers.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use icpl_core::icpl::IcplError;
use serde_json::json;

use crate::service::{CreateRequest, SelectionRequest, Studio, StudioError};

pub struct ApiError(StudioError);

impl From<StudioError> for ApiError {
    fn from(e: StudioError) -> Self {
        ApiError(e)
    }
}

impl ApiError {
    /// Status code and stable error kind.
    pub fn classify(e: &StudioError) -> (StatusCode, &'static str) {
        match e {
            StudioError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            StudioError::UnknownReplay { .. } => (StatusCode::NOT_FOUND, "unknown_replay"),
            StudioError::WorkerGone(_) => (StatusCode::SERVICE_UNAVAILABLE, "worker_gone"),
            StudioError::Icpl(e) => match e {
                IcplError::ConfigInvalid(_) => (StatusCode::BAD_REQUEST, "config_invalid"),
                IcplError::InvalidSelection(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_selection"),
                IcplError::StaleIteration { .. } => (StatusCode::CONFLICT, "stale_iteration"),
                IcplError::WrongStatus { .. } => (StatusCode::CONFLICT, "wrong_status"),
                IcplError::NotFinished => (StatusCode::CONFLICT, "not_finished"),
                _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind) = ApiError::classify(&self.0);
        (status, Json(json!({ "error": kind, "message": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(studio: Arc<Studio>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/api/sessions", post(create).get(list))
        .route("/api/sessions/{id}", get(view))
        .route("/api/sessions/{id}/pending", get(pending))
        .route("/api/sessions/{id}/replays/{iter}/{k}", get(replay))
        .route("/api/sessions/{id}/selection", post(selection))
        .route("/api/sessions/{id}/report", get(report))
        .with_state(studio)
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn create(State(s): State<Arc<Studio>>, Json(req): Json<CreateRequest>) -> ApiResult<Response> {
    let manifest = s.create_session(req)?;
    Ok((StatusCode::CREATED, Json(manifest)).into_response())
}

async fn list(State(s): State<Arc<Studio>>) -> ApiResult<Response> {
    Ok(Json(s.list()?).into_response())
}

async fn view(State(s): State<Arc<Studio>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(s.view(&id)?).into_response())
}

async fn pending(State(s): State<Arc<Studio>>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(s.pending(&id)?).into_response())
}

async fn replay(
    State(s): State<Arc<Studio>>,
    Path((id, iter, k)): Path<(String, usize, usize)>,
) -> ApiResult<Response> {
    let bytes = s.replay(&id, iter, k)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

async fn selection(
    State(s): State<Arc<Studio>>,
    Path(id): Path<String>,
    Json(req): Json<SelectionRequest>,
) -> ApiResult<Response> {
    Ok(Json(s.submit_selection(&id, req).await?).into_response())
}

async fn report(State(s): State<Arc<Studio>>, Path(id): Path<String>) -> ApiResult<Response> {
    let body = s.report(&id)?;
    Ok(([(header::CONTENT_TYPE, "application/json")], body).into_response())
}

/// Serves until the listener fails.
pub async fn serve(studio: Arc<Studio>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(studio)).await
}
