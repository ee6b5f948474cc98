//! HTTP front end of the review store.
//!
//! Reads take a shared lock; every mutation takes the write lock, so the
//! store's log has a single writer.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cotforge_core::clock::Clock;
use cotforge_core::review::{PageRequest, QueueFilter, ReviewService, DEFAULT_LEASE_SECONDS};
use cotforge_core::{CotVariant, Error};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::RwLock;
use tower_http::services::ServeDir;

pub const EXPERT_HEADER: &str = "x-expert-id";

pub type SharedService<C> = Arc<RwLock<ReviewService<C>>>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, kind: "invalid", message: message.into() }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, kind) = match &e {
            Error::Invalid(_) => (StatusCode::BAD_REQUEST, "invalid"),
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            Error::Forbidden(_) => (StatusCode::FORBIDDEN, "forbidden"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status.is_server_error() {
            tracing::error!(error = %e, "request failed");
        }
        Self { status, kind, message: e.to_string() }
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.kind, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn expert(headers: &HeaderMap) -> Result<String, ApiError> {
    headers
        .get(EXPERT_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(String::from)
        .ok_or_else(|| ApiError::bad_request("missing X-Expert-Id header"))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueQuery {
    variant: Option<CotVariant>,
    min_score: Option<f64>,
    max_score: Option<f64>,
    offset: Option<usize>,
    size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimBody {
    lease_seconds: Option<i64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineBody {
    refined_text: String,
    #[serde(default)]
    practice: bool,
}

#[derive(Debug, Serialize)]
struct Health {
    status: &'static str,
    seq: u64,
    queue_depth: usize,
}

async fn list_queue<C: Clock>(
    State(svc): State<SharedService<C>>,
    q: Result<Query<QueueQuery>, QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = q?;
    let filter = QueueFilter { variant: q.variant, min_score: q.min_score, max_score: q.max_score };
    let defaults = PageRequest::default();
    let page = PageRequest { offset: q.offset.unwrap_or(defaults.offset), size: q.size.unwrap_or(defaults.size) };
    let out = svc.read().await.list_queue(&filter, page)?;
    Ok(Json(out).into_response())
}

async fn claim<C: Clock>(
    State(svc): State<SharedService<C>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: axum::body::Bytes,
) -> Result<Response, ApiError> {
    let expert = expert(&headers)?;
    let body: ClaimBody = if body.iter().all(u8::is_ascii_whitespace) {
        ClaimBody::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("claim body: {e}")))?
    };
    let lease = body.lease_seconds.unwrap_or(DEFAULT_LEASE_SECONDS);
    let entry = svc.write().await.claim(&id, &expert, lease)?;
    Ok(Json(entry).into_response())
}

async fn refine<C: Clock>(
    State(svc): State<SharedService<C>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<RefineBody>, JsonRejection>,
) -> Result<Response, ApiError> {
    let expert = expert(&headers)?;
    let Json(body) = body?;
    let out = svc.write().await.submit_refinement(&id, &expert, &body.refined_text, body.practice)?;
    Ok(Json(out).into_response())
}

async fn candidate<C: Clock>(
    State(svc): State<SharedService<C>>,
    Path(id): Path<String>,
) -> ApiResult<cotforge_core::review::CandidateView> {
    Ok(Json(svc.read().await.get_candidate(&id)?))
}

async fn stats<C: Clock>(State(svc): State<SharedService<C>>) -> Json<cotforge_core::review::Stats> {
    Json(svc.read().await.stats())
}

async fn healthz<C: Clock>(State(svc): State<SharedService<C>>) -> Json<Health> {
    let s = svc.read().await;
    Json(Health { status: "ok", seq: s.state().seq, queue_depth: s.state().queue.len() })
}

/// Routes of the review API, plus the console bundle under `/` when given.
pub fn router<C: Clock + 'static>(svc: SharedService<C>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/queue", get(list_queue::<C>))
        .route("/queue/{id}/claim", post(claim::<C>))
        .route("/queue/{id}/refine", post(refine::<C>))
        .route("/candidates/{id}", get(candidate::<C>))
        .route("/stats", get(stats::<C>))
        .route("/healthz", get(healthz::<C>))
        .with_state(svc);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve<C: Clock + 'static>(svc: SharedService<C>, listen: &str, static_dir: Option<PathBuf>) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen)
        .await
        .map_err(|e| anyhow::anyhow!("binding {listen}: {e}"))?;
    tracing::info!(addr = %listener.local_addr()?, "review service listening");
    let snapshot_on_exit = Arc::clone(&svc);
    axum::serve(listener, router(svc, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    snapshot_on_exit.read().await.snapshot()?;
    Ok(())
}
