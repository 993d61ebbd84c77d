//! HTTP+JSON routes over a [`SessionStore`].

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hleval_core::corpus::{parse_corpus, SampleWindow, Verdict};
use hleval_core::sampling::{annotator_ids, AllocationParams};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::store::{ServiceError, SessionConfig, SessionStore, SCHEMA_VERSION};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::UnknownSession(_) | ServiceError::UnknownAnnotator(_) | ServiceError::UnknownSample(_) => {
                StatusCode::NOT_FOUND
            }
            ServiceError::Duplicate { .. }
            | ServiceError::OutOfOrder { .. }
            | ServiceError::AlreadyFlagged(_)
            | ServiceError::Incomplete
            | ServiceError::Allocation(_) => StatusCode::CONFLICT,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Io(_) | ServiceError::Corrupt(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{self}");
        }
        let body = json!({
            "schema_version": SCHEMA_VERSION,
            "error": { "code": self.code(), "message": self.to_string() },
        });
        (status, Json(body)).into_response()
    }
}

/// Adds `schema_version` to a serializable payload.
fn versioned<T: Serialize>(status: StatusCode, payload: T) -> Response {
    let mut body = serde_json::to_value(payload).expect("serializable");
    if let Value::Object(map) = &mut body {
        map.insert("schema_version".into(), json!(SCHEMA_VERSION));
    }
    (status, Json(body)).into_response()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Annotators {
    Count(usize),
    Ids(Vec<String>),
}

/// Body of `POST /sessions`. Exactly one of `corpus_path` and `samples`
/// must be given.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    #[serde(default)]
    pub corpus_path: Option<PathBuf>,
    #[serde(default)]
    pub samples: Option<Vec<SampleWindow>>,
    pub annotators: Annotators,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub load_min: Option<usize>,
    #[serde(default)]
    pub load_max: Option<usize>,
    pub seed: u64,
    #[serde(default)]
    pub clip_base_url: Option<String>,
}

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<SessionStore>,
    pub default_clip_base_url: String,
}

fn config_from(req: CreateRequest, default_clip: &str) -> Result<SessionConfig, ServiceError> {
    let samples = match (req.corpus_path, req.samples) {
        (Some(path), None) => {
            let file =
                std::fs::File::open(&path).map_err(|e| ServiceError::BadRequest(format!("{}: {e}", path.display())))?;
            parse_corpus(std::io::BufReader::new(file))
                .map_err(|e| ServiceError::BadRequest(e.to_string()))?
                .samples
        }
        (None, Some(samples)) => samples,
        _ => {
            return Err(ServiceError::BadRequest(
                "give exactly one of corpus_path and samples".into(),
            ))
        }
    };
    let defaults = AllocationParams::default();
    let allocation = AllocationParams {
        k: req.k.unwrap_or(defaults.k),
        load_min: req.load_min.unwrap_or(defaults.load_min),
        load_max: req.load_max.unwrap_or(defaults.load_max),
        seed: req.seed,
    };
    let annotators = match req.annotators {
        Annotators::Count(n) => annotator_ids(n),
        Annotators::Ids(ids) => ids,
    };
    Ok(SessionConfig {
        samples,
        annotators,
        allocation,
        clip_base_url: req.clip_base_url.unwrap_or_else(|| default_clip.to_string()),
    })
}

async fn create_session(State(app): State<AppState>, body: axum::body::Bytes) -> Result<Response, ServiceError> {
    let req: CreateRequest = serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let config = config_from(req, &app.default_clip_base_url)?;
    let id = app.store.create(config)?;
    let queues = app.store.with(&id, |s| Ok(s.assignment().queues.len()))?;
    Ok(versioned(
        StatusCode::CREATED,
        json!({ "session_id": id, "annotators": queues }),
    ))
}

async fn next_sample(
    State(app): State<AppState>,
    Path((id, annotator)): Path<(String, String)>,
) -> Result<Response, ServiceError> {
    let next = app.store.with(&id, |s| s.next(&annotator))?;
    Ok(versioned(StatusCode::OK, next))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubmitRequest {
    sample_id: String,
    verdict: Verdict,
}

async fn submit(
    State(app): State<AppState>,
    Path((id, annotator)): Path<(String, String)>,
    body: axum::body::Bytes,
) -> Result<Response, ServiceError> {
    let req: SubmitRequest = serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let ack = app
        .store
        .with(&id, |s| s.submit(&annotator, &req.sample_id, req.verdict))?;
    Ok(versioned(StatusCode::OK, ack))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlagRequest {
    sample_id: String,
}

async fn flag(
    State(app): State<AppState>,
    Path((id, annotator)): Path<(String, String)>,
    body: axum::body::Bytes,
) -> Result<Response, ServiceError> {
    let req: FlagRequest = serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let next = app.store.with(&id, |s| s.flag_unplayable(&annotator, &req.sample_id))?;
    Ok(versioned(StatusCode::OK, next))
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    #[serde(default)]
    partial: bool,
}

async fn export(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
) -> Result<Response, ServiceError> {
    let export = app.store.with(&id, |s| s.export(q.partial))?;
    Ok(versioned(
        StatusCode::OK,
        json!({
            "session_id": id,
            "complete": export.complete,
            "n_judgments": export.judgments.len(),
            "corpus": export.to_corpus(),
        }),
    ))
}

async fn progress(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let progress = app.store.with(&id, |s| Ok(s.progress()))?;
    Ok(versioned(StatusCode::OK, progress))
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/annotators/{aid}/next", get(next_sample))
        .route("/sessions/{id}/annotators/{aid}/judgments", post(submit))
        .route("/sessions/{id}/annotators/{aid}/flags", post(flag))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/progress", get(progress))
        .with_state(app)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, app: AppState) -> std::io::Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app)).await
}
