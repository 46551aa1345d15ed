//! HTTP API.
//!
//! | method | path | body / result |
//! |---|---|---|
//! | POST | `/api/analyze?session_id=…&sentence_id=…` | raw audio (WAV or FLAC) → `AnalysisResult` |
//! | GET | `/api/sentences` | `{schema_version, sentences: [SentenceEntry]}` |
//! | GET | `/api/model_audio/{sentence_id}` | exemplar audio bytes |
//! | GET | `/api/session/{session_id}` | `SessionRecord` |
//! | GET | `/api/health` | `{status, model_loaded}` |
//!
//! Every error is `{"code": …, "message": …}` with one of the codes below.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nativeness::analysis::{AnalysisResult, Analyzer};
use nativeness::Error as CoreError;
use serde::{Deserialize, Serialize};

use crate::catalog::{valid_id, Catalog, SentenceEntry};
use crate::sessions::{SessionRecord, SessionStore, StoreError};

pub const API_SCHEMA_VERSION: u32 = 1;

pub mod codes {
    pub const BAD_REQUEST: &str = "bad_request";
    pub const UNDECODABLE_AUDIO: &str = "undecodable_audio";
    pub const SILENT_INPUT: &str = "silent_input";
    pub const PAYLOAD_TOO_LARGE: &str = "payload_too_large";
    pub const UNKNOWN_SENTENCE: &str = "unknown_sentence";
    pub const NO_MODEL_AUDIO: &str = "no_model_audio";
    pub const SENTENCE_MISMATCH: &str = "session_sentence_mismatch";
    pub const MODEL_NOT_LOADED: &str = "model_not_loaded";
    pub const INTERNAL: &str = "internal_error";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn internal(message: impl std::fmt::Display) -> Self {
        tracing::error!("{message}");
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, codes::INTERNAL, "internal error")
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::SentenceMismatch { .. } => {
                ApiError::new(StatusCode::CONFLICT, codes::SENTENCE_MISMATCH, e.to_string())
            }
            other => ApiError::internal(other),
        }
    }
}

fn analysis_error(e: CoreError) -> ApiError {
    match e {
        CoreError::SilentInput { .. } => ApiError::new(StatusCode::BAD_REQUEST, codes::SILENT_INPUT, e.to_string()),
        CoreError::AudioDecode(_) | CoreError::EmptyClip | CoreError::UnsupportedSampleRate(_) => {
            ApiError::new(StatusCode::BAD_REQUEST, codes::UNDECODABLE_AUDIO, e.to_string())
        }
        other => ApiError::internal(other),
    }
}

#[derive(Clone)]
pub struct AppState {
    /// `None` answers analysis requests with 503.
    pub analyzer: Option<Arc<Analyzer>>,
    pub store: Arc<SessionStore>,
    pub catalog: Arc<Catalog>,
}

pub fn router(state: AppState, max_upload_bytes: usize, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/analyze", post(analyze))
        .route("/api/sentences", get(sentences))
        .route("/api/model_audio/{sentence_id}", get(model_audio))
        .route("/api/session/{session_id}", get(session))
        .route("/api/health", get(health))
        .layer(DefaultBodyLimit::max(max_upload_bytes))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api,
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn required<'a>(q: &'a HashMap<String, String>, key: &str) -> Result<&'a str, ApiError> {
    let v = q
        .get(key)
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, codes::BAD_REQUEST, format!("missing query parameter {key}")))?;
    if !valid_id(v) {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            codes::BAD_REQUEST,
            format!("{key} must be 1-128 characters of [A-Za-z0-9_.-]"),
        ));
    }
    Ok(v)
}

async fn analyze(
    State(state): State<AppState>,
    Query(q): Query<HashMap<String, String>>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<AnalysisResult>, ApiError> {
    let session_id = required(&q, "session_id")?.to_string();
    let sentence_id = required(&q, "sentence_id")?.to_string();
    let analyzer = state.analyzer.clone().ok_or_else(|| {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, codes::MODEL_NOT_LOADED, "no model checkpoint is loaded")
    })?;
    if state.catalog.get(&sentence_id).is_none() {
        return Err(ApiError::new(
            StatusCode::NOT_FOUND,
            codes::UNKNOWN_SENTENCE,
            format!("unknown sentence_id {sentence_id}"),
        ));
    }
    let body = body.map_err(|e| {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, codes::PAYLOAD_TOO_LARGE, "upload exceeds the size limit")
        } else {
            ApiError::new(StatusCode::BAD_REQUEST, codes::BAD_REQUEST, e.body_text())
        }
    })?;
    let result = tokio::task::spawn_blocking(move || -> Result<AnalysisResult, ApiError> {
        let analysis = analyzer.analyze_bytes(&body).map_err(analysis_error)?;
        Ok(state.store.append(&session_id, &sentence_id, analysis, now_ms())?)
    })
    .await
    .map_err(ApiError::internal)??;
    Ok(Json(result))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceList {
    pub schema_version: u32,
    pub sentences: Vec<SentenceEntry>,
}

async fn sentences(State(state): State<AppState>) -> Json<SentenceList> {
    Json(SentenceList {
        schema_version: API_SCHEMA_VERSION,
        sentences: state.catalog.entries(),
    })
}

async fn model_audio(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    if state.catalog.get(&id).is_none() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, codes::UNKNOWN_SENTENCE, format!("unknown sentence_id {id}")));
    }
    let path = state.catalog.model_audio_path(&id).ok_or_else(|| {
        ApiError::new(StatusCode::NOT_FOUND, codes::NO_MODEL_AUDIO, format!("sentence {id} has no model audio"))
    })?;
    let bytes = tokio::fs::read(&path).await.map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
    let mime = match path.extension().and_then(|e| e.to_str()) {
        Some("flac") => "audio/flac",
        _ => "audio/wav",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

async fn session(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<SessionRecord>, ApiError> {
    if !valid_id(&id) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, codes::BAD_REQUEST, "invalid session_id"));
    }
    let record = tokio::task::spawn_blocking(move || state.store.history(&id))
        .await
        .map_err(ApiError::internal)??;
    Ok(Json(record))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_loaded: bool,
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        model_loaded: state.analyzer.is_some(),
    })
}
