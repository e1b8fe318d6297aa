//! HTTP service under `/api/v1`.

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::{Body, Bytes};
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use evocity_core::canon;
use evocity_core::store::{ProjectRecord, Status, Store, StoreError, STORE_SCHEMA_VERSION};
use evocity_core::{Dialect, Evolution};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::jobs::{self, JobError, Request};

pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

pub struct AppState {
    pub store: Store,
    /// Project ids with a job queued or running.
    active: Mutex<HashSet<String>>,
    /// Parsed histories per (project, generation).
    histories: Mutex<HashMap<String, (String, Arc<Evolution>)>>,
}

impl AppState {
    pub fn new(store: Store) -> Arc<AppState> {
        Arc::new(AppState { store, active: Mutex::new(HashSet::new()), histories: Mutex::new(HashMap::new()) })
    }

    pub fn open(data_dir: impl Into<PathBuf>) -> Result<Arc<AppState>, StoreError> {
        Ok(AppState::new(Store::open(data_dir)?))
    }

    fn histories(&self, id: &str) -> Result<Arc<Evolution>, StoreError> {
        let generation = self.store.manifest(id)?.generation;
        if let Some((g, evo)) = self.histories.lock().unwrap().get(id) {
            if *g == generation {
                return Ok(evo.clone());
            }
        }
        let evo = Arc::new(self.store.load_histories(id)?);
        self.histories.lock().unwrap().insert(id.to_string(), (generation, evo.clone()));
        Ok(evo)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::UnknownProject(_) | StoreError::OrdinalOutOfRange { .. } => StatusCode::NOT_FOUND,
            StoreError::NotDone { .. } => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<JobError> for ApiError {
    fn from(e: JobError) -> Self {
        match e {
            JobError::Store(s) => s.into(),
            e if e.is_input() => ApiError::new(StatusCode::BAD_REQUEST, e.to_string()),
            e => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"schema_version": STORE_SCHEMA_VERSION, "error": self.message});
        json_bytes(self.status, canon::to_canonical(&body).expect("json value serializes"))
    }
}

fn json_bytes(status: StatusCode, bytes: Vec<u8>) -> Response {
    let mut r = Response::new(Body::from(bytes));
    *r.status_mut() = status;
    r.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    r
}

fn json_ok<T: Serialize>(v: &T) -> Result<Response, ApiError> {
    let bytes = canon::to_canonical(v).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(json_bytes(StatusCode::OK, bytes))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeRequest {
    pub repo_url: String,
    #[serde(default)]
    pub db_type: Option<String>,
    #[serde(default)]
    pub branch: Option<String>,
}

#[derive(Debug, Serialize)]
struct AnalyzeResponse<'a> {
    schema_version: u32,
    project_id: &'a str,
    status: &'a Status,
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/analyze", post(analyze))
        .route("/projects", get(list_projects))
        .route("/projects/{id}", get(get_project))
        .route("/projects/{id}/scenes/{ordinal}", get(get_scene))
        .route("/projects/{id}/timeline", get(get_timeline))
        .route("/projects/{id}/entities/{artifact}/history", get(get_history));
    Router::new()
        .nest("/api/v1", api)
        .layer(axum::middleware::from_fn(cors))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "no such endpoint") })
        .with_state(state)
}

async fn cors(req: axum::extract::Request, next: axum::middleware::Next) -> Response {
    let mut r = if req.method() == Method::OPTIONS {
        let mut r = Response::new(Body::empty());
        *r.status_mut() = StatusCode::NO_CONTENT;
        r
    } else {
        next.run(req).await
    };
    let h = r.headers_mut();
    h.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    h.insert(header::ACCESS_CONTROL_ALLOW_METHODS, HeaderValue::from_static("GET, POST, OPTIONS"));
    h.insert(header::ACCESS_CONTROL_ALLOW_HEADERS, HeaderValue::from_static("content-type"));
    r
}

fn parse_request(body: &[u8]) -> Result<Request, ApiError> {
    let req: AnalyzeRequest =
        serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed request: {e}")))?;
    let dialect = match req.db_type.as_deref() {
        None => Dialect::Generic,
        Some(t) => t.parse().map_err(|e: String| ApiError::new(StatusCode::BAD_REQUEST, e))?,
    };
    let branch = req.branch.filter(|b| !b.trim().is_empty());
    Ok(Request { location: req.repo_url, branch, dialect })
}

async fn analyze(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req = parse_request(&body)?;
    let record = req.record()?;
    let id = record.id.clone();

    if !state.active.lock().unwrap().insert(id.clone()) {
        let current = state.store.record(&id).unwrap_or(record);
        return respond(StatusCode::ACCEPTED, &current);
    }
    let existing = state.store.record(&id).ok();
    let dialect = req.dialect;
    let reuse = {
        let existing = existing.clone();
        tokio::task::spawn_blocking(move || existing.filter(|r| r.dialect == dialect && jobs::is_current(r)))
            .await
            .ok()
            .flatten()
    };
    if let Some(done) = reuse {
        state.active.lock().unwrap().remove(&id);
        return respond(StatusCode::OK, &done);
    }

    let mut queued = existing.unwrap_or(record);
    queued.status = Status::Queued;
    queued.dialect = req.dialect;
    if let Err(e) = state.store.write_record(&queued) {
        state.active.lock().unwrap().remove(&id);
        return Err(e.into());
    }
    let job_state = state.clone();
    let job_record = queued.clone();
    tokio::task::spawn_blocking(move || {
        let result = jobs::run(&job_state.store, &job_record, &req);
        if let Err(e) = result {
            log::warn!("analysis of {} failed: {e}", job_record.source);
        }
        job_state.active.lock().unwrap().remove(&job_record.id);
    });
    respond(StatusCode::ACCEPTED, &queued)
}

fn respond(status: StatusCode, r: &ProjectRecord) -> Result<Response, ApiError> {
    let body = AnalyzeResponse { schema_version: STORE_SCHEMA_VERSION, project_id: &r.id, status: &r.status };
    let mut resp = json_ok(&body)?;
    *resp.status_mut() = status;
    Ok(resp)
}

async fn list_projects(State(state): State<Arc<AppState>>) -> Result<Response, ApiError> {
    let projects = state.store.list_projects()?;
    json_ok(&json!({"schema_version": STORE_SCHEMA_VERSION, "projects": projects}))
}

async fn get_project(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    json_ok(&state.store.record(&id)?)
}

fn require_done(state: &AppState, id: &str) -> Result<(), ApiError> {
    let r = state.store.record(id)?;
    match r.status {
        Status::Done => Ok(()),
        s => Err(ApiError::new(StatusCode::CONFLICT, format!("project {id} is {}", s.name()))),
    }
}

async fn get_scene(State(state): State<Arc<AppState>>, Path((id, ordinal)): Path<(String, String)>) -> Result<Response, ApiError> {
    let ordinal: u32 = ordinal.parse().map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, format!("bad ordinal {ordinal}")))?;
    require_done(&state, &id)?;
    let bytes = tokio::task::spawn_blocking(move || state.store.load_scene(&id, ordinal))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(json_bytes(StatusCode::OK, bytes))
}

async fn get_timeline(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    require_done(&state, &id)?;
    let timeline = state.store.load_timeline(&id)?;
    json_ok(&json!({"schema_version": STORE_SCHEMA_VERSION, "commits": timeline}))
}

async fn get_history(
    State(state): State<Arc<AppState>>,
    Path((id, artifact)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    require_done(&state, &id)?;
    let evo = {
        let state = state.clone();
        let id = id.clone();
        tokio::task::spawn_blocking(move || state.histories(&id))
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??
    };
    let h = evo.get_str(&artifact).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown artifact {artifact}")))?;
    json_ok(&json!({
        "schema_version": STORE_SCHEMA_VERSION,
        "artifact": h,
        "episodes": h.episodes(),
        "touched": h.entity_commits(),
    }))
}
