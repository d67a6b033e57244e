//! The studio HTTP API: model registry, dataset uploads, training and tuning
//! jobs with streamed progress, and pair scoring with explanations.

mod datasets;
mod error;
mod jobs;

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Map, Value};
use textmatch::models::{model_spec, registry};
use tokio::net::TcpListener;

pub use datasets::{DatasetRecord, DatasetStore, FIELDS as DATASET_FIELDS};
pub use error::{ApiError, ApiResult};
pub use jobs::{JobConfig, JobKind, JobRecord, JobStatus, JobStore, INTERRUPTED};

pub const DEFAULT_UPLOAD_LIMIT: usize = 50 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Root of the dataset and job directories.
    pub store_dir: PathBuf,
    /// Jobs allowed to run at once.
    pub max_jobs: usize,
    /// Largest accepted upload request, in bytes.
    pub upload_limit: usize,
    /// Built UI assets, served for every non-API path when present.
    pub static_dir: Option<PathBuf>,
}

impl ServiceConfig {
    pub fn new(store_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            store_dir: store_dir.into(),
            max_jobs: 1,
            upload_limit: DEFAULT_UPLOAD_LIMIT,
            static_dir: None,
        }
    }
}

#[derive(Clone)]
pub struct Studio {
    pub datasets: Arc<DatasetStore>,
    pub jobs: Arc<JobStore>,
}

impl Studio {
    /// Opens the stores under `config.store_dir` and starts the job workers.
    /// Must be called inside a Tokio runtime.
    pub fn open(config: &ServiceConfig) -> std::io::Result<Self> {
        let datasets = Arc::new(DatasetStore::open(config.store_dir.join("datasets"))?);
        let (jobs, queue) = JobStore::open(config.store_dir.join("jobs"), datasets.clone())?;
        jobs::spawn_workers(jobs.clone(), queue, config.max_jobs);
        Ok(Studio { datasets, jobs })
    }
}

pub fn router(studio: Studio, config: &ServiceConfig) -> Router {
    let api = Router::new()
        .route("/api/models", get(list_models))
        .route("/api/models/{id}", get(get_model))
        .route("/api/datasets", get(list_datasets).post(upload_dataset))
        .route("/api/jobs", get(list_jobs).post(create_job))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/jobs/{id}/events", get(job_events))
        .route("/api/jobs/{id}/score", post(score_pair))
        .route("/api/tune", post(create_tune))
        .layer(DefaultBodyLimit::max(config.upload_limit))
        .with_state(studio);
    match &config.static_dir {
        Some(dir) if dir.is_dir() => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        _ => api.fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "no such endpoint") }),
    }
}

/// Serves the API on `listener` until `shutdown` resolves, then marks
/// unfinished jobs as interrupted.
pub async fn serve(
    listener: TcpListener,
    config: ServiceConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let studio = Studio::open(&config)?;
    let app = router(studio.clone(), &config);
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    studio.jobs.interrupt_all();
    Ok(())
}

async fn list_models() -> Json<Vec<Value>> {
    Json(registry().iter().map(|s| s.to_json()).collect())
}

async fn get_model(Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(model_spec(&id)?.to_json()))
}

async fn list_datasets(State(s): State<Studio>) -> Json<Vec<DatasetRecord>> {
    Json(s.datasets.list())
}

async fn upload_dataset(
    State(s): State<Studio>,
    mut form: Multipart,
) -> ApiResult<(StatusCode, Json<DatasetRecord>)> {
    let mut uploads = BTreeMap::new();
    while let Some(field) = form.next_field().await? {
        let name = field.name().unwrap_or_default().to_string();
        if !DATASET_FIELDS.contains(&name.as_str()) {
            return Err(ApiError::invalid(format!("unexpected upload field `{name}`"))
                .with_detail(json!({"valid": DATASET_FIELDS})));
        }
        let bytes = field.bytes().await?;
        if uploads.insert(name.clone(), bytes.to_vec()).is_some() {
            return Err(ApiError::invalid(format!("upload field `{name}` given twice")));
        }
    }
    let datasets = s.datasets.clone();
    let record = tokio::task::spawn_blocking(move || datasets.create(uploads))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(record)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JobRequest {
    kind: JobKind,
    model_id: String,
    dataset_id: String,
    #[serde(default)]
    config: Option<Value>,
}

fn body<T: serde::de::DeserializeOwned>(
    payload: Result<Json<T>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<T> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::new(e.status(), e.body_text()))
}

async fn list_jobs(State(s): State<Studio>) -> Json<Vec<JobRecord>> {
    Json(s.jobs.list())
}

async fn create_job(
    State(s): State<Studio>,
    payload: Result<Json<JobRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<(StatusCode, Json<JobRecord>)> {
    let req = body(payload)?;
    let config = req.config.unwrap_or_else(|| json!({}));
    let record = s.jobs.create(req.kind, &req.model_id, &req.dataset_id, config)?;
    Ok((StatusCode::ACCEPTED, Json(record)))
}

#[derive(Deserialize)]
struct TuneRequest {
    model_id: String,
    dataset_id: String,
    #[serde(flatten)]
    config: Map<String, Value>,
}

async fn create_tune(
    State(s): State<Studio>,
    payload: Result<Json<TuneRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<(StatusCode, Json<JobRecord>)> {
    let req = body(payload)?;
    let record = s
        .jobs
        .create(JobKind::Tune, &req.model_id, &req.dataset_id, Value::Object(req.config))?;
    Ok((StatusCode::ACCEPTED, Json(record)))
}

async fn get_job(State(s): State<Studio>, Path(id): Path<String>) -> ApiResult<Json<JobRecord>> {
    Ok(Json(s.jobs.get(&id)?))
}

fn ndjson(values: &[Value]) -> Bytes {
    let mut out = String::new();
    for v in values {
        out.push_str(&v.to_string());
        out.push('\n');
    }
    Bytes::from(out)
}

/// Replays the job's events, follows new ones, and ends with the terminal event.
async fn job_events(State(s): State<Studio>, Path(id): Path<String>) -> ApiResult<Response> {
    let rx = s.jobs.subscribe(&id)?;
    let state = (s.jobs.clone(), id, 0usize, rx, false);
    let stream = futures::stream::unfold(state, |(jobs, id, sent, mut rx, finished)| async move {
        if finished {
            return None;
        }
        loop {
            let (events, terminal) = jobs.events_since(&id, sent);
            if !events.is_empty() {
                let next = sent + events.len();
                return Some((Ok::<_, Infallible>(ndjson(&events)), (jobs, id, next, rx, false)));
            }
            if let Some(t) = terminal {
                return Some((Ok(ndjson(&[t])), (jobs, id, sent, rx, true)));
            }
            if rx.changed().await.is_err() {
                return None;
            }
        }
    });
    Ok((
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        Body::from_stream(stream),
    )
        .into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreRequest {
    text_left: String,
    text_right: String,
}

async fn score_pair(
    State(s): State<Studio>,
    Path(id): Path<String>,
    payload: Result<Json<ScoreRequest>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Json<Value>> {
    let req = body(payload)?;
    let empty: Vec<&str> = [("text_left", &req.text_left), ("text_right", &req.text_right)]
        .into_iter()
        .filter(|(_, t)| t.trim().is_empty())
        .map(|(n, _)| n)
        .collect();
    if !empty.is_empty() {
        return Err(ApiError::invalid("texts must be non-empty").with_detail(json!(empty)));
    }
    let jobs = s.jobs.clone();
    let out = tokio::task::spawn_blocking(move || -> ApiResult<Value> {
        let run = jobs.run(&id)?;
        let p = &run.pipeline;
        let explanation = run
            .model
            .explain(&p.transform(&req.text_left)?, &p.transform(&req.text_right)?)?;
        Ok(json!({
            "score": explanation.score(),
            "explanation": explanation,
            "tokens_left": p.display_tokens(&req.text_left)?,
            "tokens_right": p.display_tokens(&req.text_right)?,
        }))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(out))
}
