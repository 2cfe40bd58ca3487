//! HTTP front end for a [`tcfd_core::engine::Engine`].
//!
//! Ingestion and analysis run as background jobs polled through
//! `GET /jobs/{id}`; questions, evidence lookups and guideline changes
//! answer synchronously. The API is described in `openapi.yaml`.

mod error;
mod jobs;

use std::collections::BTreeMap;
use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tcfd_core::analysis::{AnalysisStatus, Progress};
use tcfd_core::engine::Engine;
use tcfd_core::ingestion::DocumentFormat;
use tower_http::trace::TraceLayer;

pub use error::ApiError;
pub use jobs::{JobHandle, JobKind, JobProgress, JobState, Jobs};

pub const OPENAPI_YAML: &str = include_str!("../openapi.yaml");

const MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    engine: Arc<Engine>,
    jobs: Arc<Jobs>,
    api_key: Option<Arc<str>>,
}

impl AppState {
    /// Takes job capacity and the API key from the engine's settings.
    pub fn new(engine: Engine) -> Self {
        let max_jobs = engine.settings().service.max_jobs;
        let api_key = engine.settings().service.api_key();
        AppState::with_options(engine, max_jobs, api_key)
    }

    pub fn with_options(engine: Engine, max_jobs: usize, api_key: Option<String>) -> Self {
        AppState {
            engine: Arc::new(engine),
            jobs: Arc::new(Jobs::new(max_jobs)),
            api_key: api_key.filter(|k| !k.is_empty()).map(Arc::from),
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn jobs(&self) -> &Jobs {
        &self.jobs
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/reports", post(upload).get(list_reports))
        .route("/reports/{id}/analysis", get(get_analysis))
        .route("/reports/{id}/analyze", post(analyze))
        .route("/reports/{id}/questions", post(ask))
        .route("/reports/{id}/evidence", get(evidence))
        .route("/jobs/{id}", get(get_job))
        .route("/feedback", post(feedback))
        .route("/guidelines", get(list_guidelines))
        .route("/guidelines/transform/{fid}", post(transform))
        .route("/guidelines/promote/{v}", post(promote))
        .layer(middleware::from_fn_with_state(state.clone(), require_key))
        .route("/health", get(|| async { "ok" }))
        .route("/openapi.yaml", get(openapi))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .layer(TraceLayer::new_for_http())
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

async fn require_key(
    State(s): State<AppState>,
    headers: HeaderMap,
    req: Request,
    next: Next,
) -> Response {
    let Some(expected) = s.api_key.as_deref() else {
        return next.run(req).await;
    };
    let bearer = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    let given = headers
        .get("x-api-key")
        .and_then(|v| v.to_str().ok())
        .or(bearer);
    if given == Some(expected) {
        next.run(req).await
    } else {
        ApiError::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "auth",
            "missing or wrong API key",
        )
        .into_response()
    }
}

async fn openapi() -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/yaml")], OPENAPI_YAML)
}

/// Runs blocking engine work off the async runtime.
async fn blocking<T: Send + 'static>(
    stage: &'static str,
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| {
        ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "worker_failed",
            stage,
            e.to_string(),
        )
    })?
}

#[derive(Debug, Deserialize)]
struct UploadQuery {
    format: Option<String>,
    name: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Accepted {
    pub doc_id: String,
    pub job_id: String,
}

fn parse_format(s: &str) -> Result<DocumentFormat, ApiError> {
    s.parse().map_err(|e: tcfd_core::ingestion::IngestError| {
        ApiError::bad_request("ingest", e.to_string())
    })
}

async fn upload(
    State(s): State<AppState>,
    Query(q): Query<UploadQuery>,
    req: Request,
) -> Result<(StatusCode, Json<Accepted>), ApiError> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let mut format = q.format.as_deref().map(parse_format).transpose()?;
    let mut name = q.name;
    let raw: Bytes = if is_multipart {
        let mut mp = Multipart::from_request(req, &s)
            .await
            .map_err(|e| ApiError::bad_request("ingest", e.body_text()))?;
        let mut file = None;
        while let Some(field) = mp
            .next_field()
            .await
            .map_err(|e| ApiError::bad_request("ingest", e.body_text()))?
        {
            match field.name() {
                Some("format") => {
                    let text = field
                        .text()
                        .await
                        .map_err(|e| ApiError::bad_request("ingest", e.body_text()))?;
                    format = Some(parse_format(&text)?);
                }
                Some("file") => {
                    if let Some(f) = field.file_name() {
                        name.get_or_insert_with(|| f.to_string());
                    }
                    file = Some(
                        field
                            .bytes()
                            .await
                            .map_err(|e| ApiError::bad_request("ingest", e.body_text()))?,
                    );
                }
                _ => {}
            }
        }
        file.ok_or_else(|| ApiError::bad_request("ingest", "multipart body has no \"file\" field"))?
    } else {
        Bytes::from_request(req, &s)
            .await
            .map_err(|e| ApiError::bad_request("ingest", e.body_text()))?
    };
    let format = format.unwrap_or_else(|| match &name {
        Some(n) if n.to_ascii_lowercase().ends_with(".pdf") => DocumentFormat::Pdf,
        _ => DocumentFormat::PageDelimitedText,
    });

    let engine = s.engine.clone();
    let mut doc = blocking("ingest", move || Ok(engine.load(&raw, format)?)).await?;
    let mut metadata = BTreeMap::new();
    metadata.insert("format".to_string(), format.to_string());
    if let Some(n) = name {
        metadata.insert("name".to_string(), n);
    }
    doc.metadata = metadata;
    let doc_id = doc.doc_id.clone();
    let (job, new) = s.jobs.start(&doc_id, JobKind::Ingest, 1)?;
    if new {
        let (engine, jobs, job_id) = (s.engine.clone(), s.jobs.clone(), job.job_id.clone());
        tokio::task::spawn_blocking(move || {
            jobs.update(&job_id, |j| j.state = JobState::Running);
            let result = engine.ingest_document(doc);
            jobs.update(&job_id, |j| match result {
                Ok(_) => {
                    j.state = JobState::Complete;
                    j.progress.done = 1;
                }
                Err(e) => {
                    j.state = JobState::Failed;
                    j.error = Some(e.into());
                }
            });
        });
    }
    Ok((
        StatusCode::ACCEPTED,
        Json(Accepted {
            doc_id,
            job_id: job.job_id,
        }),
    ))
}

async fn list_reports(State(s): State<AppState>) -> impl IntoResponse {
    Json(s.engine.workspace().list_documents())
}

async fn get_analysis(
    State(s): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let engine = s.engine.clone();
    let analysis = blocking("lookup", move || Ok(engine.latest_analysis(&id)?)).await?;
    Ok(Json(analysis).into_response())
}

async fn analyze(
    State(s): State<AppState>,
    Path(id): Path<String>,
) -> Result<(StatusCode, Json<JobHandle>), ApiError> {
    if let Some(ingest) = s.jobs.active_for(&id, JobKind::Ingest) {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "ingest_running",
            "analyze",
            format!(
                "document {id} is still being ingested by job {}",
                ingest.job_id
            ),
        ));
    }
    if !s.engine.workspace().has_document(&id) {
        return Err(ApiError::not_found(
            "analyze",
            format!("document {id} not found"),
        ));
    }
    let total = s.engine.pipeline().catalog().iter().count();
    let (job, new) = s.jobs.start(&id, JobKind::Analyze, total)?;
    if new {
        let (engine, jobs, job_id) = (s.engine.clone(), s.jobs.clone(), job.job_id.clone());
        tokio::task::spawn_blocking(move || {
            jobs.update(&job_id, |j| j.state = JobState::Running);
            let progress = |p: Progress| {
                jobs.update(&job_id, |j| {
                    j.progress = JobProgress {
                        done: p.done,
                        total: p.total,
                    }
                })
            };
            let result = engine.analyze(&id, &progress);
            jobs.update(&job_id, |j| match result {
                Ok(a) => {
                    j.analysis_id = Some(a.analysis_id());
                    j.state = match a.status {
                        AnalysisStatus::Complete => JobState::Complete,
                        AnalysisStatus::Partial => JobState::Partial,
                    };
                    j.error = a
                        .errors
                        .iter()
                        .find(|e| e.question_index.is_some())
                        .or(a.errors.first())
                        .map(ApiError::from);
                }
                Err(e) => {
                    j.state = JobState::Failed;
                    j.error = Some(e.into());
                }
            });
        });
    }
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn get_job(
    State(s): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<JobHandle>, ApiError> {
    s.jobs
        .get(&id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found("jobs", format!("job {id} not found")))
}

#[derive(Debug, Deserialize)]
struct QuestionBody {
    question: String,
}

#[derive(Debug, Serialize)]
struct AnswerBody {
    answer_id: String,
    #[serde(flatten)]
    answer: tcfd_core::analysis::CustomAnswer,
}

async fn ask(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<QuestionBody>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<AnswerBody>, ApiError> {
    let Json(body) = body.map_err(|e| ApiError::bad_request("custom_question", e.body_text()))?;
    let engine = s.engine.clone();
    let answer = blocking("custom_question", move || {
        Ok(engine.ask(&id, &body.question)?)
    })
    .await?;
    Ok(Json(AnswerBody {
        answer_id: answer.answer_id(),
        answer,
    }))
}

#[derive(Debug, Deserialize)]
struct EvidenceQuery {
    fragment: Option<String>,
}

async fn evidence(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EvidenceQuery>,
) -> Result<Response, ApiError> {
    let fragment = q.fragment.ok_or_else(|| {
        ApiError::bad_request("evidence", "query parameter \"fragment\" is required")
    })?;
    let engine = s.engine.clone();
    let hits = blocking("evidence", move || Ok(engine.evidence(&id, &fragment)?)).await?;
    Ok(Json(hits).into_response())
}

#[derive(Debug, Deserialize)]
struct FeedbackBody {
    answer_id: String,
    text: String,
    #[serde(default)]
    expert_id: Option<String>,
}

async fn feedback(
    State(s): State<AppState>,
    body: Result<Json<FeedbackBody>, axum::extract::rejection::JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(body) = body.map_err(|e| ApiError::bad_request("feedback", e.body_text()))?;
    let engine = s.engine.clone();
    let rec = blocking("feedback", move || {
        let expert = body.expert_id.as_deref().unwrap_or("anonymous");
        Ok(engine.submit_feedback(&body.answer_id, expert, &body.text)?)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(rec)).into_response())
}

async fn list_guidelines(State(s): State<AppState>) -> impl IntoResponse {
    Json(s.engine.guidelines().versions())
}

async fn transform(
    State(s): State<AppState>,
    Path(fid): Path<String>,
) -> Result<Response, ApiError> {
    let engine = s.engine.clone();
    let out = blocking("prompt_engineering", move || {
        Ok(engine.transform_feedback(&fid)?)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(out)).into_response())
}

async fn promote(State(s): State<AppState>, Path(v): Path<String>) -> Result<Response, ApiError> {
    let version: u32 = v.parse().map_err(|_| {
        ApiError::bad_request("guidelines", format!("{v:?} is not a version number"))
    })?;
    let engine = s.engine.clone();
    let list = blocking("guidelines", move || Ok(engine.promote(version)?)).await?;
    Ok(Json(list).into_response())
}
