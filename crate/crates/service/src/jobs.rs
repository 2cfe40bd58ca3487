//! In-memory registry of background ingest and analysis jobs.

use std::collections::HashMap;
use std::sync::Mutex;

use axum::http::StatusCode;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobKind {
    Ingest,
    Analyze,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    /// Finished with some questions failed.
    Partial,
    Complete,
    Failed,
}

impl JobState {
    pub fn is_active(self) -> bool {
        matches!(self, JobState::Queued | JobState::Running)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobProgress {
    pub done: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobHandle {
    pub job_id: String,
    pub doc_id: String,
    pub kind: JobKind,
    pub state: JobState,
    pub progress: JobProgress,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis_id: Option<String>,
}

#[derive(Debug, Default)]
struct Inner {
    jobs: HashMap<String, JobHandle>,
    active: HashMap<(String, JobKind), String>,
}

#[derive(Debug)]
pub struct Jobs {
    inner: Mutex<Inner>,
    max_active: usize,
}

impl Jobs {
    pub fn new(max_active: usize) -> Self {
        Jobs {
            inner: Mutex::new(Inner::default()),
            max_active: max_active.max(1),
        }
    }

    /// Registers a queued job, or returns the active job of the same kind
    /// for the same document. The flag is true for a new job.
    pub fn start(
        &self,
        doc_id: &str,
        kind: JobKind,
        total: usize,
    ) -> Result<(JobHandle, bool), ApiError> {
        let mut inner = self.inner.lock().expect("job lock");
        if let Some(id) = inner.active.get(&(doc_id.to_string(), kind)) {
            return Ok((inner.jobs[id].clone(), false));
        }
        if inner.active.len() >= self.max_active {
            return Err(ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "busy",
                "jobs",
                format!("{} jobs already running; retry later", inner.active.len()),
            ));
        }
        let job = JobHandle {
            job_id: uuid::Uuid::new_v4().to_string(),
            doc_id: doc_id.to_string(),
            kind,
            state: JobState::Queued,
            progress: JobProgress { done: 0, total },
            error: None,
            analysis_id: None,
        };
        inner
            .active
            .insert((doc_id.to_string(), kind), job.job_id.clone());
        inner.jobs.insert(job.job_id.clone(), job.clone());
        Ok((job, true))
    }

    pub fn get(&self, job_id: &str) -> Option<JobHandle> {
        self.inner
            .lock()
            .expect("job lock")
            .jobs
            .get(job_id)
            .cloned()
    }

    pub fn active_for(&self, doc_id: &str, kind: JobKind) -> Option<JobHandle> {
        let inner = self.inner.lock().expect("job lock");
        let id = inner.active.get(&(doc_id.to_string(), kind))?;
        inner.jobs.get(id).cloned()
    }

    /// Applies `f` to the job; a job leaving the active states stops
    /// coalescing new requests.
    pub fn update(&self, job_id: &str, f: impl FnOnce(&mut JobHandle)) {
        let mut inner = self.inner.lock().expect("job lock");
        let Some(job) = inner.jobs.get_mut(job_id) else {
            return;
        };
        f(job);
        if !job.state.is_active() {
            let key = (job.doc_id.clone(), job.kind);
            if inner.active.get(&key).map(String::as_str) == Some(job_id) {
                inner.active.remove(&key);
            }
        }
    }
}
