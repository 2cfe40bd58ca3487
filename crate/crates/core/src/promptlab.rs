//! Expert feedback in, reusable guidelines out.
//!
//! Feedback is kept in an append-only JSON-lines log where the last line for
//! a feedback id is its current state. Guideline versions are never edited:
//! a new guideline creates a draft version, and rendering only uses a
//! version once it has been promoted.

use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{complete, parse_guideline_json, CompletionParams, GatewayError, LlmBackend};
use crate::persistence::write_atomic;
use crate::prompting::{
    GuidelineList, GuidelineScope, PromptError, Prompter, Provenance, QuestionCatalog,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackStatus {
    Pending,
    Transformed,
    Archived,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackRecord {
    pub feedback_id: String,
    pub answer_id: String,
    pub expert_id: String,
    pub feedback_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_index: Option<u8>,
    pub created_at: DateTime<Utc>,
    pub status: FeedbackStatus,
    /// Guideline version created from this feedback.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guideline_version: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackFilter {
    pub status: Option<FeedbackStatus>,
    pub answer_id: Option<String>,
}

impl FeedbackFilter {
    fn accepts(&self, fb: &FeedbackRecord) -> bool {
        self.status.is_none_or(|s| s == fb.status)
            && self.answer_id.as_ref().is_none_or(|a| *a == fb.answer_id)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("i/o failure on {path}: {message}")]
    IoFailure { path: String, message: String },
    #[error("corrupt store {path}: {message}")]
    Corrupt { path: String, message: String },
    #[error("{0} not found")]
    NotFound(String),
    #[error("cannot move feedback from {from:?} to {to:?}")]
    InvalidTransition {
        from: FeedbackStatus,
        to: FeedbackStatus,
    },
    #[error("feedback text is empty")]
    EmptyFeedback,
    #[error("guideline text is empty")]
    EmptyGuideline,
}

fn io_err(path: &Path, e: impl ToString) -> StoreError {
    StoreError::IoFailure {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[derive(Debug)]
pub struct FeedbackStore {
    path: PathBuf,
    lock: Mutex<()>,
}

impl FeedbackStore {
    pub fn open(path: impl Into<PathBuf>) -> Self {
        FeedbackStore {
            path: path.into(),
            lock: Mutex::new(()),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn read_all(&self) -> Result<Vec<FeedbackRecord>, StoreError> {
        let text = match std::fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&self.path, e)),
        };
        let mut latest: Vec<FeedbackRecord> = Vec::new();
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let rec: FeedbackRecord =
                serde_json::from_str(line).map_err(|e| StoreError::Corrupt {
                    path: self.path.display().to_string(),
                    message: format!("line {}: {e}", i + 1),
                })?;
            match latest.iter_mut().find(|r| r.feedback_id == rec.feedback_id) {
                Some(slot) => *slot = rec,
                None => latest.push(rec),
            }
        }
        Ok(latest)
    }

    fn append(&self, rec: &FeedbackRecord) -> Result<(), StoreError> {
        if let Some(parent) = self.path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| io_err(&self.path, e))?;
        let line = serde_json::to_string(rec).expect("feedback serializes") + "\n";
        f.write_all(line.as_bytes())
            .map_err(|e| io_err(&self.path, e))
    }

    /// Stores new pending feedback under the next sequential id.
    pub fn record(
        &self,
        answer_id: &str,
        expert_id: &str,
        feedback_text: &str,
        question_index: Option<u8>,
        now: DateTime<Utc>,
    ) -> Result<FeedbackRecord, StoreError> {
        let text = feedback_text.trim();
        if text.is_empty() {
            return Err(StoreError::EmptyFeedback);
        }
        let _guard = self.lock.lock().expect("feedback lock");
        let existing = self.read_all()?;
        let rec = FeedbackRecord {
            feedback_id: format!("fb-{:06}", existing.len() + 1),
            answer_id: answer_id.to_string(),
            expert_id: expert_id.to_string(),
            feedback_text: text.to_string(),
            question_index,
            created_at: now,
            status: FeedbackStatus::Pending,
            guideline_version: None,
        };
        self.append(&rec)?;
        Ok(rec)
    }

    pub fn list(&self, filter: &FeedbackFilter) -> Result<Vec<FeedbackRecord>, StoreError> {
        Ok(self
            .read_all()?
            .into_iter()
            .filter(|f| filter.accepts(f))
            .collect())
    }

    pub fn get(&self, feedback_id: &str) -> Result<FeedbackRecord, StoreError> {
        self.read_all()?
            .into_iter()
            .find(|f| f.feedback_id == feedback_id)
            .ok_or_else(|| StoreError::NotFound(format!("feedback {feedback_id}")))
    }

    /// Only `pending -> transformed` and `pending -> archived` are allowed.
    pub fn transition(
        &self,
        feedback_id: &str,
        to: FeedbackStatus,
        guideline_version: Option<u32>,
    ) -> Result<FeedbackRecord, StoreError> {
        let _guard = self.lock.lock().expect("feedback lock");
        let mut rec = self.get(feedback_id)?;
        let allowed = rec.status == FeedbackStatus::Pending && to != FeedbackStatus::Pending;
        if !allowed {
            return Err(StoreError::InvalidTransition {
                from: rec.status,
                to,
            });
        }
        rec.status = to;
        rec.guideline_version = guideline_version;
        self.append(&rec)?;
        Ok(rec)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("feedback {0} is not pending")]
    NotPending(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("generated guideline names the company: {0:?}")]
    CompanySpecificGuideline(String),
}

/// The answer a piece of feedback is about.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedbackSubject {
    pub original_prompt: String,
    pub old_response: String,
    /// Company name to keep out of generated guidelines, if known.
    pub company_name: Option<String>,
}

/// Turns feedback into one general guideline with a prompt-engineering call.
pub fn feedback_to_guideline(
    fb: &FeedbackRecord,
    current: &GuidelineList,
    subject: &FeedbackSubject,
    prompter: &Prompter,
    llm: &dyn LlmBackend,
    params: &CompletionParams,
    answer_length: u32,
) -> Result<String, TransformError> {
    if fb.status != FeedbackStatus::Pending {
        return Err(TransformError::NotPending(fb.feedback_id.clone()));
    }
    let specific = fb.question_index.and_then(|q| current.specific_for(q));
    let prompt = prompter.render_prompt_engineering_prompt(
        &subject.original_prompt,
        current,
        specific,
        &subject.old_response,
        &fb.feedback_text,
        answer_length,
    )?;
    let raw = complete(&prompt, params, llm)?.text;
    let guideline = parse_guideline_json(&raw).map_err(GatewayError::from)?;
    if let Some(name) = subject
        .company_name
        .as_deref()
        .map(str::trim)
        .filter(|n| !n.is_empty() && !n.eq_ignore_ascii_case("unknown"))
    {
        if guideline.to_lowercase().contains(&name.to_lowercase()) {
            return Err(TransformError::CompanySpecificGuideline(guideline));
        }
    }
    Ok(guideline)
}

/// A new list one version up with the guideline added.
pub fn append_guideline(
    list: &GuidelineList,
    guideline: &str,
    scope: GuidelineScope,
    provenance: Provenance,
) -> Result<GuidelineList, StoreError> {
    let text = guideline.trim();
    if text.is_empty() {
        return Err(StoreError::EmptyGuideline);
    }
    Ok(list.with_guideline(text, scope, provenance))
}

/// On-disk form: the active list at top level plus every version ever made.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "GuidelineFileWire", into = "GuidelineFileWire")]
struct GuidelineFile {
    active: GuidelineList,
    history: Vec<GuidelineList>,
    /// Versions in the order they were promoted.
    promotions: Vec<u32>,
}

// serde's flatten cannot carry the integer-keyed `specific` map
#[derive(Serialize, Deserialize)]
struct GuidelineFileWire {
    version: u32,
    general: Vec<crate::prompting::GuidelineEntry>,
    #[serde(default)]
    specific: std::collections::BTreeMap<u8, crate::prompting::GuidelineEntry>,
    history: Vec<GuidelineList>,
    promotions: Vec<u32>,
}

impl From<GuidelineFileWire> for GuidelineFile {
    fn from(w: GuidelineFileWire) -> Self {
        GuidelineFile {
            active: GuidelineList {
                version: w.version,
                general: w.general,
                specific: w.specific,
            },
            history: w.history,
            promotions: w.promotions,
        }
    }
}

impl From<GuidelineFile> for GuidelineFileWire {
    fn from(f: GuidelineFile) -> Self {
        GuidelineFileWire {
            version: f.active.version,
            general: f.active.general,
            specific: f.active.specific,
            history: f.history,
            promotions: f.promotions,
        }
    }
}

/// Versioned guideline lists: single writer, readers get snapshots.
#[derive(Debug)]
pub struct GuidelineStore {
    path: PathBuf,
    state: RwLock<GuidelineFile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidelineVersionInfo {
    pub version: u32,
    pub active: bool,
    pub promoted: bool,
    pub general_count: usize,
}

impl GuidelineStore {
    /// Loads the store, seeding version 1 from the catalog when absent.
    pub fn open(path: impl Into<PathBuf>, catalog: &QuestionCatalog) -> Result<Self, StoreError> {
        let path = path.into();
        let state = match std::fs::read(&path) {
            Ok(bytes) => {
                let file: GuidelineFile =
                    serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
                        path: path.display().to_string(),
                        message: e.to_string(),
                    })?;
                let contiguous = file
                    .history
                    .iter()
                    .enumerate()
                    .all(|(i, g)| g.version == i as u32 + 1);
                if !contiguous || !file.history.contains(&file.active) {
                    return Err(StoreError::Corrupt {
                        path: path.display().to_string(),
                        message: "history is not a contiguous version list".into(),
                    });
                }
                file
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                let seed = GuidelineList::seed(catalog);
                let file = GuidelineFile {
                    active: seed.clone(),
                    history: vec![seed],
                    promotions: vec![1],
                };
                let store = GuidelineStore {
                    path: path.clone(),
                    state: RwLock::new(file.clone()),
                };
                store.save(&file)?;
                file
            }
            Err(e) => return Err(io_err(&path, e)),
        };
        Ok(GuidelineStore {
            path,
            state: RwLock::new(state),
        })
    }

    fn save(&self, file: &GuidelineFile) -> Result<(), StoreError> {
        let bytes = serde_json::to_vec_pretty(file).expect("guidelines serialize");
        write_atomic(&self.path, &bytes).map_err(|e| io_err(&self.path, e))
    }

    pub fn active(&self) -> GuidelineList {
        self.state.read().expect("guideline lock").active.clone()
    }

    pub fn latest(&self) -> GuidelineList {
        let s = self.state.read().expect("guideline lock");
        s.history.last().expect("history has the seed").clone()
    }

    pub fn get(&self, version: u32) -> Option<GuidelineList> {
        let s = self.state.read().expect("guideline lock");
        s.history.iter().find(|g| g.version == version).cloned()
    }

    pub fn versions(&self) -> Vec<GuidelineVersionInfo> {
        let s = self.state.read().expect("guideline lock");
        s.history
            .iter()
            .map(|g| GuidelineVersionInfo {
                version: g.version,
                active: g.version == s.active.version,
                promoted: s.promotions.contains(&g.version),
                general_count: g.general.len(),
            })
            .collect()
    }

    /// Adds a draft version built on the newest version.
    pub fn draft(
        &self,
        guideline: &str,
        scope: GuidelineScope,
        provenance: Provenance,
    ) -> Result<GuidelineList, StoreError> {
        let mut s = self.state.write().expect("guideline lock");
        let base = s.history.last().expect("history has the seed");
        let next = append_guideline(base, guideline, scope, provenance)?;
        let mut updated = s.clone();
        updated.history.push(next.clone());
        self.save(&updated)?;
        *s = updated;
        Ok(next)
    }

    /// Makes `version` the one used for rendering.
    pub fn promote(&self, version: u32) -> Result<GuidelineList, StoreError> {
        let mut s = self.state.write().expect("guideline lock");
        let list = s
            .history
            .iter()
            .find(|g| g.version == version)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(format!("guideline version {version}")))?;
        let mut updated = s.clone();
        updated.active = list.clone();
        updated.promotions.push(version);
        self.save(&updated)?;
        *s = updated;
        Ok(list)
    }
}
