//! Operations shared by the command line and the HTTP service: ingest and
//! index a report, analyze it, ask questions, look up evidence and turn
//! expert feedback into guideline versions. Everything is persisted in a
//! [`Workspace`].

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::analysis::{AnalysisError, CustomAnswer, Pipeline, Progress, ReportAnalysis, RunError};
use crate::config::{ConfigError, Settings};
use crate::index::{IndexError, VectorIndex};
use crate::ingestion::{
    chunk_document, load_document, Document, DocumentChunk, DocumentFormat, IngestError,
    PassThroughExtractor, TextExtractor,
};
use crate::persistence::{PersistError, Workspace};
use crate::prompting::{BasicInfo, GuidelineList, GuidelineScope, Provenance};
use crate::promptlab::{
    feedback_to_guideline, FeedbackRecord, FeedbackStatus, FeedbackStore, FeedbackSubject,
    GuidelineStore, StoreError, TransformError,
};
use crate::traceability::{locate_evidence, EvidenceMatch};

const EMBED_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// Bad input from the caller.
    Invalid,
    NotFound,
    Conflict,
    /// The model or embedding backend failed.
    Backend,
    /// Stored data is unreadable or inconsistent.
    Data,
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize)]
#[error("{message}")]
pub struct EngineError {
    pub kind: ErrorKind,
    pub code: String,
    pub stage: String,
    pub message: String,
}

impl EngineError {
    pub fn new(
        kind: ErrorKind,
        code: impl Into<String>,
        stage: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        EngineError {
            kind,
            code: code.into(),
            stage: stage.into(),
            message: message.into(),
        }
    }

    fn persist(stage: &str, e: PersistError) -> Self {
        let (kind, code) = match &e {
            PersistError::NotFound(_) => (ErrorKind::NotFound, "not_found"),
            PersistError::Conflict(_) => (ErrorKind::Conflict, "conflict"),
            PersistError::InvalidDocument(_) => (ErrorKind::Invalid, "invalid_document"),
            PersistError::ChecksumMismatch(_) => (ErrorKind::Data, "checksum_mismatch"),
            PersistError::Corrupt { .. } => (ErrorKind::Data, "corrupt"),
            PersistError::IoFailure { .. } => (ErrorKind::Data, "io_failure"),
        };
        EngineError::new(kind, code, stage, e.to_string())
    }

    fn store(stage: &str, e: StoreError) -> Self {
        let (kind, code) = match &e {
            StoreError::NotFound(_) => (ErrorKind::NotFound, "not_found"),
            StoreError::InvalidTransition { .. } => (ErrorKind::Conflict, "invalid_transition"),
            StoreError::EmptyFeedback | StoreError::EmptyGuideline => {
                (ErrorKind::Invalid, "empty_text")
            }
            StoreError::Corrupt { .. } => (ErrorKind::Data, "corrupt"),
            StoreError::IoFailure { .. } => (ErrorKind::Data, "io_failure"),
        };
        EngineError::new(kind, code, stage, e.to_string())
    }

    fn ingest(e: IngestError) -> Self {
        let code = match &e {
            IngestError::EmptyDocument => "empty_document",
            IngestError::UnsupportedFormat(_) => "unsupported_format",
            IngestError::ExtractionFailure(_) => "extraction_failure",
            IngestError::InvalidChunkParams { .. } => "invalid_chunk_params",
            IngestError::InvalidDocument(_) => "invalid_document",
        };
        EngineError::new(ErrorKind::Invalid, code, "ingest", e.to_string())
    }

    fn index(e: IndexError) -> Self {
        let kind = match e {
            IndexError::Embed(_) => ErrorKind::Backend,
            _ => ErrorKind::Data,
        };
        EngineError::new(kind, "index_failed", "index", e.to_string())
    }

    fn analysis(e: AnalysisError) -> Self {
        let code = e.source.code();
        let kind = match code {
            "empty_question" | "unknown_question" => ErrorKind::Invalid,
            "empty_index" | "missing_binding" | "prompt_failed" | "retrieval_failed" => {
                ErrorKind::Data
            }
            _ => ErrorKind::Backend,
        };
        EngineError::new(kind, code, e.stage.to_string(), e.to_string())
    }

    fn transform(e: TransformError) -> Self {
        let (kind, code) = match &e {
            TransformError::NotPending(_) => (ErrorKind::Conflict, "not_pending"),
            TransformError::Prompt(_) => (ErrorKind::Data, "prompt_failed"),
            TransformError::Gateway(g) if g.is_backend() => (ErrorKind::Backend, "backend_failed"),
            TransformError::Gateway(_) => (ErrorKind::Backend, "malformed_output"),
            TransformError::CompanySpecificGuideline(_) => {
                (ErrorKind::Conflict, "company_specific_guideline")
            }
        };
        EngineError::new(kind, code, "prompt_engineering", e.to_string())
    }
}

impl From<ConfigError> for EngineError {
    fn from(e: ConfigError) -> Self {
        let kind = match e {
            ConfigError::Backend(_) => ErrorKind::Backend,
            _ => ErrorKind::Invalid,
        };
        EngineError::new(kind, "config", "config", e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Ingested {
    pub doc_id: String,
    pub pages: usize,
    pub chunks: usize,
    /// False when the same content was already in the workspace.
    pub created: bool,
}

/// Result of turning one piece of feedback into a draft guideline version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransformOutcome {
    pub feedback: FeedbackRecord,
    pub guideline: String,
    pub draft: GuidelineList,
}

pub struct Engine {
    settings: Settings,
    workspace: Workspace,
    pipeline: Pipeline,
    guidelines: GuidelineStore,
    feedback: FeedbackStore,
    extractor: Arc<dyn TextExtractor>,
}

impl Engine {
    /// Opens the workspace and builds backends from `settings`.
    pub fn open(settings: Settings) -> Result<Self, EngineError> {
        settings.validate()?;
        let pipeline = settings.build_pipeline()?;
        Self::with_pipeline(settings, pipeline)
    }

    /// Like [`Engine::open`] with a caller-supplied pipeline.
    pub fn with_pipeline(settings: Settings, pipeline: Pipeline) -> Result<Self, EngineError> {
        let workspace =
            Workspace::open(&settings.workspace).map_err(|e| EngineError::persist("open", e))?;
        let guidelines = GuidelineStore::open(workspace.guidelines_path(), pipeline.catalog())
            .map_err(|e| EngineError::store("open", e))?;
        let feedback = FeedbackStore::open(workspace.feedback_path());
        Ok(Engine {
            settings,
            workspace,
            pipeline,
            guidelines,
            feedback,
            extractor: Arc::new(PassThroughExtractor),
        })
    }

    pub fn with_extractor(mut self, extractor: Arc<dyn TextExtractor>) -> Self {
        self.extractor = extractor;
        self
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn guidelines(&self) -> &GuidelineStore {
        &self.guidelines
    }

    pub fn feedback(&self) -> &FeedbackStore {
        &self.feedback
    }

    /// Extracts page text without touching the workspace.
    pub fn load(&self, raw: &[u8], format: DocumentFormat) -> Result<Document, EngineError> {
        let doc =
            load_document(raw, format, self.extractor.as_ref()).map_err(EngineError::ingest)?;
        if doc.canonical_text().trim().is_empty() {
            return Err(EngineError::ingest(IngestError::EmptyDocument));
        }
        Ok(doc)
    }

    /// Loads, chunks and indexes a report. Re-ingesting identical content
    /// reuses the stored document.
    pub fn ingest(
        &self,
        raw: &[u8],
        format: DocumentFormat,
        metadata: BTreeMap<String, String>,
    ) -> Result<Ingested, EngineError> {
        let mut doc = self.load(raw, format)?;
        doc.metadata = metadata;
        self.ingest_document(doc)
    }

    pub fn ingest_document(&self, doc: Document) -> Result<Ingested, EngineError> {
        if self.workspace.has_document(&doc.doc_id) {
            if let Ok(index) = self.workspace.get_index(&doc.doc_id) {
                return Ok(Ingested {
                    doc_id: doc.doc_id,
                    pages: doc.pages.len(),
                    chunks: index.len(),
                    created: false,
                });
            }
        }
        let chunks = chunk_document(&doc, self.settings.chunking).map_err(EngineError::ingest)?;
        let index = VectorIndex::build(
            doc.doc_id.clone(),
            chunks,
            self.pipeline.embedder(),
            EMBED_BATCH,
        )
        .map_err(EngineError::index)?;
        let created = self
            .workspace
            .put_document(&doc)
            .map_err(|e| EngineError::persist("ingest", e))?;
        self.workspace
            .put_index(&index)
            .map_err(|e| EngineError::persist("index", e))?;
        tracing::info!(doc_id = %doc.doc_id, chunks = index.len(), "report ingested");
        Ok(Ingested {
            doc_id: doc.doc_id,
            pages: doc.pages.len(),
            chunks: index.len(),
            created,
        })
    }

    pub fn index(&self, doc_id: &str) -> Result<VectorIndex, EngineError> {
        if !self.workspace.has_document(doc_id) {
            return Err(EngineError::new(
                ErrorKind::NotFound,
                "not_found",
                "lookup",
                format!("document {doc_id} not found"),
            ));
        }
        let index = self
            .workspace
            .get_index(doc_id)
            .map_err(|e| EngineError::persist("index", e))?;
        let current = self.pipeline.embedder().name();
        if index.embedder() != current {
            return Err(EngineError::new(
                ErrorKind::Conflict,
                "embedder_mismatch",
                "index",
                format!(
                    "document {doc_id} was indexed with {} but {current} is configured; ingest it again",
                    index.embedder()
                ),
            ));
        }
        Ok(index)
    }

    pub fn chunks(&self, doc_id: &str) -> Result<Vec<DocumentChunk>, EngineError> {
        Ok(self.index(doc_id)?.chunks().cloned().collect())
    }

    /// Runs and stores a full analysis with the active guidelines.
    pub fn analyze(
        &self,
        doc_id: &str,
        progress: &(dyn Fn(Progress) + Sync),
    ) -> Result<ReportAnalysis, EngineError> {
        let index = self.index(doc_id)?;
        let analysis = self
            .pipeline
            .analyze_report(&index, &self.guidelines.active(), progress)
            .map_err(|RunError::AnalysisFailed(errors)| {
                let first = errors.first();
                EngineError::new(
                    ErrorKind::Backend,
                    first.map_or("analysis_failed", |e| e.code.as_str()),
                    first.map_or("analysis".to_string(), |e| e.stage.to_string()),
                    format!(
                        "every question failed; first error: {}",
                        first.map_or("", |e| e.message.as_str())
                    ),
                )
            })?;
        self.workspace
            .put_analysis(&analysis)
            .map_err(|e| EngineError::persist("store", e))?;
        Ok(analysis)
    }

    pub fn latest_analysis(&self, doc_id: &str) -> Result<ReportAnalysis, EngineError> {
        if !self.workspace.has_document(doc_id) {
            return Err(EngineError::new(
                ErrorKind::NotFound,
                "not_found",
                "lookup",
                format!("document {doc_id} not found"),
            ));
        }
        self.workspace
            .get_latest_analysis(doc_id)
            .map_err(|e| EngineError::persist("lookup", e))
    }

    /// Answers a free-form question and stores the answer. Basic
    /// information comes from the latest analysis when there is one.
    pub fn ask(&self, doc_id: &str, question: &str) -> Result<CustomAnswer, EngineError> {
        if question.trim().is_empty() {
            return Err(EngineError::new(
                ErrorKind::Invalid,
                "empty_question",
                "custom_question",
                "question is empty",
            ));
        }
        let index = self.index(doc_id)?;
        let info = match self.workspace.get_latest_analysis(doc_id) {
            Ok(a) => a.basic_info,
            Err(_) => self
                .pipeline
                .fetch_basic_info(&index)
                .unwrap_or_else(|_| BasicInfo::unknown()),
        };
        let answer = self
            .pipeline
            .answer_custom(&index, question, &info, &self.guidelines.active())
            .map_err(EngineError::analysis)?;
        self.workspace
            .put_answer(&answer)
            .map_err(|e| EngineError::persist("store", e))?;
        Ok(answer)
    }

    pub fn evidence(
        &self,
        doc_id: &str,
        fragment: &str,
    ) -> Result<Vec<EvidenceMatch>, EngineError> {
        let chunks = self.chunks(doc_id)?;
        locate_evidence(fragment, &chunks).map_err(|e| {
            EngineError::new(
                ErrorKind::Invalid,
                "fragment_too_short",
                "evidence",
                e.to_string(),
            )
        })
    }

    /// Records feedback on a stored answer.
    pub fn submit_feedback(
        &self,
        answer_id: &str,
        expert_id: &str,
        text: &str,
    ) -> Result<FeedbackRecord, EngineError> {
        let resolved = self
            .workspace
            .resolve_answer(answer_id)
            .map_err(|e| EngineError::persist("feedback", e))?;
        self.feedback
            .record(
                answer_id,
                expert_id,
                text,
                resolved.question_index,
                self.pipeline.now(),
            )
            .map_err(|e| EngineError::store("feedback", e))
    }

    /// Generates a guideline from pending feedback and stores it as a draft
    /// version. The active version is unchanged until [`Engine::promote`].
    pub fn transform_feedback(&self, feedback_id: &str) -> Result<TransformOutcome, EngineError> {
        let fb = self
            .feedback
            .get(feedback_id)
            .map_err(|e| EngineError::store("prompt_engineering", e))?;
        if fb.status != FeedbackStatus::Pending {
            return Err(EngineError::transform(TransformError::NotPending(
                fb.feedback_id,
            )));
        }
        let resolved = self
            .workspace
            .resolve_answer(&fb.answer_id)
            .map_err(|e| EngineError::persist("prompt_engineering", e))?;
        let subject = FeedbackSubject {
            original_prompt: resolved.prompt,
            old_response: resolved.response,
            company_name: Some(resolved.company_name),
        };
        let config = self.pipeline.config();
        let guideline = feedback_to_guideline(
            &fb,
            &self.guidelines.latest(),
            &subject,
            self.pipeline.prompter(),
            self.pipeline.llm(),
            &config.completion,
            config.answer_length,
        )
        .map_err(EngineError::transform)?;
        let draft = self
            .guidelines
            .draft(
                &guideline,
                GuidelineScope::General,
                Provenance::ExpertFeedback {
                    feedback_id: fb.feedback_id.clone(),
                },
            )
            .map_err(|e| EngineError::store("prompt_engineering", e))?;
        let feedback = self
            .feedback
            .transition(
                &fb.feedback_id,
                FeedbackStatus::Transformed,
                Some(draft.version),
            )
            .map_err(|e| EngineError::store("prompt_engineering", e))?;
        Ok(TransformOutcome {
            feedback,
            guideline,
            draft,
        })
    }

    pub fn promote(&self, version: u32) -> Result<GuidelineList, EngineError> {
        self.guidelines
            .promote(version)
            .map_err(|e| EngineError::store("guidelines", e))
    }
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("workspace", &self.workspace.root())
            .field("pipeline", &self.pipeline)
            .finish_non_exhaustive()
    }
}
