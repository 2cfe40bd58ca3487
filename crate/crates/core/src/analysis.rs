//! The report pipeline: basic information, one answer and one conformity
//! score per TCFD question, the report average, and custom questions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::EmbeddingBackend;
use crate::gateway::{
    complete, parse_answer_json, parse_basic_info_json, parse_conformity_json, CompletionParams,
    ConformityResult, GatewayError, LlmBackend, ModelAnswer, ParseError,
};
use crate::index::{IndexError, VectorIndex};
use crate::prompting::{
    BasicInfo, GuidelineList, PromptError, Prompter, QuestionCatalog, RenderedPrompt, TcfdQuestion,
    TemplateId, DEFAULT_ANSWER_LENGTH,
};
use crate::retrieval::{
    build_context, CharRatioEstimator, ContextWindow, RetrievalError, RetrievalParams,
    TokenEstimator,
};

/// Retrieval query for the company's name, location and sector.
pub const BASIC_INFO_QUERY: &str = "company name headquarters sector";

pub const DEFAULT_WORKERS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    BasicInfo,
    Answer,
    Conformity,
    CustomQuestion,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::BasicInfo => "basic_info",
            Stage::Answer => "answer",
            Stage::Conformity => "conformity",
            Stage::CustomQuestion => "custom_question",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("question is empty")]
    EmptyQuestion,
    #[error("no question with index {0}")]
    UnknownQuestion(u8),
}

impl From<ParseError> for StepError {
    fn from(e: ParseError) -> Self {
        StepError::Gateway(GatewayError::Parse(e))
    }
}

impl StepError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            StepError::Retrieval(RetrievalError::Index(IndexError::EmptyIndex)) => "empty_index",
            StepError::Retrieval(e) if e.is_backend_unavailable() => "backend_unavailable",
            StepError::Retrieval(_) => "retrieval_failed",
            StepError::Prompt(PromptError::MissingBinding(_)) => "missing_binding",
            StepError::Prompt(_) => "prompt_failed",
            StepError::Gateway(GatewayError::BackendUnavailable { .. }) => "backend_unavailable",
            StepError::Gateway(GatewayError::Rejected(_)) => "backend_rejected",
            StepError::Gateway(GatewayError::Parse(ParseError::MalformedOutput(_))) => {
                "malformed_output"
            }
            StepError::Gateway(GatewayError::Parse(ParseError::MissingKey(_))) => "missing_key",
            StepError::Gateway(GatewayError::Parse(ParseError::ScoreOutOfRange(_))) => {
                "score_out_of_range"
            }
            StepError::EmptyQuestion => "empty_question",
            StepError::UnknownQuestion(_) => "unknown_question",
        }
    }

    pub fn is_backend_unavailable(&self) -> bool {
        self.code() == "backend_unavailable"
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{stage} failed: {source}")]
pub struct AnalysisError {
    pub stage: Stage,
    pub question_index: Option<u8>,
    pub source: StepError,
}

impl AnalysisError {
    fn new(stage: Stage, question_index: Option<u8>, source: impl Into<StepError>) -> Self {
        AnalysisError {
            stage,
            question_index,
            source: source.into(),
        }
    }

    pub fn record(&self) -> ErrorRecord {
        ErrorRecord {
            stage: self.stage,
            question_index: self.question_index,
            code: self.source.code().to_string(),
            message: self.source.to_string(),
        }
    }
}

/// Serializable form of a failed step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub stage: Stage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_index: Option<u8>,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error("every question failed; first error: {}", .0.first().map(|e| e.message.as_str()).unwrap_or(""))]
    AnalysisFailed(Vec<ErrorRecord>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMode {
    /// Question answering; the better-performing prompt in expert review.
    #[default]
    Qa,
    Summarization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub retrieval: RetrievalParams,
    pub answer_length: u32,
    pub completion: CompletionParams,
    pub mode: AnswerMode,
    /// Threads used for the eleven question tasks.
    pub workers: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            retrieval: RetrievalParams::default(),
            answer_length: DEFAULT_ANSWER_LENGTH,
            completion: CompletionParams::default(),
            mode: AnswerMode::Qa,
            workers: DEFAULT_WORKERS,
        }
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub DateTime<Utc>);

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisStatus {
    Complete,
    Partial,
}

/// What went into one question's answer and score.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionTrace {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_prompt: Option<String>,
    pub answer_context: Vec<u32>,
    pub conformity_context: Vec<u32>,
    pub over_budget: bool,
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportAnalysis {
    pub doc_id: String,
    pub status: AnalysisStatus,
    pub basic_info: BasicInfo,
    pub answers: BTreeMap<u8, ModelAnswer>,
    pub conformity: BTreeMap<u8, ConformityResult>,
    /// Mean of the available scores, rounded half-up to two decimals.
    pub average_score: f64,
    pub guideline_version: u32,
    pub mode: AnswerMode,
    pub model_id: String,
    pub created_at: DateTime<Utc>,
    pub errors: Vec<ErrorRecord>,
    pub traces: BTreeMap<u8, QuestionTrace>,
}

impl ReportAnalysis {
    /// Identifier used in file names and answer ids, e.g. `20240101T000000.000Z`.
    pub fn analysis_id(&self) -> String {
        analysis_id(&self.created_at)
    }

    pub fn answer_id(&self, question_index: u8) -> String {
        format!("{}/{}/q{}", self.doc_id, self.analysis_id(), question_index)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("analysis serializes")
    }
}

pub fn analysis_id(at: &DateTime<Utc>) -> String {
    at.format("%Y%m%dT%H%M%S%.3fZ").to_string()
}

/// Mean of integer scores, rounded half-up to two decimals, computed exactly.
pub fn average_score(scores: &[u8]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let n = scores.len() as u64;
    let sum: u64 = scores.iter().map(|&s| u64::from(s)).sum();
    let cents = (200 * sum + n) / (2 * n);
    cents as f64 / 100.0
}

/// Output of one answer step.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerRun {
    pub answer: ModelAnswer,
    pub prompt: RenderedPrompt,
    pub context: ContextWindow,
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConformityRun {
    pub result: ConformityResult,
    pub prompt: RenderedPrompt,
    pub context: ContextWindow,
    pub retries: u32,
}

/// A custom question's answer with the pages of its cited chunks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustomAnswer {
    pub doc_id: String,
    pub question: String,
    pub answer: ModelAnswer,
    /// Page of each cited chunk, deduplicated, in citation order.
    pub pages: Vec<u32>,
    pub context_sources: Vec<u32>,
    pub guideline_version: u32,
    pub created_at: DateTime<Utc>,
    /// The prompt sent to the model.
    pub prompt: String,
}

impl CustomAnswer {
    pub fn answer_id(&self) -> String {
        format!("{}/cqa/{}", self.doc_id, self.answer_key())
    }

    /// File-name-safe key: timestamp plus a short hash of the question.
    pub fn answer_key(&self) -> String {
        let hash = crate::prompting::fingerprint(&self.question);
        format!("{}-{}", analysis_id(&self.created_at), &hash[..8])
    }
}

/// Pages of the cited chunks in citation order, deduplicated.
pub fn cited_pages(answer: &ModelAnswer, index: &VectorIndex) -> Vec<u32> {
    let mut pages = Vec::new();
    for source in &answer.citation_order {
        if let Some(chunk) = index.chunk(*source) {
            if !pages.contains(&chunk.page_number) {
                pages.push(chunk.page_number);
            }
        }
    }
    pages
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Progress {
    pub done: usize,
    pub total: usize,
}

#[derive(Clone)]
pub struct Pipeline {
    embedder: Arc<dyn EmbeddingBackend>,
    llm: Arc<dyn LlmBackend>,
    estimator: Arc<dyn TokenEstimator>,
    prompter: Prompter,
    catalog: Arc<QuestionCatalog>,
    config: AnalysisConfig,
    clock: Arc<dyn Clock>,
}

impl Pipeline {
    pub fn new(embedder: Arc<dyn EmbeddingBackend>, llm: Arc<dyn LlmBackend>) -> Self {
        Pipeline {
            embedder,
            llm,
            estimator: Arc::new(CharRatioEstimator),
            prompter: Prompter::default(),
            catalog: Arc::new(QuestionCatalog::builtin()),
            config: AnalysisConfig::default(),
            clock: Arc::new(SystemClock),
        }
    }

    pub fn with_config(mut self, config: AnalysisConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_catalog(mut self, catalog: QuestionCatalog) -> Self {
        self.catalog = Arc::new(catalog);
        self
    }

    pub fn with_prompter(mut self, prompter: Prompter) -> Self {
        self.prompter = prompter;
        self
    }

    pub fn with_estimator(mut self, estimator: Arc<dyn TokenEstimator>) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &AnalysisConfig {
        &self.config
    }

    pub fn catalog(&self) -> &QuestionCatalog {
        &self.catalog
    }

    pub fn prompter(&self) -> &Prompter {
        &self.prompter
    }

    pub fn llm(&self) -> &dyn LlmBackend {
        self.llm.as_ref()
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    pub fn embedder(&self) -> &dyn EmbeddingBackend {
        self.embedder.as_ref()
    }

    fn context(
        &self,
        index: &VectorIndex,
        query: &str,
        template: TemplateId,
        bindings: crate::prompting::Bindings,
    ) -> Result<ContextWindow, StepError> {
        let skeleton = self.prompter.skeleton(template, bindings)?;
        let overhead = self.estimator.estimate(&skeleton);
        Ok(build_context(
            index,
            query,
            self.embedder.as_ref(),
            self.config.retrieval,
            overhead,
            self.estimator.as_ref(),
        )?)
    }

    fn call(&self, prompt: &RenderedPrompt) -> Result<(String, u32), StepError> {
        let c = complete(prompt, &self.config.completion, self.llm.as_ref())?;
        Ok((c.text, c.retries))
    }

    pub fn fetch_basic_info(&self, index: &VectorIndex) -> Result<BasicInfo, AnalysisError> {
        let step = || -> Result<BasicInfo, StepError> {
            let ctx = self.context(
                index,
                BASIC_INFO_QUERY,
                TemplateId::BasicInfo,
                Default::default(),
            )?;
            let prompt = self.prompter.render_basic_info_prompt(&ctx)?;
            let (raw, _) = self.call(&prompt)?;
            Ok(parse_basic_info_json(&raw)?)
        };
        step().map_err(|e| AnalysisError::new(Stage::BasicInfo, None, e))
    }

    /// Answers one TCFD question with the configured prompt mode.
    pub fn summarize_tcfd(
        &self,
        index: &VectorIndex,
        q: &TcfdQuestion,
        info: &BasicInfo,
        guidelines: &GuidelineList,
    ) -> Result<AnswerRun, AnalysisError> {
        let len = self.config.answer_length;
        let step = || -> Result<AnswerRun, StepError> {
            let (ctx, prompt) = match self.config.mode {
                AnswerMode::Qa => {
                    let b = self.prompter.qa_bindings(info, q, guidelines, len)?;
                    let ctx = self.context(index, &q.question_text, TemplateId::Qa, b)?;
                    let p = self
                        .prompter
                        .render_qa_prompt(info, q, &ctx, guidelines, len)?;
                    (ctx, p)
                }
                AnswerMode::Summarization => {
                    let b = self
                        .prompter
                        .summarization_bindings(info, q, guidelines, len)?;
                    let ctx =
                        self.context(index, &q.question_text, TemplateId::Summarization, b)?;
                    let p = self
                        .prompter
                        .render_summarization_prompt(info, q, &ctx, guidelines, len)?;
                    (ctx, p)
                }
            };
            let (raw, retries) = self.call(&prompt)?;
            let answer = parse_answer_json(&raw, &source_set(&ctx))?;
            Ok(AnswerRun {
                answer,
                prompt,
                context: ctx,
                retries,
            })
        };
        step().map_err(|e| AnalysisError::new(Stage::Answer, Some(q.index), e))
    }

    pub fn assess_conformity(
        &self,
        index: &VectorIndex,
        q: &TcfdQuestion,
        requirements: &str,
    ) -> Result<ConformityRun, AnalysisError> {
        let step = || -> Result<ConformityRun, StepError> {
            let b = self.prompter.conformity_bindings(q, requirements)?;
            let ctx = self.context(index, &q.question_text, TemplateId::Conformity, b)?;
            let prompt =
                self.prompter
                    .render_conformity_prompt_for_context(q, requirements, &ctx)?;
            let (raw, retries) = self.call(&prompt)?;
            let result = parse_conformity_json(&raw, q.index)?;
            Ok(ConformityRun {
                result,
                prompt,
                context: ctx,
                retries,
            })
        };
        step().map_err(|e| AnalysisError::new(Stage::Conformity, Some(q.index), e))
    }

    /// Runs every question. Individual failures are recorded and yield a
    /// partial analysis; only a run where every question failed is an error.
    pub fn analyze_report(
        &self,
        index: &VectorIndex,
        guidelines: &GuidelineList,
        progress: &(dyn Fn(Progress) + Sync),
    ) -> Result<ReportAnalysis, RunError> {
        let mut errors = Vec::new();
        let basic_info = match self.fetch_basic_info(index) {
            Ok(info) => info,
            Err(e) => {
                tracing::warn!(error = %e, "basic information unavailable");
                errors.push(e.record());
                BasicInfo::unknown()
            }
        };

        let questions: Vec<&TcfdQuestion> = self.catalog.iter().collect();
        let total = questions.len();
        let next = AtomicUsize::new(0);
        let done = AtomicUsize::new(0);
        let outcomes = Mutex::new(BTreeMap::new());
        let workers = self.config.workers.clamp(1, total.max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(q) = questions.get(i) else { break };
                    let outcome = self.run_question(index, q, &basic_info, guidelines);
                    outcomes
                        .lock()
                        .expect("outcome lock")
                        .insert(q.index, outcome);
                    let d = done.fetch_add(1, Ordering::SeqCst) + 1;
                    progress(Progress { done: d, total });
                });
            }
        });

        let mut answers = BTreeMap::new();
        let mut conformity = BTreeMap::new();
        let mut traces = BTreeMap::new();
        let mut failed = 0;
        for (qi, outcome) in outcomes.into_inner().expect("outcome lock") {
            if !outcome.errors.is_empty() {
                failed += 1;
            }
            errors.extend(outcome.errors.iter().map(AnalysisError::record));
            if let Some(a) = outcome.answer {
                answers.insert(qi, a);
            }
            if let Some(c) = outcome.conformity {
                conformity.insert(qi, c);
            }
            traces.insert(qi, outcome.trace);
        }
        if failed == total {
            return Err(RunError::AnalysisFailed(errors));
        }
        let scores: Vec<u8> = conformity.values().map(|c| c.score).collect();
        let status = if errors.is_empty() {
            AnalysisStatus::Complete
        } else {
            AnalysisStatus::Partial
        };
        Ok(ReportAnalysis {
            doc_id: index.doc_id().to_string(),
            status,
            basic_info,
            answers,
            conformity,
            average_score: average_score(&scores),
            guideline_version: guidelines.version,
            mode: self.config.mode,
            model_id: self.config.completion.model_id.clone(),
            created_at: self.clock.now(),
            errors,
            traces,
        })
    }

    fn run_question(
        &self,
        index: &VectorIndex,
        q: &TcfdQuestion,
        info: &BasicInfo,
        guidelines: &GuidelineList,
    ) -> QuestionOutcome {
        let mut out = QuestionOutcome::default();
        match self.summarize_tcfd(index, q, info, guidelines) {
            Ok(run) => {
                out.trace.answer_prompt = Some(run.prompt.text);
                out.trace.answer_context = run.context.sources();
                out.trace.over_budget |= run.context.over_budget;
                out.trace.retries += run.retries;
                out.answer = Some(run.answer);
            }
            Err(e) => out.errors.push(e),
        }
        match self.assess_conformity(index, q, &q.requirements) {
            Ok(run) => {
                out.trace.conformity_context = run.context.sources();
                out.trace.over_budget |= run.context.over_budget;
                out.trace.retries += run.retries;
                out.conformity = Some(run.result);
            }
            Err(e) => out.errors.push(e),
        }
        out
    }

    /// Answers a free-form question from context retrieved with the question
    /// itself.
    pub fn answer_custom(
        &self,
        index: &VectorIndex,
        user_question: &str,
        info: &BasicInfo,
        guidelines: &GuidelineList,
    ) -> Result<CustomAnswer, AnalysisError> {
        let question = user_question.trim();
        let len = self.config.answer_length;
        let cqa = &self.catalog.cqa_guideline;
        let step = || -> Result<CustomAnswer, StepError> {
            if question.is_empty() {
                return Err(StepError::EmptyQuestion);
            }
            let b = self
                .prompter
                .cqa_bindings(info, question, guidelines, cqa, len)?;
            let ctx = self.context(index, question, TemplateId::Cqa, b)?;
            let prompt = self
                .prompter
                .render_cqa_prompt(info, question, &ctx, guidelines, cqa, len)?;
            let (raw, _) = self.call(&prompt)?;
            let answer = parse_answer_json(&raw, &source_set(&ctx))?;
            Ok(CustomAnswer {
                doc_id: index.doc_id().to_string(),
                question: question.to_string(),
                pages: cited_pages(&answer, index),
                answer,
                context_sources: ctx.sources(),
                guideline_version: guidelines.version,
                created_at: self.clock.now(),
                prompt: prompt.text,
            })
        };
        step().map_err(|e| AnalysisError::new(Stage::CustomQuestion, None, e))
    }

    /// Re-renders the answer prompt for `question_index` as it would be sent
    /// now. Used when turning feedback into a guideline.
    pub fn answer_prompt(
        &self,
        index: &VectorIndex,
        question_index: u8,
        info: &BasicInfo,
        guidelines: &GuidelineList,
    ) -> Result<RenderedPrompt, AnalysisError> {
        let err = |e: StepError| AnalysisError::new(Stage::Answer, Some(question_index), e);
        let q = self
            .catalog
            .question(question_index)
            .ok_or_else(|| err(StepError::UnknownQuestion(question_index)))?;
        let len = self.config.answer_length;
        let step = || -> Result<RenderedPrompt, StepError> {
            let b = self.prompter.qa_bindings(info, q, guidelines, len)?;
            let ctx = self.context(index, &q.question_text, TemplateId::Qa, b)?;
            Ok(self
                .prompter
                .render_qa_prompt(info, q, &ctx, guidelines, len)?)
        };
        step().map_err(err)
    }
}

impl fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pipeline")
            .field("embedder", &self.embedder.name())
            .field("llm", &self.llm.name())
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

#[derive(Default)]
struct QuestionOutcome {
    answer: Option<ModelAnswer>,
    conformity: Option<ConformityResult>,
    trace: QuestionTrace,
    errors: Vec<AnalysisError>,
}

fn source_set(ctx: &ContextWindow) -> BTreeSet<u32> {
    ctx.sources().into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashEmbedder;
    use crate::gateway::{MockScript, ScriptRule, ScriptedBackend};
    use crate::ingestion::{chunk_document, ChunkParams, Document};

    fn index() -> VectorIndex {
        let doc = Document::from_pages([
            "Company: Acme Holdings. Headquarters: Zurich. Sector: Insurance.",
            "The board oversees climate-related risks through its risk committee.",
            "Scope 1 and 2 emissions fell by 12 percent against the 2019 base year.",
        ]);
        let chunks = chunk_document(&doc, ChunkParams::new(80, 10).unwrap()).unwrap();
        VectorIndex::build(doc.doc_id.clone(), chunks, &HashEmbedder::default(), 16).unwrap()
    }

    fn pipeline(script: MockScript) -> Pipeline {
        let config = AnalysisConfig {
            completion: CompletionParams {
                backoff_ms: 0,
                ..CompletionParams::default()
            },
            ..AnalysisConfig::default()
        };
        Pipeline::new(
            Arc::new(HashEmbedder::default()),
            Arc::new(ScriptedBackend::with_extractive_fallback(script)),
        )
        .with_config(config)
        .with_clock(Arc::new(FixedClock(DateTime::UNIX_EPOCH)))
    }

    #[test]
    fn average_rounds_half_up() {
        assert_eq!(
            average_score(&[60, 60, 70, 60, 70, 50, 90, 70, 50, 75, 20]),
            61.36
        );
        assert_eq!(average_score(&[0; 11]), 0.0);
        assert_eq!(
            average_score(&[20, 40, 40, 60, 40, 40, 70, 60, 50, 70, 60]),
            50.0
        );
        assert_eq!(
            average_score(&[60, 60, 85, 90, 80, 60, 90, 85, 40, 70, 50]),
            70.0
        );
        // 1/8 = 0.125 -> 0.13
        assert_eq!(average_score(&[1, 0, 0, 0, 0, 0, 0, 0]), 0.13);
    }

    #[test]
    fn basic_info_from_extractive_mock() {
        let p = pipeline(MockScript::default());
        let info = p.fetch_basic_info(&index()).unwrap();
        assert_eq!(info, BasicInfo::new("Acme Holdings", "Zurich", "Insurance"));
    }

    #[test]
    fn basic_info_partial_and_malformed() {
        let mut script = MockScript::default();
        script.rules.push(ScriptRule::reply(
            "COMPANY_NAME",
            r#"{"COMPANY_NAME":"A","SECTOR":"B"}"#,
        ));
        let info = pipeline(script).fetch_basic_info(&index()).unwrap();
        assert_eq!(info.location, "unknown");

        let mut script = MockScript::default();
        script
            .rules
            .push(ScriptRule::reply("COMPANY_NAME", "not json"));
        let err = pipeline(script).fetch_basic_info(&index()).unwrap_err();
        assert_eq!(err.stage, Stage::BasicInfo);
        assert_eq!(err.record().code, "malformed_output");
        assert_eq!(err.record().stage.to_string(), "basic_info");
    }

    #[test]
    fn full_run_is_complete() {
        let p = pipeline(MockScript::default());
        let g = GuidelineList::seed(p.catalog());
        let calls = AtomicUsize::new(0);
        let a = p
            .analyze_report(&index(), &g, &|_| {
                calls.fetch_add(1, Ordering::SeqCst);
            })
            .unwrap();
        assert_eq!(a.status, AnalysisStatus::Complete);
        assert_eq!(a.answers.len(), 11);
        assert_eq!(a.conformity.len(), 11);
        assert_eq!(calls.load(Ordering::SeqCst), 11);
    }

    #[test]
    fn every_question_failing_is_fatal() {
        let mut script = MockScript::default();
        script.rules.push(ScriptRule::fail("QUESTION:", "rejected"));
        let p = pipeline(script);
        let g = GuidelineList::seed(p.catalog());
        assert!(matches!(
            p.analyze_report(&index(), &g, &|_| {}),
            Err(RunError::AnalysisFailed(_))
        ));
    }

    #[test]
    fn empty_custom_question() {
        let p = pipeline(MockScript::default());
        let g = GuidelineList::seed(p.catalog());
        let err = p
            .answer_custom(&index(), "  ", &BasicInfo::unknown(), &g)
            .unwrap_err();
        assert_eq!(err.source, StepError::EmptyQuestion);
    }
}
