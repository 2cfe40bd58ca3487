//! Runtime settings: a TOML file overlaid with `TCFD_*` environment
//! variables. Every field has a default, so an empty file is valid.
//!
//! ```toml
//! workspace = "./tcfd-data"
//!
//! [chunking]
//! chunk_size = 500
//! overlap = 20
//!
//! [retrieval]
//! top_k = 20
//! budget_tokens = 4000
//!
//! [analysis]
//! answer_length = 150
//! workers = 4
//!
//! [llm]
//! backend = "auto"        # auto | mock | http
//! base_url = "https://api.openai.com/v1"
//! api_key_env = "OPENAI_API_KEY"
//! model_id = "gpt-3.5-turbo"
//! mock_script = "script.json"
//!
//! [embedding]
//! backend = "hash"        # hash | http
//!
//! [service]
//! addr = "127.0.0.1:8080"
//! api_key_env = "TCFD_SERVICE_KEY"
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{AnalysisConfig, AnswerMode, Pipeline, DEFAULT_WORKERS};
use crate::embedding::{
    EmbeddingBackend, HashEmbedder, HttpEmbedder, HttpEmbedderConfig, DEFAULT_HASH_DIM,
};
use crate::gateway::{
    CompletionParams, ExtractiveMock, HttpChatBackend, HttpChatConfig, LlmBackend, MockScript,
    ScriptedBackend,
};
use crate::ingestion::ChunkParams;
use crate::prompting::{Prompter, TemplateSet, DEFAULT_ANSWER_LENGTH};
use crate::retrieval::RetrievalParams;

pub const DEFAULT_WORKSPACE: &str = "./tcfd-data";
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("backend setup failed: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmKind {
    /// HTTP when an API key is present, the mock otherwise.
    #[default]
    Auto,
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    #[default]
    Hash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSettings {
    pub backend: LlmKind,
    pub base_url: String,
    pub api_key_env: String,
    pub model_id: String,
    pub temperature: f32,
    pub max_output_tokens: u32,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    /// JSON script for the mock backend; unscripted prompts fall through to
    /// the extractive mock.
    pub mock_script: Option<PathBuf>,
    /// Directory of `{template}.txt` overrides.
    pub templates_dir: Option<PathBuf>,
}

impl Default for LlmSettings {
    fn default() -> Self {
        let chat = HttpChatConfig::default();
        let params = CompletionParams::default();
        LlmSettings {
            backend: LlmKind::Auto,
            base_url: chat.base_url,
            api_key_env: chat.api_key_env,
            model_id: params.model_id,
            temperature: params.temperature,
            max_output_tokens: params.max_output_tokens,
            timeout_secs: params.timeout_secs,
            max_retries: params.max_retries,
            backoff_ms: params.backoff_ms,
            mock_script: None,
            templates_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSettings {
    pub backend: EmbeddingKind,
    pub dim: usize,
    pub http: HttpEmbedderConfig,
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        EmbeddingSettings {
            backend: EmbeddingKind::Hash,
            dim: DEFAULT_HASH_DIM,
            http: HttpEmbedderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisSettings {
    pub answer_length: u32,
    pub workers: usize,
    pub mode: AnswerMode,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            answer_length: DEFAULT_ANSWER_LENGTH,
            workers: DEFAULT_WORKERS,
            mode: AnswerMode::Qa,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceSettings {
    pub addr: String,
    /// Environment variable holding the static API key. Unset or empty
    /// variable means requests are not authenticated.
    pub api_key_env: String,
    /// Maximum analysis jobs running at once; more are refused with 503.
    pub max_jobs: usize,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        ServiceSettings {
            addr: DEFAULT_ADDR.into(),
            api_key_env: "TCFD_SERVICE_KEY".into(),
            max_jobs: 4,
        }
    }
}

impl ServiceSettings {
    pub fn api_key(&self) -> Option<String> {
        std::env::var(&self.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Settings {
    pub workspace: PathBuf,
    pub chunking: ChunkParams,
    pub retrieval: RetrievalParams,
    pub analysis: AnalysisSettings,
    pub llm: LlmSettings,
    pub embedding: EmbeddingSettings,
    pub service: ServiceSettings,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            workspace: PathBuf::from(DEFAULT_WORKSPACE),
            chunking: ChunkParams::default(),
            retrieval: RetrievalParams::default(),
            analysis: AnalysisSettings::default(),
            llm: LlmSettings::default(),
            embedding: EmbeddingSettings::default(),
            service: ServiceSettings::default(),
        }
    }
}

/// Environment variables read by [`Settings::apply_env`].
pub const ENV_VARS: &[(&str, &str)] = &[
    ("TCFD_WORKSPACE", "workspace directory"),
    ("TCFD_CHUNK_SIZE", "characters per chunk"),
    (
        "TCFD_CHUNK_OVERLAP",
        "characters shared by neighbouring chunks",
    ),
    ("TCFD_TOP_K", "chunks retrieved per question"),
    ("TCFD_BUDGET_TOKENS", "prompt token budget"),
    ("TCFD_ANSWER_LENGTH", "answer length in words"),
    ("TCFD_WORKERS", "parallel question workers"),
    ("TCFD_LLM_BACKEND", "auto, mock or http"),
    ("TCFD_LLM_BASE_URL", "chat completion API base URL"),
    (
        "TCFD_LLM_API_KEY_ENV",
        "variable holding the chat API token",
    ),
    ("TCFD_MODEL_ID", "chat model id"),
    ("TCFD_MOCK_SCRIPT", "mock response script (JSON)"),
    ("TCFD_EMBEDDING_BACKEND", "hash or http"),
    ("TCFD_EMBEDDING_BASE_URL", "embedding API base URL"),
    ("TCFD_ADDR", "service listen address"),
];

fn parse_env<T: std::str::FromStr>(name: &str, value: &str) -> Result<T, ConfigError> {
    value
        .trim()
        .parse()
        .map_err(|_| ConfigError::Invalid(format!("{name}={value:?} is not valid")))
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let settings: Settings =
            toml::from_str(text).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        settings.validate()?;
        Ok(settings)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    /// Defaults or `path`, then the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut settings = match path {
            Some(p) => Self::from_path(p)?,
            None => Settings::default(),
        };
        settings.apply_env(|k| std::env::var(k).ok())?;
        Ok(settings)
    }

    pub fn apply_env(
        &mut self,
        lookup: impl Fn(&str) -> Option<String>,
    ) -> Result<(), ConfigError> {
        let get = |k: &str| lookup(k).filter(|v| !v.trim().is_empty());
        if let Some(v) = get("TCFD_WORKSPACE") {
            self.workspace = v.into();
        }
        if let Some(v) = get("TCFD_CHUNK_SIZE") {
            self.chunking.chunk_size = parse_env("TCFD_CHUNK_SIZE", &v)?;
        }
        if let Some(v) = get("TCFD_CHUNK_OVERLAP") {
            self.chunking.overlap = parse_env("TCFD_CHUNK_OVERLAP", &v)?;
        }
        if let Some(v) = get("TCFD_TOP_K") {
            self.retrieval.top_k = parse_env("TCFD_TOP_K", &v)?;
        }
        if let Some(v) = get("TCFD_BUDGET_TOKENS") {
            self.retrieval.budget_tokens = parse_env("TCFD_BUDGET_TOKENS", &v)?;
        }
        if let Some(v) = get("TCFD_ANSWER_LENGTH") {
            self.analysis.answer_length = parse_env("TCFD_ANSWER_LENGTH", &v)?;
        }
        if let Some(v) = get("TCFD_WORKERS") {
            self.analysis.workers = parse_env("TCFD_WORKERS", &v)?;
        }
        if let Some(v) = get("TCFD_LLM_BACKEND") {
            self.llm.backend = match v.trim() {
                "auto" => LlmKind::Auto,
                "mock" => LlmKind::Mock,
                "http" => LlmKind::Http,
                _ => return Err(ConfigError::Invalid(format!("TCFD_LLM_BACKEND={v:?}"))),
            };
        }
        if let Some(v) = get("TCFD_LLM_BASE_URL") {
            self.llm.base_url = v;
        }
        if let Some(v) = get("TCFD_LLM_API_KEY_ENV") {
            self.llm.api_key_env = v;
        }
        if let Some(v) = get("TCFD_MODEL_ID") {
            self.llm.model_id = v;
        }
        if let Some(v) = get("TCFD_MOCK_SCRIPT") {
            self.llm.mock_script = Some(v.into());
        }
        if let Some(v) = get("TCFD_EMBEDDING_BACKEND") {
            self.embedding.backend = match v.trim() {
                "hash" => EmbeddingKind::Hash,
                "http" => EmbeddingKind::Http,
                _ => {
                    return Err(ConfigError::Invalid(format!(
                        "TCFD_EMBEDDING_BACKEND={v:?}"
                    )))
                }
            };
        }
        if let Some(v) = get("TCFD_EMBEDDING_BASE_URL") {
            self.embedding.http.base_url = v;
        }
        if let Some(v) = get("TCFD_ADDR") {
            self.service.addr = v;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.chunking
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.retrieval.top_k == 0 {
            return Err(ConfigError::Invalid("top_k must be positive".into()));
        }
        if self.analysis.answer_length == 0 {
            return Err(ConfigError::Invalid(
                "answer_length must be positive".into(),
            ));
        }
        if self.embedding.dim == 0 {
            return Err(ConfigError::Invalid(
                "embedding dim must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn completion_params(&self) -> CompletionParams {
        CompletionParams {
            temperature: self.llm.temperature,
            max_output_tokens: self.llm.max_output_tokens,
            model_id: self.llm.model_id.clone(),
            timeout_secs: self.llm.timeout_secs,
            max_retries: self.llm.max_retries,
            backoff_ms: self.llm.backoff_ms,
        }
    }

    pub fn analysis_config(&self) -> AnalysisConfig {
        AnalysisConfig {
            retrieval: self.retrieval,
            answer_length: self.analysis.answer_length,
            completion: self.completion_params(),
            mode: self.analysis.mode,
            workers: self.analysis.workers.max(1),
        }
    }

    fn chat_config(&self) -> HttpChatConfig {
        HttpChatConfig {
            base_url: self.llm.base_url.clone(),
            api_key_env: self.llm.api_key_env.clone(),
        }
    }

    /// The backend `auto` resolves to.
    pub fn resolved_llm(&self) -> LlmKind {
        match self.llm.backend {
            LlmKind::Auto if self.chat_config().api_key().is_some() => LlmKind::Http,
            LlmKind::Auto => LlmKind::Mock,
            other => other,
        }
    }

    pub fn build_llm(&self) -> Result<Arc<dyn LlmBackend>, ConfigError> {
        match self.resolved_llm() {
            LlmKind::Http => {
                let backend = HttpChatBackend::new(self.chat_config())
                    .map_err(|e| ConfigError::Backend(e.to_string()))?;
                Ok(Arc::new(backend))
            }
            _ => match &self.llm.mock_script {
                Some(path) => {
                    let script = MockScript::from_path(path)
                        .map_err(|e| ConfigError::Backend(e.to_string()))?;
                    Ok(Arc::new(ScriptedBackend::with_extractive_fallback(script)))
                }
                None => Ok(Arc::new(ExtractiveMock)),
            },
        }
    }

    pub fn build_embedder(&self) -> Result<Arc<dyn EmbeddingBackend>, ConfigError> {
        match self.embedding.backend {
            EmbeddingKind::Hash => Ok(Arc::new(HashEmbedder::new(self.embedding.dim))),
            EmbeddingKind::Http => {
                let e = HttpEmbedder::new(self.embedding.http.clone())
                    .map_err(|e| ConfigError::Backend(e.to_string()))?;
                Ok(Arc::new(e))
            }
        }
    }

    pub fn build_pipeline(&self) -> Result<Pipeline, ConfigError> {
        let templates = match &self.llm.templates_dir {
            Some(dir) => {
                TemplateSet::with_overrides(dir).map_err(|e| ConfigError::Invalid(e.to_string()))?
            }
            None => TemplateSet::builtin(),
        };
        Ok(Pipeline::new(self.build_embedder()?, self.build_llm()?)
            .with_config(self.analysis_config())
            .with_prompter(Prompter::new(templates)))
    }
}
