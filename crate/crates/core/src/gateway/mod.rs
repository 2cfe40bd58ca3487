//! Chat-completion calls and parsing of the JSON replies.

mod http;
mod mock;
mod parse;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::RenderedPrompt;
use crate::retry::{with_retries, RetryPolicy};

pub use http::{HttpChatBackend, HttpChatConfig};
pub use mock::{ExtractiveMock, MockScript, ScriptError, ScriptRule, ScriptedBackend};
pub use parse::{
    extract_json_object, parse_answer_json, parse_basic_info_json, parse_conformity_json,
    parse_guideline_json, serialize_answer, serialize_basic_info, serialize_conformity,
    serialize_guideline, AnswerKind, ConformityResult, ModelAnswer, ParseError,
    ANALYSIS_WORD_LIMIT,
};

pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1024;
pub const DEFAULT_MODEL_ID: &str = "gpt-3.5-turbo";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletionParams {
    pub temperature: f32,
    pub max_output_tokens: u32,
    pub model_id: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// First backoff delay; doubles per retry.
    pub backoff_ms: u64,
}

impl Default for CompletionParams {
    fn default() -> Self {
        CompletionParams {
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            model_id: DEFAULT_MODEL_ID.into(),
            timeout_secs: 120,
            max_retries: 3,
            backoff_ms: 500,
        }
    }
}

impl CompletionParams {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        let base_delay = Duration::from_millis(self.backoff_ms);
        RetryPolicy {
            max_retries: self.max_retries,
            base_delay,
            max_delay: base_delay.saturating_mul(32),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend call timed out")]
    Timeout,
    #[error("backend rate limit hit")]
    RateLimited,
    #[error("backend rejected the request: {0}")]
    Rejected(String),
}

impl BackendError {
    pub fn is_retriable(&self) -> bool {
        !matches!(self, BackendError::Rejected(_))
    }
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, BackendError>;

    fn name(&self) -> String;
}

impl<B: LlmBackend + ?Sized> LlmBackend for Box<B> {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, BackendError> {
        (**self).complete(prompt, params)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

impl<B: LlmBackend + ?Sized> LlmBackend for std::sync::Arc<B> {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, BackendError> {
        (**self).complete(prompt, params)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("backend unavailable after {attempts} attempt(s): {last}")]
    BackendUnavailable { attempts: u32, last: BackendError },
    #[error(transparent)]
    Rejected(BackendError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

impl GatewayError {
    pub fn is_backend(&self) -> bool {
        !matches!(self, GatewayError::Parse(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub retries: u32,
}

/// Sends the prompt, retrying transient failures with exponential backoff.
pub fn complete(
    prompt: &RenderedPrompt,
    params: &CompletionParams,
    backend: &dyn LlmBackend,
) -> Result<Completion, GatewayError> {
    complete_text(&prompt.text, params, backend)
}

pub fn complete_text(
    prompt: &str,
    params: &CompletionParams,
    backend: &dyn LlmBackend,
) -> Result<Completion, GatewayError> {
    let out = with_retries(&params.retry_policy(), BackendError::is_retriable, || {
        backend.complete(prompt, params)
    });
    match out {
        Ok(r) => Ok(Completion {
            text: r.value,
            retries: r.retries,
        }),
        Err((last @ BackendError::Rejected(_), _)) => Err(GatewayError::Rejected(last)),
        Err((last, attempts)) => {
            tracing::warn!(backend = %backend.name(), attempts, error = %last, "completion failed");
            Err(GatewayError::BackendUnavailable { attempts, last })
        }
    }
}
