//! Query-time context assembly: embed the query, take the top-k chunks and
//! drop the least relevant ones until the prompt fits the token budget.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{embed_texts, EmbedError, EmbeddingBackend};
use crate::index::{IndexError, ScoredChunk, VectorIndex};

pub const DEFAULT_TOP_K: usize = 20;
pub const DEFAULT_BUDGET_TOKENS: usize = 4000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("query embedding failed: {0}")]
    Embed(#[from] EmbedError),
}

impl RetrievalError {
    pub fn is_backend_unavailable(&self) -> bool {
        matches!(
            self,
            RetrievalError::Embed(EmbedError::BackendUnavailable(_))
                | RetrievalError::Index(IndexError::Embed(EmbedError::BackendUnavailable(_)))
        )
    }
}

/// Token counting strategy for budget enforcement.
pub trait TokenEstimator: Send + Sync {
    fn estimate(&self, text: &str) -> usize;
}

/// `ceil(chars / 4)`.
#[derive(Debug, Default, Clone, Copy)]
pub struct CharRatioEstimator;

impl TokenEstimator for CharRatioEstimator {
    fn estimate(&self, text: &str) -> usize {
        estimate_tokens(text)
    }
}

pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalParams {
    pub top_k: usize,
    pub budget_tokens: usize,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        RetrievalParams {
            top_k: DEFAULT_TOP_K,
            budget_tokens: DEFAULT_BUDGET_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub entries: Vec<ScoredChunk>,
    pub formatted_text: String,
    /// Overhead plus the formatted context, by the configured estimator.
    pub estimated_tokens: usize,
    /// Set when even the single most relevant chunk exceeds the budget.
    pub over_budget: bool,
}

impl ContextWindow {
    pub fn from_entries(
        entries: Vec<ScoredChunk>,
        prompt_overhead_tokens: usize,
        estimator: &dyn TokenEstimator,
    ) -> Self {
        let formatted_text = format_sources(&entries);
        let estimated_tokens = prompt_overhead_tokens + estimator.estimate(&formatted_text);
        ContextWindow {
            entries,
            formatted_text,
            estimated_tokens,
            over_budget: false,
        }
    }

    pub fn sources(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.chunk.source_number).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Renders each entry as `Content: {text}\nSource: {n}\n`, blocks separated
/// by a blank line, in the order given.
pub fn format_sources(entries: &[ScoredChunk]) -> String {
    entries
        .iter()
        .map(|e| {
            format!(
                "Content: {}\nSource: {}\n",
                e.chunk.text, e.chunk.source_number
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn build_context(
    index: &VectorIndex,
    query_text: &str,
    backend: &dyn EmbeddingBackend,
    params: RetrievalParams,
    prompt_overhead_tokens: usize,
    estimator: &dyn TokenEstimator,
) -> Result<ContextWindow, RetrievalError> {
    if index.is_empty() {
        return Err(IndexError::EmptyIndex.into());
    }
    let query = embed_texts(&[query_text.to_string()], backend)?.remove(0);
    let ranked = index.top_k(&query, params.top_k)?;
    Ok(trim_to_budget(
        ranked,
        prompt_overhead_tokens,
        params.budget_tokens,
        estimator,
    ))
}

/// Drops the lowest-ranked entry while the estimate exceeds the budget and
/// more than one entry remains. `ranked` must be in retrieval order, so the
/// last entry is always the least relevant one.
pub fn trim_to_budget(
    mut ranked: Vec<ScoredChunk>,
    prompt_overhead_tokens: usize,
    budget_tokens: usize,
    estimator: &dyn TokenEstimator,
) -> ContextWindow {
    loop {
        let window = ContextWindow::from_entries(ranked.clone(), prompt_overhead_tokens, estimator);
        if window.estimated_tokens <= budget_tokens {
            return window;
        }
        if ranked.len() <= 1 {
            tracing::warn!(
                tokens = window.estimated_tokens,
                budget_tokens,
                "single retrieved chunk exceeds the token budget"
            );
            return ContextWindow {
                over_budget: true,
                ..window
            };
        }
        ranked.pop();
    }
}
