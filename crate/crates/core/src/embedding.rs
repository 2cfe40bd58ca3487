//! Embedding backends and cosine similarity.

use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::retry::{with_retries, RetryPolicy};
use crate::text::word_tokens;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("embedding batch is empty")]
    EmptyBatch,
    #[error("embedding backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("backend returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error("embedding contains non-finite values")]
    NonFinite,
}

impl EmbedError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, EmbedError::BackendUnavailable(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cosine similarity of a zero vector is undefined")]
    ZeroVector,
}

/// `dot(a, b) / (|a| |b|)`, accumulated in f64 and clamped to [-1, 1].
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, SimilarityError> {
    if a.dim() != b.dim() {
        return Err(SimilarityError::DimensionMismatch(a.dim(), b.dim()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    let dot: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

pub trait EmbeddingBackend: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    /// Short identifier recorded alongside indexes.
    fn name(&self) -> String;
}

/// Embeds a batch and checks the backend contract: one finite vector per
/// text, all of one dimension, order preserved.
pub fn embed_texts(
    texts: &[String],
    backend: &dyn EmbeddingBackend,
) -> Result<Vec<EmbeddingVector>, EmbedError> {
    if texts.is_empty() {
        return Err(EmbedError::EmptyBatch);
    }
    let vectors = backend.embed(texts)?;
    if vectors.len() != texts.len() {
        return Err(EmbedError::CountMismatch {
            expected: texts.len(),
            got: vectors.len(),
        });
    }
    let dim = vectors[0].dim();
    for v in &vectors {
        if v.dim() != dim {
            return Err(EmbedError::DimensionMismatch {
                expected: dim,
                got: v.dim(),
            });
        }
        if v.values.iter().any(|x| !x.is_finite()) {
            return Err(EmbeddingVector::new(v.values.clone()).unwrap_err());
        }
    }
    Ok(vectors)
}

pub const DEFAULT_HASH_DIM: usize = 256;

/// Deterministic offline embedder: signed feature hashing of lowercase word
/// tokens, L2-normalised. Texts registered as sentinels map to fixed vectors.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    sentinels: HashMap<String, Vec<f32>>,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(DEFAULT_HASH_DIM)
    }
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder {
            dim,
            sentinels: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Pins `text` to `values`; `values` must have this embedder's dimension.
    pub fn with_sentinel(mut self, text: impl Into<String>, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), self.dim, "sentinel dimension");
        self.sentinels.insert(text.into(), values);
        self
    }

    fn embed_one(&self, text: &str) -> Vec<f32> {
        if let Some(v) = self.sentinels.get(text) {
            return v.clone();
        }
        let mut acc = vec![0f64; self.dim];
        let tokens = word_tokens(text);
        if tokens.is_empty() {
            // keep the vector non-zero so cosine stays defined
            let (slot, _) = self.bucket(text);
            acc[slot] = 1.0;
        }
        for token in &tokens {
            let (slot, sign) = self.bucket(token);
            acc[slot] += sign;
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            // every token cancelled out
            let (slot, _) = self.bucket(text);
            acc[slot] = 1.0;
            return acc.into_iter().map(|v| v as f32).collect();
        }
        acc.into_iter().map(|v| (v / norm) as f32).collect()
    }

    fn bucket(&self, token: &str) -> (usize, f64) {
        let digest = Sha256::digest(token.as_bytes());
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        let slot = (u64::from_le_bytes(head) % self.dim as u64) as usize;
        let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
        (slot, sign)
    }
}

impl EmbeddingBackend for HashEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        Ok(texts
            .iter()
            .map(|t| EmbeddingVector {
                values: self.embed_one(t),
            })
            .collect())
    }

    fn name(&self) -> String {
        format!("hash-{}", self.dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpEmbedderConfig {
    /// Base URL of an OpenAI-compatible API, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub batch_size: usize,
}

impl Default for HttpEmbedderConfig {
    fn default() -> Self {
        HttpEmbedderConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "text-embedding-ada-002".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60,
            max_retries: 3,
            batch_size: 64,
        }
    }
}

/// Client for an OpenAI-style `POST {base_url}/embeddings` endpoint.
pub struct HttpEmbedder {
    config: HttpEmbedderConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f32>,
}

impl HttpEmbedder {
    pub fn new(config: HttpEmbedderConfig) -> Result<Self, EmbedError> {
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| EmbedError::BackendUnavailable(e.to_string()))?;
        let retry = RetryPolicy {
            max_retries: config.max_retries,
            ..RetryPolicy::default()
        };
        Ok(HttpEmbedder {
            config,
            api_key,
            client,
            retry,
        })
    }

    pub fn with_retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    fn post_batch(&self, batch: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let url = format!("{}/embeddings", self.config.base_url.trim_end_matches('/'));
        let mut req = self.client.post(&url).json(&EmbeddingRequest {
            model: &self.config.model,
            input: batch,
        });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| EmbedError::BackendUnavailable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(EmbedError::BackendUnavailable(format!("HTTP {status}")));
        }
        let mut body: EmbeddingResponse = resp
            .json()
            .map_err(|e| EmbedError::BackendUnavailable(format!("bad response body: {e}")))?;
        body.data.sort_by_key(|d| d.index.unwrap_or(usize::MAX));
        body.data
            .into_iter()
            .map(|d| EmbeddingVector::new(d.embedding))
            .collect()
    }
}

impl EmbeddingBackend for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.config.batch_size.max(1)) {
            let vectors = with_retries(&self.retry, EmbedError::is_retriable, || {
                self.post_batch(batch)
            })
            .map_err(|(e, _)| e)?
            .value;
            out.extend(vectors);
        }
        Ok(out)
    }

    fn name(&self) -> String {
        format!("http:{}", self.config.model)
    }
}
