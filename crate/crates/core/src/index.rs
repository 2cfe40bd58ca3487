//! Flat per-report vector index with exact cosine top-k and a checksummed
//! on-disk format.
//!
//! File layout (little endian):
//!
//! ```text
//! magic    8 bytes   "TCFDVIX1"
//! dim      u32
//! count    u64
//! entries  count x (source u32, dim x f32)
//! json_len u64
//! json     {doc_id, embedder, chunks: [DocumentChunk]}
//! sha256   32 bytes over everything above
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedding::{
    cosine_similarity, embed_texts, EmbedError, EmbeddingBackend, EmbeddingVector, SimilarityError,
};
use crate::ingestion::DocumentChunk;

const MAGIC: &[u8; 8] = b"TCFDVIX1";
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("index is empty")]
    EmptyIndex,
    #[error("dimension mismatch: index has {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero vector for source {0:?}")]
    ZeroVector(Option<u32>),
    #[error("duplicate source number {0}")]
    DuplicateSource(u32),
    #[error("embedding failed: {0}")]
    Embed(#[from] EmbedError),
    #[error("i/o failure: {0}")]
    IoFailure(String),
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk: DocumentChunk,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    doc_id: String,
    embedder: String,
    dim: usize,
    entries: BTreeMap<u32, EmbeddingVector>,
    chunks: BTreeMap<u32, DocumentChunk>,
}

#[derive(Serialize, Deserialize)]
struct IndexMeta {
    doc_id: String,
    embedder: String,
    chunks: Vec<DocumentChunk>,
}

impl VectorIndex {
    /// Embeds every chunk with `backend`, `batch_size` texts per call.
    pub fn build(
        doc_id: impl Into<String>,
        chunks: Vec<DocumentChunk>,
        backend: &dyn EmbeddingBackend,
        batch_size: usize,
    ) -> Result<Self, IndexError> {
        let mut vectors = Vec::with_capacity(chunks.len());
        for batch in chunks.chunks(batch_size.max(1)) {
            let texts: Vec<String> = batch.iter().map(|c| c.text.clone()).collect();
            vectors.extend(embed_texts(&texts, backend)?);
        }
        let mut index = Self::from_parts(doc_id, chunks.into_iter().zip(vectors))?;
        index.embedder = backend.name();
        Ok(index)
    }

    pub fn from_parts(
        doc_id: impl Into<String>,
        parts: impl IntoIterator<Item = (DocumentChunk, EmbeddingVector)>,
    ) -> Result<Self, IndexError> {
        let mut index = VectorIndex {
            doc_id: doc_id.into(),
            embedder: String::new(),
            dim: 0,
            entries: BTreeMap::new(),
            chunks: BTreeMap::new(),
        };
        for (chunk, vector) in parts {
            index.insert(chunk, vector)?;
        }
        Ok(index)
    }

    pub fn with_embedder_name(mut self, name: impl Into<String>) -> Self {
        self.embedder = name.into();
        self
    }

    fn insert(&mut self, chunk: DocumentChunk, vector: EmbeddingVector) -> Result<(), IndexError> {
        let source = chunk.source_number;
        if self.entries.is_empty() {
            self.dim = vector.dim();
        } else if vector.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: vector.dim(),
            });
        }
        if vector.is_zero() {
            return Err(IndexError::ZeroVector(Some(source)));
        }
        if self.entries.insert(source, vector).is_some() {
            return Err(IndexError::DuplicateSource(source));
        }
        self.chunks.insert(source, chunk);
        Ok(())
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    pub fn embedder(&self) -> &str {
        &self.embedder
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn chunk(&self, source: u32) -> Option<&DocumentChunk> {
        self.chunks.get(&source)
    }

    pub fn chunks(&self) -> impl Iterator<Item = &DocumentChunk> {
        self.chunks.values()
    }

    pub fn vector(&self, source: u32) -> Option<&EmbeddingVector> {
        self.entries.get(&source)
    }

    pub fn contains(&self, source: u32) -> bool {
        self.entries.contains_key(&source)
    }

    /// The `k` most similar chunks, by descending cosine score with ties
    /// broken by ascending source number. `k = 0` yields an empty list.
    pub fn top_k(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<ScoredChunk>, IndexError> {
        if self.entries.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        let mut scored = Vec::with_capacity(self.entries.len());
        for (&source, vector) in &self.entries {
            let score = cosine_similarity(query, vector).map_err(|e| match e {
                SimilarityError::ZeroVector => IndexError::ZeroVector(None),
                SimilarityError::DimensionMismatch(a, b) => IndexError::DimensionMismatch {
                    expected: b,
                    got: a,
                },
            })?;
            scored.push((source, score));
        }
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        Ok(scored
            .into_iter()
            .take(k)
            .map(|(source, score)| ScoredChunk {
                chunk: self.chunks[&source].clone(),
                score,
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + self.entries.len() * (4 + 4 * self.dim));
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (source, vector) in &self.entries {
            buf.extend_from_slice(&source.to_le_bytes());
            for v in vector.values() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let meta = IndexMeta {
            doc_id: self.doc_id.clone(),
            embedder: self.embedder.clone(),
            chunks: self.chunks.values().cloned().collect(),
        };
        let json = serde_json::to_vec(&meta).expect("index metadata serializes");
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        if bytes.len() < MAGIC.len() + CHECKSUM_LEN {
            return Err(IndexError::CorruptIndex("file too short".into()));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(IndexError::CorruptIndex("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(IndexError::CorruptIndex("bad magic".into()));
        }
        let dim = r.u32()? as usize;
        let count = r.u64()? as usize;
        let mut vectors = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let source = r.u32()?;
            let raw = r.take(dim * 4)?;
            let values = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let vector = EmbeddingVector::new(values)
                .map_err(|e| IndexError::CorruptIndex(e.to_string()))?;
            vectors.push((source, vector));
        }
        let json_len = r.u64()? as usize;
        let meta: IndexMeta = serde_json::from_slice(r.take(json_len)?)
            .map_err(|e| IndexError::CorruptIndex(format!("metadata: {e}")))?;
        if r.pos != body.len() {
            return Err(IndexError::CorruptIndex("trailing bytes".into()));
        }
        let mut chunks: BTreeMap<u32, DocumentChunk> = meta
            .chunks
            .into_iter()
            .map(|c| (c.source_number, c))
            .collect();
        let mut parts = Vec::with_capacity(vectors.len());
        for (source, vector) in vectors {
            let chunk = chunks
                .remove(&source)
                .ok_or_else(|| IndexError::CorruptIndex(format!("no chunk for source {source}")))?;
            parts.push((chunk, vector));
        }
        if !chunks.is_empty() {
            return Err(IndexError::CorruptIndex("chunks without vectors".into()));
        }
        let mut index = Self::from_parts(meta.doc_id, parts)
            .map_err(|e| IndexError::CorruptIndex(e.to_string()))?;
        index.embedder = meta.embedder;
        if index.entries.is_empty() {
            index.dim = dim;
        }
        Ok(index)
    }

    /// Writes the index next to `path` and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let tmp = path.with_extension("bin.tmp");
        let io = |e: std::io::Error| IndexError::IoFailure(format!("{}: {e}", path.display()));
        let mut file = fs::File::create(&tmp).map_err(io)?;
        file.write_all(&self.to_bytes()).map_err(io)?;
        file.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let bytes = fs::read(path)
            .map_err(|e| IndexError::IoFailure(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.buf.len())
            .ok_or_else(|| IndexError::CorruptIndex("unexpected end of file".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(a))
    }
}
