//! Filesystem workspace.
//!
//! ```text
//! {root}/catalog.json              doc_id -> metadata and file checksums
//! {root}/guidelines.json           guideline versions
//! {root}/feedback.jsonl            feedback log
//! {root}/{doc_id}/document.json
//! {root}/{doc_id}/index.bin
//! {root}/{doc_id}/analyses/{analysis_id}.json
//! {root}/{doc_id}/answers/{answer_key}.json
//! ```
//!
//! Every file a document owns is listed in the catalog with its SHA-256, and
//! reads verify it. Files and the catalog are replaced by rename, never
//! written in place.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{CustomAnswer, ReportAnalysis};
use crate::index::VectorIndex;
use crate::ingestion::Document;

pub const CATALOG_FILE: &str = "catalog.json";
pub const GUIDELINES_FILE: &str = "guidelines.json";
pub const FEEDBACK_FILE: &str = "feedback.jsonl";
const DOCUMENT_FILE: &str = "document.json";
const INDEX_FILE: &str = "index.bin";
const ANALYSES_DIR: &str = "analyses";
const ANSWERS_DIR: &str = "answers";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PersistError {
    #[error("i/o failure on {path}: {message}")]
    IoFailure { path: String, message: String },
    #[error("{0} not found")]
    NotFound(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("checksum mismatch for {0}")]
    ChecksumMismatch(String),
    #[error("corrupt file {path}: {message}")]
    Corrupt { path: String, message: String },
    #[error("invalid document: {0}")]
    InvalidDocument(String),
}

fn io_err(path: &Path, e: impl ToString) -> PersistError {
    PersistError::IoFailure {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct Catalog {
    documents: BTreeMap<String, CatalogEntry>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct CatalogEntry {
    metadata: BTreeMap<String, String>,
    pages: usize,
    /// Path relative to the document directory -> SHA-256 hex.
    files: BTreeMap<String, String>,
}

impl CatalogEntry {
    fn analyses(&self) -> Vec<String> {
        self.keys_under(ANALYSES_DIR)
    }

    fn answers(&self) -> Vec<String> {
        self.keys_under(ANSWERS_DIR)
    }

    fn keys_under(&self, dir: &str) -> Vec<String> {
        let prefix = format!("{dir}/");
        self.files
            .keys()
            .filter_map(|k| k.strip_prefix(&prefix)?.strip_suffix(".json"))
            .map(String::from)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentSummary {
    pub doc_id: String,
    pub metadata: BTreeMap<String, String>,
    pub pages: usize,
    pub indexed: bool,
    pub analyses: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    Missing,
    Orphan,
    ChecksumMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckIssue {
    pub path: String,
    pub problem: Problem,
}

/// Everything a piece of feedback needs to know about the answer it targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedAnswer {
    pub doc_id: String,
    pub question_index: Option<u8>,
    pub prompt: String,
    pub response: String,
    pub company_name: String,
}

#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    catalog: Mutex<Catalog>,
}

impl Workspace {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, PersistError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| io_err(&root, e))?;
        let path = root.join(CATALOG_FILE);
        let catalog = match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| PersistError::Corrupt {
                path: path.display().to_string(),
                message: e.to_string(),
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Catalog::default(),
            Err(e) => return Err(io_err(&path, e)),
        };
        Ok(Workspace {
            root,
            catalog: Mutex::new(catalog),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn guidelines_path(&self) -> PathBuf {
        self.root.join(GUIDELINES_FILE)
    }

    pub fn feedback_path(&self) -> PathBuf {
        self.root.join(FEEDBACK_FILE)
    }

    fn doc_dir(&self, doc_id: &str) -> PathBuf {
        self.root.join(doc_id)
    }

    fn save_catalog(&self, catalog: &Catalog) -> Result<(), PersistError> {
        let path = self.root.join(CATALOG_FILE);
        let bytes = serde_json::to_vec_pretty(catalog).expect("catalog serializes");
        write_atomic(&path, &bytes).map_err(|e| io_err(&path, e))
    }

    /// Writes one document-owned file and records its checksum.
    fn put_file(
        &self,
        catalog: &mut Catalog,
        doc_id: &str,
        rel: &str,
        bytes: &[u8],
    ) -> Result<(), PersistError> {
        let path = self.doc_dir(doc_id).join(rel);
        write_atomic(&path, bytes).map_err(|e| io_err(&path, e))?;
        let mut updated = catalog.clone();
        updated
            .documents
            .get_mut(doc_id)
            .ok_or_else(|| PersistError::NotFound(format!("document {doc_id}")))?
            .files
            .insert(rel.to_string(), sha256_hex(bytes));
        self.save_catalog(&updated)?;
        *catalog = updated;
        Ok(())
    }

    fn read_file(&self, doc_id: &str, rel: &str) -> Result<Vec<u8>, PersistError> {
        let expected = {
            let catalog = self.catalog.lock().expect("catalog lock");
            let entry = catalog
                .documents
                .get(doc_id)
                .ok_or_else(|| PersistError::NotFound(format!("document {doc_id}")))?;
            entry
                .files
                .get(rel)
                .cloned()
                .ok_or_else(|| PersistError::NotFound(format!("{doc_id}/{rel}")))?
        };
        let path = self.doc_dir(doc_id).join(rel);
        let bytes = std::fs::read(&path).map_err(|e| io_err(&path, e))?;
        if sha256_hex(&bytes) != expected {
            return Err(PersistError::ChecksumMismatch(format!("{doc_id}/{rel}")));
        }
        Ok(bytes)
    }

    fn decode<T: serde::de::DeserializeOwned>(
        &self,
        doc_id: &str,
        rel: &str,
        bytes: &[u8],
    ) -> Result<T, PersistError> {
        serde_json::from_slice(bytes).map_err(|e| PersistError::Corrupt {
            path: format!("{doc_id}/{rel}"),
            message: e.to_string(),
        })
    }

    /// Stores a document. Returns false when the same content is already
    /// stored; the existing copy is kept.
    pub fn put_document(&self, doc: &Document) -> Result<bool, PersistError> {
        doc.validate()
            .map_err(|e| PersistError::InvalidDocument(e.to_string()))?;
        let mut catalog = self.catalog.lock().expect("catalog lock");
        if catalog.documents.contains_key(&doc.doc_id) {
            return Ok(false);
        }
        let mut updated = catalog.clone();
        updated.documents.insert(
            doc.doc_id.clone(),
            CatalogEntry {
                metadata: doc.metadata.clone(),
                pages: doc.pages.len(),
                files: BTreeMap::new(),
            },
        );
        let bytes = serde_json::to_vec_pretty(doc).expect("document serializes");
        self.put_file(&mut updated, &doc.doc_id, DOCUMENT_FILE, &bytes)?;
        *catalog = updated;
        Ok(true)
    }

    pub fn has_document(&self, doc_id: &str) -> bool {
        self.catalog
            .lock()
            .expect("catalog lock")
            .documents
            .contains_key(doc_id)
    }

    pub fn get_document(&self, doc_id: &str) -> Result<Document, PersistError> {
        let bytes = self.read_file(doc_id, DOCUMENT_FILE)?;
        self.decode(doc_id, DOCUMENT_FILE, &bytes)
    }

    pub fn list_documents(&self) -> Vec<DocumentSummary> {
        let catalog = self.catalog.lock().expect("catalog lock");
        catalog
            .documents
            .iter()
            .map(|(id, e)| DocumentSummary {
                doc_id: id.clone(),
                metadata: e.metadata.clone(),
                pages: e.pages,
                indexed: e.files.contains_key(INDEX_FILE),
                analyses: e.analyses().len(),
            })
            .collect()
    }

    pub fn put_index(&self, index: &VectorIndex) -> Result<(), PersistError> {
        let mut catalog = self.catalog.lock().expect("catalog lock");
        self.put_file(&mut catalog, index.doc_id(), INDEX_FILE, &index.to_bytes())
    }

    pub fn get_index(&self, doc_id: &str) -> Result<VectorIndex, PersistError> {
        let bytes = self.read_file(doc_id, INDEX_FILE)?;
        VectorIndex::from_bytes(&bytes).map_err(|e| PersistError::Corrupt {
            path: format!("{doc_id}/{INDEX_FILE}"),
            message: e.to_string(),
        })
    }

    /// Analyses are immutable: rewriting an id with different bytes conflicts.
    pub fn put_analysis(&self, analysis: &ReportAnalysis) -> Result<String, PersistError> {
        let id = analysis.analysis_id();
        let rel = format!("{ANALYSES_DIR}/{id}.json");
        let bytes = analysis.to_json().into_bytes();
        self.put_immutable(&analysis.doc_id, &rel, &bytes)?;
        Ok(id)
    }

    fn put_immutable(&self, doc_id: &str, rel: &str, bytes: &[u8]) -> Result<(), PersistError> {
        let mut catalog = self.catalog.lock().expect("catalog lock");
        let entry = catalog
            .documents
            .get(doc_id)
            .ok_or_else(|| PersistError::NotFound(format!("document {doc_id}")))?;
        if let Some(existing) = entry.files.get(rel) {
            if *existing == sha256_hex(bytes) {
                return Ok(());
            }
            return Err(PersistError::Conflict(format!(
                "{doc_id}/{rel} already exists"
            )));
        }
        self.put_file(&mut catalog, doc_id, rel, bytes)
    }

    /// Analysis ids in chronological order.
    pub fn analysis_history(&self, doc_id: &str) -> Result<Vec<String>, PersistError> {
        let catalog = self.catalog.lock().expect("catalog lock");
        let entry = catalog
            .documents
            .get(doc_id)
            .ok_or_else(|| PersistError::NotFound(format!("document {doc_id}")))?;
        // ids are fixed-width UTC timestamps, so lexical order is chronological
        Ok(entry.analyses())
    }

    pub fn get_analysis_bytes(&self, doc_id: &str, id: &str) -> Result<Vec<u8>, PersistError> {
        self.read_file(doc_id, &format!("{ANALYSES_DIR}/{id}.json"))
    }

    pub fn get_analysis(&self, doc_id: &str, id: &str) -> Result<ReportAnalysis, PersistError> {
        let rel = format!("{ANALYSES_DIR}/{id}.json");
        let bytes = self.read_file(doc_id, &rel)?;
        self.decode(doc_id, &rel, &bytes)
    }

    pub fn get_latest_analysis(&self, doc_id: &str) -> Result<ReportAnalysis, PersistError> {
        let id = self
            .analysis_history(doc_id)?
            .pop()
            .ok_or_else(|| PersistError::NotFound(format!("analysis of {doc_id}")))?;
        self.get_analysis(doc_id, &id)
    }

    pub fn put_answer(&self, answer: &CustomAnswer) -> Result<String, PersistError> {
        let key = answer.answer_key();
        let rel = format!("{ANSWERS_DIR}/{key}.json");
        let bytes = serde_json::to_vec_pretty(answer).expect("answer serializes");
        self.put_immutable(&answer.doc_id, &rel, &bytes)?;
        Ok(answer.answer_id())
    }

    pub fn get_answer(&self, doc_id: &str, key: &str) -> Result<CustomAnswer, PersistError> {
        let rel = format!("{ANSWERS_DIR}/{key}.json");
        let bytes = self.read_file(doc_id, &rel)?;
        self.decode(doc_id, &rel, &bytes)
    }

    pub fn list_answers(&self, doc_id: &str) -> Result<Vec<String>, PersistError> {
        let catalog = self.catalog.lock().expect("catalog lock");
        let entry = catalog
            .documents
            .get(doc_id)
            .ok_or_else(|| PersistError::NotFound(format!("document {doc_id}")))?;
        Ok(entry.answers())
    }

    /// Looks up an answer id: `{doc}/{analysis_id}/q{n}` or `{doc}/cqa/{key}`.
    pub fn resolve_answer(&self, answer_id: &str) -> Result<ResolvedAnswer, PersistError> {
        let not_found = || PersistError::NotFound(format!("answer {answer_id}"));
        let mut parts = answer_id.splitn(3, '/');
        let (Some(doc_id), Some(middle), Some(last)) = (parts.next(), parts.next(), parts.next())
        else {
            return Err(not_found());
        };
        if middle == "cqa" {
            let a = self.get_answer(doc_id, last)?;
            let company_name = self
                .get_analysis_company(doc_id)
                .unwrap_or_else(|| "unknown".into());
            return Ok(ResolvedAnswer {
                doc_id: doc_id.into(),
                question_index: None,
                prompt: a.prompt,
                response: a.answer.raw,
                company_name,
            });
        }
        let q: u8 = last
            .strip_prefix('q')
            .and_then(|n| n.parse().ok())
            .ok_or_else(not_found)?;
        let analysis = self.get_analysis(doc_id, middle)?;
        let answer = analysis.answers.get(&q).ok_or_else(not_found)?;
        let prompt = analysis
            .traces
            .get(&q)
            .and_then(|t| t.answer_prompt.clone())
            .ok_or_else(not_found)?;
        Ok(ResolvedAnswer {
            doc_id: doc_id.into(),
            question_index: Some(q),
            prompt,
            response: answer.raw.clone(),
            company_name: analysis.basic_info.company_name.clone(),
        })
    }

    fn get_analysis_company(&self, doc_id: &str) -> Option<String> {
        self.get_latest_analysis(doc_id)
            .ok()
            .map(|a| a.basic_info.company_name)
    }

    /// Removes a document. Refused while analyses exist unless `force`.
    pub fn delete_document(&self, doc_id: &str, force: bool) -> Result<(), PersistError> {
        let mut catalog = self.catalog.lock().expect("catalog lock");
        let entry = catalog
            .documents
            .get(doc_id)
            .ok_or_else(|| PersistError::NotFound(format!("document {doc_id}")))?;
        if !force && !entry.analyses().is_empty() {
            return Err(PersistError::Conflict(format!(
                "document {doc_id} has {} analyses",
                entry.analyses().len()
            )));
        }
        let mut updated = catalog.clone();
        updated.documents.remove(doc_id);
        self.save_catalog(&updated)?;
        *catalog = updated;
        let dir = self.doc_dir(doc_id);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        }
        Ok(())
    }

    /// Compares the catalog with the filesystem. Reports, never repairs.
    pub fn check(&self) -> Result<Vec<CheckIssue>, PersistError> {
        let catalog = self.catalog.lock().expect("catalog lock").clone();
        let mut issues = Vec::new();
        for (doc_id, entry) in &catalog.documents {
            for (rel, sum) in &entry.files {
                let path = self.doc_dir(doc_id).join(rel);
                let shown = format!("{doc_id}/{rel}");
                match std::fs::read(&path) {
                    Ok(bytes) if sha256_hex(&bytes) == *sum => {}
                    Ok(_) => issues.push(CheckIssue {
                        path: shown,
                        problem: Problem::ChecksumMismatch,
                    }),
                    Err(_) => issues.push(CheckIssue {
                        path: shown,
                        problem: Problem::Missing,
                    }),
                }
            }
        }
        let top = std::fs::read_dir(&self.root).map_err(|e| io_err(&self.root, e))?;
        let mut names: Vec<_> = top.filter_map(Result::ok).collect();
        names.sort_by_key(|e| e.file_name());
        for dirent in names {
            let name = dirent.file_name().to_string_lossy().into_owned();
            if [CATALOG_FILE, GUIDELINES_FILE, FEEDBACK_FILE].contains(&name.as_str()) {
                continue;
            }
            match catalog.documents.get(&name) {
                None => issues.push(CheckIssue {
                    path: name,
                    problem: Problem::Orphan,
                }),
                Some(entry) => {
                    for rel in files_under(&dirent.path()) {
                        if !entry.files.contains_key(&rel) {
                            issues.push(CheckIssue {
                                path: format!("{name}/{rel}"),
                                problem: Problem::Orphan,
                            });
                        }
                    }
                }
            }
        }
        Ok(issues)
    }
}

/// Relative paths (with `/`) of all files below `dir`, sorted.
fn files_under(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(entries) = std::fs::read_dir(&d) else {
            continue;
        };
        for e in entries.filter_map(Result::ok) {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if let Ok(rel) = p.strip_prefix(dir) {
                let parts: Vec<_> = rel.iter().map(|c| c.to_string_lossy()).collect();
                out.push(parts.join("/"));
            }
        }
    }
    out.sort();
    out
}
