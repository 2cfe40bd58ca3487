//! Report loading and fixed-size character chunking.
//!
//! A [`Document`] is a list of 1-based pages. Its canonical text is the page
//! texts joined by a single `\n`; every offset in a [`DocumentChunk`] is a
//! character (Unicode scalar) offset into that canonical text.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_CHUNK_SIZE: usize = 500;
pub const DEFAULT_CHUNK_OVERLAP: usize = 20;

/// Delimiter between pages in `page_delimited_text` input.
pub const PAGE_DELIMITER: char = '\u{000C}';

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IngestError {
    #[error("document is empty")]
    EmptyDocument,
    #[error("unsupported document format: {0}")]
    UnsupportedFormat(String),
    #[error("text extraction failed: {0}")]
    ExtractionFailure(String),
    #[error("invalid chunk parameters: chunk_size={chunk_size}, overlap={overlap}")]
    InvalidChunkParams { chunk_size: usize, overlap: usize },
    #[error("invalid document: {0}")]
    InvalidDocument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentFormat {
    PlainText,
    PageDelimitedText,
    Pdf,
}

impl DocumentFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            DocumentFormat::PlainText => "plain_text",
            DocumentFormat::PageDelimitedText => "page_delimited_text",
            DocumentFormat::Pdf => "pdf",
        }
    }
}

impl fmt::Display for DocumentFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DocumentFormat {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "plain_text" | "plain" | "text" | "txt" => Ok(DocumentFormat::PlainText),
            "page_delimited_text" | "pages" => Ok(DocumentFormat::PageDelimitedText),
            "pdf" => Ok(DocumentFormat::Pdf),
            other => Err(IngestError::UnsupportedFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub page: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    pub pages: Vec<Page>,
}

impl Document {
    /// Builds a document from page texts, numbering pages from 1 and deriving
    /// `doc_id` from the canonical text.
    pub fn from_pages<I, S>(pages: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let pages: Vec<Page> = pages
            .into_iter()
            .enumerate()
            .map(|(i, text)| Page {
                page: i as u32 + 1,
                text: text.into(),
            })
            .collect();
        let mut doc = Document {
            doc_id: String::new(),
            metadata: BTreeMap::new(),
            pages,
        };
        doc.doc_id = content_id(&doc.canonical_text());
        doc
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for (i, page) in self.pages.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&page.text);
        }
        out
    }

    /// Character offset at which each page starts in the canonical text.
    pub fn page_starts(&self) -> Vec<(usize, u32)> {
        let mut starts = Vec::with_capacity(self.pages.len());
        let mut offset = 0usize;
        for page in &self.pages {
            starts.push((offset, page.page));
            offset += page.text.chars().count() + 1;
        }
        starts
    }

    /// Checks page numbering and the content-hash identifier.
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.pages.is_empty() {
            return Err(IngestError::EmptyDocument);
        }
        for (i, page) in self.pages.iter().enumerate() {
            if page.page != i as u32 + 1 {
                return Err(IngestError::InvalidDocument(format!(
                    "page {} found at position {}",
                    page.page,
                    i + 1
                )));
            }
        }
        let expected = content_id(&self.canonical_text());
        if self.doc_id != expected {
            return Err(IngestError::InvalidDocument(format!(
                "doc_id {} does not match content hash {}",
                self.doc_id, expected
            )));
        }
        Ok(())
    }
}

/// Content-hash identifier of a canonical text (first 16 bytes of SHA-256, hex).
pub fn content_id(canonical_text: &str) -> String {
    let digest = Sha256::digest(canonical_text.as_bytes());
    hex::encode(&digest[..16])
}

/// Turns raw bytes of a binary format into page texts.
pub trait TextExtractor: Send + Sync {
    fn extract_pages(&self, raw: &[u8]) -> Result<Vec<String>, String>;
}

/// Default extractor: reads the bytes as UTF-8 text, one page per form feed.
///
/// Real PDF support plugs in through [`TextExtractor`].
#[derive(Debug, Default, Clone, Copy)]
pub struct PassThroughExtractor;

impl TextExtractor for PassThroughExtractor {
    fn extract_pages(&self, raw: &[u8]) -> Result<Vec<String>, String> {
        let text = std::str::from_utf8(raw).map_err(|e| format!("input is not UTF-8: {e}"))?;
        Ok(text.split(PAGE_DELIMITER).map(str::to_string).collect())
    }
}

pub fn load_document(
    raw: &[u8],
    format: DocumentFormat,
    extractor: &dyn TextExtractor,
) -> Result<Document, IngestError> {
    if raw.is_empty() {
        return Err(IngestError::EmptyDocument);
    }
    let pages: Vec<String> = match format {
        DocumentFormat::PlainText => vec![decode_utf8(raw)?.to_string()],
        DocumentFormat::PageDelimitedText => decode_utf8(raw)?
            .split(PAGE_DELIMITER)
            .map(str::to_string)
            .collect(),
        DocumentFormat::Pdf => {
            let pages = extractor
                .extract_pages(raw)
                .map_err(IngestError::ExtractionFailure)?;
            if pages.iter().all(|p| p.trim().is_empty()) {
                return Err(IngestError::ExtractionFailure(
                    "extractor reported no text".into(),
                ));
            }
            pages
        }
    };
    Ok(Document::from_pages(pages))
}

fn decode_utf8(raw: &[u8]) -> Result<&str, IngestError> {
    std::str::from_utf8(raw)
        .map_err(|e| IngestError::ExtractionFailure(format!("input is not UTF-8: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkParams {
    pub chunk_size: usize,
    pub overlap: usize,
}

impl Default for ChunkParams {
    fn default() -> Self {
        ChunkParams {
            chunk_size: DEFAULT_CHUNK_SIZE,
            overlap: DEFAULT_CHUNK_OVERLAP,
        }
    }
}

impl ChunkParams {
    pub fn new(chunk_size: usize, overlap: usize) -> Result<Self, IngestError> {
        let params = ChunkParams {
            chunk_size,
            overlap,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.chunk_size == 0 || self.overlap >= self.chunk_size {
            return Err(IngestError::InvalidChunkParams {
                chunk_size: self.chunk_size,
                overlap: self.overlap,
            });
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.chunk_size - self.overlap
    }

    /// Number of windows needed to cover `len` characters.
    pub fn window_count(&self, len: usize) -> usize {
        if len == 0 {
            0
        } else if len <= self.chunk_size {
            1
        } else {
            (len - self.chunk_size).div_ceil(self.stride()) + 1
        }
    }
}

/// A source-numbered character window of the canonical document text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentChunk {
    #[serde(rename = "source")]
    pub source_number: u32,
    #[serde(rename = "page", default)]
    pub page_number: u32,
    #[serde(rename = "start", default)]
    pub char_start: usize,
    #[serde(rename = "end", default)]
    pub char_end: usize,
    pub text: String,
}

impl DocumentChunk {
    pub fn char_len(&self) -> usize {
        self.char_end - self.char_start
    }
}

/// Splits the canonical text into windows starting at multiples of
/// `chunk_size - overlap`. The last window may be shorter. An empty canonical
/// text yields no chunks.
pub fn chunk_document(
    doc: &Document,
    params: ChunkParams,
) -> Result<Vec<DocumentChunk>, IngestError> {
    params.validate()?;
    let text = doc.canonical_text();
    // byte offset of every char boundary, plus the end
    let boundaries: Vec<usize> = text
        .char_indices()
        .map(|(b, _)| b)
        .chain(std::iter::once(text.len()))
        .collect();
    let len = boundaries.len() - 1;
    let page_starts = doc.page_starts();

    let count = params.window_count(len);
    let mut chunks = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * params.stride();
        let end = (start + params.chunk_size).min(len);
        chunks.push(DocumentChunk {
            source_number: i as u32,
            page_number: page_at(&page_starts, start),
            char_start: start,
            char_end: end,
            text: text[boundaries[start]..boundaries[end]].to_string(),
        });
    }
    Ok(chunks)
}

fn page_at(page_starts: &[(usize, u32)], offset: usize) -> u32 {
    let idx = page_starts.partition_point(|&(start, _)| start <= offset);
    page_starts[idx.saturating_sub(1)].1
}

/// Writes chunks as JSON lines `{source, page, start, end, text}`.
pub fn chunks_to_jsonl(chunks: &[DocumentChunk]) -> String {
    let mut out = String::new();
    for chunk in chunks {
        out.push_str(&serde_json::to_string(chunk).expect("chunk serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str) -> Document {
        Document::from_pages([text])
    }

    #[test]
    fn plain_text_is_one_page() {
        let d = load_document(b"hello", DocumentFormat::PlainText, &PassThroughExtractor).unwrap();
        assert_eq!(d.pages.len(), 1);
        assert_eq!(d.pages[0].page, 1);
        assert_eq!(d.pages[0].text, "hello");
    }

    #[test]
    fn form_feed_splits_pages() {
        let d = load_document(
            b"a\x0Cb",
            DocumentFormat::PageDelimitedText,
            &PassThroughExtractor,
        )
        .unwrap();
        let pages: Vec<_> = d.pages.iter().map(|p| (p.page, p.text.as_str())).collect();
        assert_eq!(pages, vec![(1, "a"), (2, "b")]);
        assert_eq!(d.canonical_text(), "a\nb");
    }

    #[test]
    fn empty_input_rejected() {
        for format in [
            DocumentFormat::PlainText,
            DocumentFormat::PageDelimitedText,
            DocumentFormat::Pdf,
        ] {
            assert_eq!(
                load_document(b"", format, &PassThroughExtractor),
                Err(IngestError::EmptyDocument)
            );
        }
    }

    #[test]
    fn unknown_format_name() {
        assert!(matches!(
            "docx".parse::<DocumentFormat>(),
            Err(IngestError::UnsupportedFormat(_))
        ));
        assert_eq!("pdf".parse::<DocumentFormat>(), Ok(DocumentFormat::Pdf));
    }

    struct Blank;
    impl TextExtractor for Blank {
        fn extract_pages(&self, _: &[u8]) -> Result<Vec<String>, String> {
            Ok(vec!["  ".into(), String::new()])
        }
    }

    #[test]
    fn extractor_without_text_fails() {
        assert!(matches!(
            load_document(b"%PDF-1.7", DocumentFormat::Pdf, &Blank),
            Err(IngestError::ExtractionFailure(_))
        ));
    }

    #[test]
    fn invalid_utf8_is_extraction_failure() {
        assert!(matches!(
            load_document(
                &[0xff, 0xfe],
                DocumentFormat::PlainText,
                &PassThroughExtractor
            ),
            Err(IngestError::ExtractionFailure(_))
        ));
    }

    #[test]
    fn exact_chunk_size_gives_one_chunk() {
        let chunks = chunk_document(&doc(&"x".repeat(500)), ChunkParams::default()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!((chunks[0].char_start, chunks[0].char_len()), (0, 500));
    }

    #[test]
    fn boundary_980_and_981() {
        let chunks = chunk_document(&doc(&"y".repeat(980)), ChunkParams::default()).unwrap();
        let starts: Vec<_> = chunks.iter().map(|c| c.char_start).collect();
        assert_eq!(starts, vec![0, 480]);
        assert_eq!(chunks[1].char_len(), 500);

        let chunks = chunk_document(&doc(&"y".repeat(981)), ChunkParams::default()).unwrap();
        let starts: Vec<_> = chunks.iter().map(|c| c.char_start).collect();
        assert_eq!(starts, vec![0, 480, 960]);
        assert_eq!(chunks[2].char_len(), 21);
    }

    #[test]
    fn bad_params_rejected() {
        let d = doc("abc");
        for (size, overlap) in [(0, 0), (10, 10), (10, 11)] {
            assert_eq!(
                chunk_document(
                    &d,
                    ChunkParams {
                        chunk_size: size,
                        overlap
                    }
                ),
                Err(IngestError::InvalidChunkParams {
                    chunk_size: size,
                    overlap
                })
            );
        }
    }

    #[test]
    fn chunk_page_is_page_of_first_char() {
        // canonical: "aaaa\nbbbb\ncccc" (page starts 0, 5, 10)
        let d = Document::from_pages(["aaaa", "bbbb", "cccc"]);
        let chunks = chunk_document(&d, ChunkParams::new(4, 1).unwrap()).unwrap();
        let pages: Vec<_> = chunks
            .iter()
            .map(|c| (c.char_start, c.page_number))
            .collect();
        assert_eq!(pages, vec![(0, 1), (3, 1), (6, 2), (9, 2), (12, 3)]);
    }

    #[test]
    fn multibyte_offsets_are_characters() {
        let d = doc("ééééé");
        let chunks = chunk_document(&d, ChunkParams::new(3, 1).unwrap()).unwrap();
        assert_eq!(chunks[0].text, "ééé");
        assert_eq!(chunks[1].text, "ééé");
        assert_eq!(chunks[1].char_start, 2);
    }

    #[test]
    fn empty_text_has_no_chunks() {
        let d = Document::from_pages([""]);
        assert!(chunk_document(&d, ChunkParams::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn doc_id_is_content_hash() {
        let a = Document::from_pages(["same text"]);
        let b = Document::from_pages(["same text"]).with_metadata("title", "x");
        assert_eq!(a.doc_id, b.doc_id);
        assert_eq!(a.doc_id.len(), 32);
        a.validate().unwrap();
        let mut tampered = a.clone();
        tampered.pages[0].text.push('!');
        assert!(tampered.validate().is_err());
    }

    #[test]
    fn jsonl_dump_field_names() {
        let chunks = chunk_document(&doc("abc"), ChunkParams::default()).unwrap();
        assert_eq!(
            chunks_to_jsonl(&chunks),
            "{\"source\":0,\"page\":1,\"start\":0,\"end\":3,\"text\":\"abc\"}\n"
        );
    }
}
