use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingestion::DocumentChunk;

pub const MIN_FRAGMENT_CHARS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("fragment {0:?} is shorter than 3 characters after normalization")]
pub struct FragmentTooShort(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceMatch {
    pub source_number: u32,
    pub page_number: u32,
    /// Character offsets into the chunk text.
    pub matched_span: (usize, usize),
    pub matched_text: String,
    pub query_fragment: String,
}

/// Lowercased text with whitespace runs collapsed to one space and trimmed.
pub fn normalize(text: &str) -> String {
    normalize_mapped(text).into_iter().map(|(c, _)| c).collect()
}

/// Normalized characters paired with the index of the original character
/// they came from.
fn normalize_mapped(text: &str) -> Vec<(char, usize)> {
    let mut out: Vec<(char, usize)> = Vec::new();
    let mut pending_space = None;
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            pending_space.get_or_insert(i);
            continue;
        }
        if let Some(at) = pending_space.take() {
            if !out.is_empty() {
                out.push((' ', at));
            }
        }
        out.extend(c.to_lowercase().map(|l| (l, i)));
    }
    out
}

/// Case-insensitive, whitespace-insensitive search for `fragment` in every
/// chunk, in source order.
pub fn locate_evidence(
    fragment: &str,
    chunks: &[DocumentChunk],
) -> Result<Vec<EvidenceMatch>, FragmentTooShort> {
    let needle = normalize(fragment);
    if needle.chars().count() < MIN_FRAGMENT_CHARS {
        return Err(FragmentTooShort(fragment.to_string()));
    }
    let mut ordered: Vec<&DocumentChunk> = chunks.iter().collect();
    ordered.sort_by_key(|c| c.source_number);

    let mut matches = Vec::new();
    for chunk in ordered {
        let mapped = normalize_mapped(&chunk.text);
        let hay: String = mapped.iter().map(|&(c, _)| c).collect();
        // byte offset in `hay` -> position in `mapped`
        let positions: Vec<usize> = hay.char_indices().map(|(b, _)| b).collect();
        let original: Vec<char> = chunk.text.chars().collect();
        for (byte, m) in hay.match_indices(&needle) {
            let first = positions.binary_search(&byte).expect("char boundary");
            let last = first + m.chars().count() - 1;
            let start = mapped[first].1;
            let end = mapped[last].1 + 1;
            matches.push(EvidenceMatch {
                source_number: chunk.source_number,
                page_number: chunk.page_number,
                matched_span: (start, end),
                matched_text: original[start..end].iter().collect(),
                query_fragment: fragment.to_string(),
            });
        }
    }
    Ok(matches)
}
