use serde::{Deserialize, Serialize};

use crate::ingestion::DocumentChunk;
use crate::text::word_tokens;

pub const DEFAULT_SEAM_WINDOW: usize = 6;

/// An answer passage that reads across the end of one cited chunk into the
/// start of another.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeamWarning {
    pub first_source: u32,
    pub second_source: u32,
    /// The answer tokens that straddle the seam.
    pub window: String,
    /// Tokens of `window` taken from the first chunk.
    pub split: usize,
}

struct Tokenized {
    source: u32,
    tokens: Vec<String>,
}

fn contains_run(hay: &[String], needle: &[String]) -> bool {
    needle.is_empty() || hay.windows(needle.len()).any(|w| w == needle)
}

/// Flags token windows of `window` tokens whose head ends one cited chunk
/// and whose tail begins a different cited chunk, unless some cited chunk
/// contains the whole window. One warning per ordered chunk pair.
pub fn lint_concatenation(
    answer: &str,
    cited_chunks: &[DocumentChunk],
    window: usize,
) -> Vec<SeamWarning> {
    let tokens = word_tokens(answer);
    let n = window.min(tokens.len());
    if n < 2 {
        return Vec::new();
    }
    let chunks: Vec<Tokenized> = cited_chunks
        .iter()
        .map(|c| Tokenized {
            source: c.source_number,
            tokens: word_tokens(&c.text),
        })
        .collect();

    let mut warnings: Vec<SeamWarning> = Vec::new();
    for w in tokens.windows(n) {
        if chunks.iter().any(|c| contains_run(&c.tokens, w)) {
            continue;
        }
        for split in 1..n {
            let (head, tail) = w.split_at(split);
            for a in chunks.iter().filter(|c| c.tokens.ends_with(head)) {
                for b in chunks
                    .iter()
                    .filter(|b| b.source != a.source && b.tokens.starts_with(tail))
                {
                    let seen = warnings
                        .iter()
                        .any(|x| x.first_source == a.source && x.second_source == b.source);
                    if !seen {
                        warnings.push(SeamWarning {
                            first_source: a.source,
                            second_source: b.source,
                            window: w.join(" "),
                            split,
                        });
                    }
                }
            }
        }
    }
    warnings
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(source: u32, text: &str) -> DocumentChunk {
        DocumentChunk {
            source_number: source,
            page_number: 1,
            char_start: 0,
            char_end: text.chars().count(),
            text: text.into(),
        }
    }

    #[test]
    fn flags_seam_between_two_chunks() {
        let chunks = [
            chunk(1, "we face higher storm losses"),
            chunk(2, "and rising premiums overall"),
        ];
        let w = lint_concatenation(
            "we face higher storm losses and rising premiums",
            &chunks,
            6,
        );
        assert_eq!(w.len(), 1);
        assert_eq!((w[0].first_source, w[0].second_source), (1, 2));
    }

    #[test]
    fn ignores_text_inside_one_chunk() {
        let chunks = [chunk(1, "a b c d e f g h"), chunk(2, "e f g h i j")];
        assert!(lint_concatenation("a b c d e f g h", &chunks, 6).is_empty());
    }

    #[test]
    fn overlapping_neighbours_are_not_a_seam() {
        // chunk 2 repeats the tail of chunk 1, as consecutive chunks do
        let chunks = [chunk(1, "x y z p q r"), chunk(2, "q r s t u v")];
        assert!(lint_concatenation("x y z p q r s t u v", &chunks, 6).is_empty());
    }

    #[test]
    fn short_answer_window() {
        let chunks = [chunk(1, "alpha beta"), chunk(2, "gamma delta")];
        let w = lint_concatenation("beta gamma", &chunks, 6);
        assert_eq!(w[0].window, "beta gamma");
    }
}
