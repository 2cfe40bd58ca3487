use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::word_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RougeVariant {
    R1,
    R2,
    RL,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("candidate has no tokens")]
pub struct EmptyCandidate;

/// Share of the candidate found in the reference.
///
/// R1/R2 count clipped n-gram matches over the candidate's n-grams; a
/// candidate shorter than n is scored with n equal to its length. RL is the
/// longest common subsequence over the candidate length.
pub fn rouge_precision(
    candidate: &str,
    reference: &str,
    variant: RougeVariant,
) -> Result<f64, EmptyCandidate> {
    let cand = word_tokens(candidate);
    if cand.is_empty() {
        return Err(EmptyCandidate);
    }
    let reference = word_tokens(reference);
    Ok(match variant {
        RougeVariant::R1 => ngram_precision(&cand, &reference, 1),
        RougeVariant::R2 => ngram_precision(&cand, &reference, 2),
        RougeVariant::RL => lcs_len(&cand, &reference) as f64 / cand.len() as f64,
    })
}

fn ngram_precision(cand: &[String], reference: &[String], n: usize) -> f64 {
    let n = n.min(cand.len());
    let mut available: HashMap<&[String], usize> = HashMap::new();
    for g in reference.windows(n) {
        *available.entry(g).or_default() += 1;
    }
    let total = cand.len() - n + 1;
    let mut hits = 0;
    for g in cand.windows(n) {
        if let Some(c) = available.get_mut(g) {
            if *c > 0 {
                *c -= 1;
                hits += 1;
            }
        }
    }
    hits as f64 / total as f64
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}
