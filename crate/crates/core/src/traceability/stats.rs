use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::lint::lint_concatenation;
use super::rouge::{rouge_precision, RougeVariant};
use crate::ingestion::DocumentChunk;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContentLabel {
    Supported,
    Hallucinated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceLabel {
    Honest,
    Hallucinated,
    NotApplicable,
}

/// One annotator's judgement of one answer. The source dimension is only
/// judged when the content is supported.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub answer_id: String,
    pub annotator_id: String,
    pub content_label: ContentLabel,
    pub source_label: SourceLabel,
    /// Set on the third annotation that settles a disagreement.
    #[serde(default)]
    pub adjudicator: bool,
}

impl AnnotationRecord {
    pub fn is_consistent(&self) -> bool {
        (self.source_label == SourceLabel::NotApplicable)
            == (self.content_label == ContentLabel::Hallucinated)
    }

    fn labels(&self) -> FinalLabel {
        FinalLabel {
            content: self.content_label,
            source: self.source_label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalLabel {
    pub content: ContentLabel,
    pub source: SourceLabel,
}

/// An evaluated answer with the context it was generated from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub answer_id: String,
    pub answer_text: String,
    pub cited_sources: Vec<u32>,
    pub context: Vec<DocumentChunk>,
}

impl AnswerRecord {
    pub fn cited_chunks(&self) -> Vec<DocumentChunk> {
        self.context
            .iter()
            .filter(|c| self.cited_sources.contains(&c.source_number))
            .cloned()
            .collect()
    }

    pub fn reference_text(&self) -> String {
        self.context
            .iter()
            .map(|c| c.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("answer {0} has no final label")]
    MissingFinalLabel(String),
    #[error("answer {0} has fewer than two annotations")]
    MissingAnnotation(String),
    #[error("annotators disagree on answer {0} and there is no adjudication")]
    MissingAdjudication(String),
    #[error("annotation for unknown answer {0}")]
    UnknownAnswer(String),
    #[error("annotation of {answer_id} by {annotator_id} judges sources of hallucinated content")]
    InconsistentAnnotation {
        answer_id: String,
        annotator_id: String,
    },
    #[error("answer {0} has no tokens")]
    EmptyAnswer(String),
    #[error("label lists differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no labels")]
    NoLabels,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HallucinationRates {
    pub n_total: usize,
    pub n_content_supported: usize,
    pub n_source_honest: usize,
    /// Percent of answers whose content is supported.
    pub content_free_rate: f64,
    /// Percent of content-supported answers whose sources are honest; 0 when
    /// no answer is supported.
    pub source_free_rate_given_content: f64,
}

pub fn percent(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

/// `count/total` as a percentage truncated (not rounded) to two decimals.
pub fn format_percent(count: usize, total: usize) -> String {
    if total == 0 {
        return "0.00".into();
    }
    let hundredths = (count as u128 * 10_000) / total as u128;
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

pub fn hallucination_rates(
    answer_ids: &[String],
    finals: &BTreeMap<String, FinalLabel>,
) -> Result<HallucinationRates, EvalError> {
    let mut supported = 0;
    let mut honest = 0;
    for id in answer_ids {
        let label = finals
            .get(id)
            .ok_or_else(|| EvalError::MissingFinalLabel(id.clone()))?;
        if label.content == ContentLabel::Supported {
            supported += 1;
            if label.source == SourceLabel::Honest {
                honest += 1;
            }
        }
    }
    Ok(HallucinationRates {
        n_total: answer_ids.len(),
        n_content_supported: supported,
        n_source_honest: honest,
        content_free_rate: percent(supported, answer_ids.len()),
        source_free_rate_given_content: percent(honest, supported),
    })
}

/// Chance-corrected agreement between two label sequences. Computed from
/// integer counts, so it is exactly symmetric and label-permutation
/// invariant. Returns 1 when both raters use a single identical category.
pub fn cohens_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(EvalError::NoLabels);
    }
    let n = a.len() as i128;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as i128;
    let mut margins: BTreeMap<&T, (i128, i128)> = BTreeMap::new();
    for x in a {
        margins.entry(x).or_default().0 += 1;
    }
    for y in b {
        margins.entry(y).or_default().1 += 1;
    }
    let chance: i128 = margins.values().map(|&(ca, cb)| ca * cb).sum();
    let denom = n * n - chance;
    if denom == 0 {
        return Ok(1.0);
    }
    Ok((n * agree - chance) as f64 / denom as f64)
}

/// The two primary annotators' labels for one answer.
pub type LabelPair = (FinalLabel, FinalLabel);

/// Final labels per answer: the primary annotators' shared labels, or the
/// adjudicator's where they disagree.
pub fn final_labels(
    answer_ids: &[String],
    annotations: &[AnnotationRecord],
) -> Result<(BTreeMap<String, FinalLabel>, Vec<LabelPair>), EvalError> {
    let known: BTreeSet<&String> = answer_ids.iter().collect();
    let mut by_answer: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    for rec in annotations {
        if !known.contains(&rec.answer_id) {
            return Err(EvalError::UnknownAnswer(rec.answer_id.clone()));
        }
        if !rec.is_consistent() {
            return Err(EvalError::InconsistentAnnotation {
                answer_id: rec.answer_id.clone(),
                annotator_id: rec.annotator_id.clone(),
            });
        }
        by_answer.entry(&rec.answer_id).or_default().push(rec);
    }

    let mut finals = BTreeMap::new();
    let mut pairs = Vec::new();
    for id in answer_ids {
        let recs = by_answer.get(id.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        let mut primaries: Vec<&AnnotationRecord> =
            recs.iter().copied().filter(|r| !r.adjudicator).collect();
        primaries.sort_by(|x, y| x.annotator_id.cmp(&y.annotator_id));
        let [first, second, ..] = primaries.as_slice() else {
            return Err(EvalError::MissingAnnotation(id.clone()));
        };
        let (a, b) = (first.labels(), second.labels());
        pairs.push((a, b));
        let label = if a == b {
            a
        } else {
            recs.iter()
                .find(|r| r.adjudicator)
                .ok_or_else(|| EvalError::MissingAdjudication(id.clone()))?
                .labels()
        };
        finals.insert(id.clone(), label);
    }
    Ok((finals, pairs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n_total: usize,
    pub n_content_supported: usize,
    pub n_source_honest: usize,
    pub content_free_rate: f64,
    pub source_free_rate_given_content: f64,
    pub rouge1_p: f64,
    pub rouge2_p: f64,
    #[serde(rename = "rougeL_p")]
    pub rouge_l_p: f64,
    pub kappa_content: f64,
    pub n_adjudicated: usize,
    pub seam_warnings: usize,
}

impl EvalSummary {
    /// `Content: 83.63% Source: 75.00%`, truncated to two decimals.
    pub fn rates_line(&self) -> String {
        format!(
            "Content: {}% Source: {}%",
            format_percent(self.n_content_supported, self.n_total),
            format_percent(self.n_source_honest, self.n_content_supported)
        )
    }
}

pub fn evaluation_run(
    answers: &[AnswerRecord],
    annotations: &[AnnotationRecord],
    seam_window: usize,
) -> Result<EvalSummary, EvalError> {
    let ids: Vec<String> = answers.iter().map(|a| a.answer_id.clone()).collect();
    let (finals, pairs) = final_labels(&ids, annotations)?;
    let rates = hallucination_rates(&ids, &finals)?;

    let mut sums = [0.0f64; 3];
    let mut seam_warnings = 0;
    for a in answers {
        let reference = a.reference_text();
        for (slot, v) in [RougeVariant::R1, RougeVariant::R2, RougeVariant::RL]
            .into_iter()
            .enumerate()
        {
            sums[slot] += rouge_precision(&a.answer_text, &reference, v)
                .map_err(|_| EvalError::EmptyAnswer(a.answer_id.clone()))?;
        }
        seam_warnings += lint_concatenation(&a.answer_text, &a.cited_chunks(), seam_window).len();
    }
    let mean = |s: f64| {
        if answers.is_empty() {
            0.0
        } else {
            100.0 * s / answers.len() as f64
        }
    };

    let (content_a, content_b): (Vec<_>, Vec<_>) =
        pairs.iter().map(|(a, b)| (a.content, b.content)).unzip();
    let kappa_content = if pairs.is_empty() {
        1.0
    } else {
        cohens_kappa(&content_a, &content_b)?
    };

    Ok(EvalSummary {
        n_total: rates.n_total,
        n_content_supported: rates.n_content_supported,
        n_source_honest: rates.n_source_honest,
        content_free_rate: rates.content_free_rate,
        source_free_rate_given_content: rates.source_free_rate_given_content,
        rouge1_p: mean(sums[0]),
        rouge2_p: mean(sums[1]),
        rouge_l_p: mean(sums[2]),
        kappa_content,
        n_adjudicated: pairs.iter().filter(|(a, b)| a != b).count(),
        seam_warnings,
    })
}

/// Parses JSON lines, skipping blank lines. Errors carry the 1-based line.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<T>, (usize, String)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| (i + 1, e.to_string())))
        .collect()
}

pub fn write_jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("record serializes") + "\n")
        .collect()
}
