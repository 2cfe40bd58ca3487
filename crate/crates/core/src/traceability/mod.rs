//! Checking answers against their sources: extractiveness (ROUGE precision),
//! keyword evidence search, the chunk-seam lint and annotation statistics.

mod evidence;
mod lint;
mod rouge;
mod stats;

pub use evidence::{
    locate_evidence, normalize, EvidenceMatch, FragmentTooShort, MIN_FRAGMENT_CHARS,
};
pub use lint::{lint_concatenation, SeamWarning, DEFAULT_SEAM_WINDOW};
pub use rouge::{rouge_precision, EmptyCandidate, RougeVariant};
pub use stats::{
    cohens_kappa, evaluation_run, final_labels, format_percent, hallucination_rates, percent,
    read_jsonl, write_jsonl, AnnotationRecord, AnswerRecord, ContentLabel, EvalError, EvalSummary,
    FinalLabel, HallucinationRates, SourceLabel,
};
