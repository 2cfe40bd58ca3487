//! Text renderings of command results.

use std::fmt::Write;

use serde::{Deserialize, Serialize};
use tcfd_core::analysis::{CustomAnswer, ReportAnalysis};
use tcfd_core::prompting::{Category, QuestionCatalog};
use tcfd_core::traceability::EvalSummary;

pub fn analysis_table(a: &ReportAnalysis, catalog: &QuestionCatalog) -> String {
    let mut s = String::new();
    let info = &a.basic_info;
    let _ = writeln!(
        s,
        "Company: {} ({}; {})",
        info.company_name, info.location, info.sector
    );
    let _ = writeln!(s, "{:>3}  {:<20} {:>5}  Cited", "Q", "Category", "Score");
    for q in catalog.iter() {
        let category = Category::for_index(q.index).map_or("", Category::label);
        let score = a
            .conformity
            .get(&q.index)
            .map_or("-".to_string(), |c| c.score.to_string());
        let cited = a
            .answers
            .get(&q.index)
            .map_or("-".to_string(), |ans| join(&ans.citation_order));
        let _ = writeln!(
            s,
            "{:>3}  {:<20} {:>5}  {}",
            q.index, category, score, cited
        );
    }
    if !a.errors.is_empty() {
        let _ = writeln!(s, "Status: partial, {} failed step(s)", a.errors.len());
    }
    let _ = writeln!(s, "Average: {:.2}", a.average_score);
    s
}

fn join(values: &[u32]) -> String {
    if values.is_empty() {
        return "none".into();
    }
    values
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn answer_text(a: &CustomAnswer) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Answer: {}", a.answer.answer_text);
    let _ = writeln!(s, "Sources: {}", join(&a.answer.citation_order));
    let _ = writeln!(s, "Pages: {}", join(&a.pages));
    if !a.answer.invalid_citations.is_empty() {
        let bad: Vec<String> = a
            .answer
            .invalid_citations
            .iter()
            .map(i64::to_string)
            .collect();
        let _ = writeln!(s, "Ignored citations: {}", bad.join(", "));
    }
    let _ = writeln!(s, "Answer id: {}", a.answer_id());
    s
}

/// `ask --json` output: the stored answer plus its id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOut {
    pub answer_id: String,
    #[serde(flatten)]
    pub answer: CustomAnswer,
}

impl From<CustomAnswer> for AnswerOut {
    fn from(answer: CustomAnswer) -> Self {
        AnswerOut {
            answer_id: answer.answer_id(),
            answer,
        }
    }
}

pub fn evaluation_text(e: &EvalSummary) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{}", e.rates_line());
    let _ = writeln!(
        s,
        "Answers: {} supported: {} honest sources: {}",
        e.n_total, e.n_content_supported, e.n_source_honest
    );
    let _ = writeln!(
        s,
        "ROUGE precision: R1 {:.2} R2 {:.2} RL {:.2}",
        e.rouge1_p, e.rouge2_p, e.rouge_l_p
    );
    let _ = writeln!(
        s,
        "Cohen's kappa (content): {:.3}, adjudicated: {}",
        e.kappa_content, e.n_adjudicated
    );
    let _ = writeln!(s, "Seam warnings: {}", e.seam_warnings);
    s
}
