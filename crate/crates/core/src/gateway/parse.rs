//! Parsers for the JSON objects the templates ask for.
//!
//! Every reply goes through the same bounded repair: parse as-is, then with
//! markdown code fences removed, then the first balanced `{...}` that parses.
//! Nothing else is guessed.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::prompting::BasicInfo;
use crate::text::word_count;

pub const ANALYSIS_WORD_LIMIT: usize = 150;

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum ParseError {
    #[error("malformed model output: {0}")]
    MalformedOutput(String),
    #[error("model output is missing key {0}")]
    MissingKey(String),
    #[error("score {0} is outside 0..=100")]
    ScoreOutOfRange(i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerKind {
    Answer,
    Summary,
}

impl AnswerKind {
    pub fn key(self) -> &'static str {
        match self {
            AnswerKind::Answer => "ANSWER",
            AnswerKind::Summary => "SUMMARY",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelAnswer {
    pub answer_text: String,
    /// Valid citations, ascending and deduplicated.
    pub cited_sources: Vec<u32>,
    /// Valid citations in the order the model listed them, deduplicated.
    pub citation_order: Vec<u32>,
    /// Citations that do not name a chunk of the retrieved context.
    pub invalid_citations: Vec<i64>,
    pub kind: AnswerKind,
    pub raw: String,
}

impl ModelAnswer {
    pub fn has_citation_warning(&self) -> bool {
        !self.invalid_citations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConformityResult {
    pub question_index: u8,
    pub analysis_text: String,
    pub score: u8,
    pub analysis_word_count: usize,
    /// Soft violation: the analysis exceeds the requested word limit.
    pub analysis_over_limit: bool,
}

/// Finds the JSON object in a model reply.
pub fn extract_json_object(raw: &str) -> Result<Map<String, Value>, ParseError> {
    let trimmed = raw.trim();
    if let Ok(Value::Object(map)) = serde_json::from_str(trimmed) {
        return Ok(map);
    }
    if let Some(inner) = strip_fences(trimmed) {
        if let Ok(Value::Object(map)) = serde_json::from_str(inner.trim()) {
            return Ok(map);
        }
    }
    for candidate in balanced_objects(trimmed) {
        if let Ok(Value::Object(map)) = serde_json::from_str(candidate) {
            return Ok(map);
        }
    }
    Err(ParseError::MalformedOutput(snippet(raw)))
}

fn snippet(raw: &str) -> String {
    const MAX: usize = 80;
    let s: String = raw.chars().take(MAX).collect();
    if raw.chars().count() > MAX {
        format!("no JSON object in {s:?}...")
    } else {
        format!("no JSON object in {s:?}")
    }
}

fn strip_fences(text: &str) -> Option<&str> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    // skip an info string such as `json`
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after[body_start..];
    let end = body.find("```").unwrap_or(body.len());
    Some(&body[..end])
}

/// Substrings from each `{` to its matching `}`, honouring JSON strings.
fn balanced_objects(text: &str) -> impl Iterator<Item = &str> {
    text.char_indices()
        .filter(|&(_, c)| c == '{')
        .filter_map(move |(start, _)| {
            let mut depth = 0usize;
            let mut in_string = false;
            let mut escaped = false;
            for (i, c) in text[start..].char_indices() {
                if in_string {
                    match c {
                        _ if escaped => escaped = false,
                        '\\' => escaped = true,
                        '"' => in_string = false,
                        _ => {}
                    }
                    continue;
                }
                match c {
                    '"' => in_string = true,
                    '{' => depth += 1,
                    '}' => {
                        depth -= 1;
                        if depth == 0 {
                            return Some(&text[start..start + i + 1]);
                        }
                    }
                    _ => {}
                }
            }
            None
        })
}

fn required<'a>(map: &'a Map<String, Value>, key: &str) -> Result<&'a Value, ParseError> {
    map.get(key)
        .ok_or_else(|| ParseError::MissingKey(key.to_string()))
}

fn non_empty_string(value: &Value, key: &str) -> Result<String, ParseError> {
    match value {
        Value::String(s) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        Value::String(_) => Err(ParseError::MalformedOutput(format!("{key} is empty"))),
        _ => Err(ParseError::MalformedOutput(format!(
            "{key} is not a string"
        ))),
    }
}

/// Integers, integral floats and numeric strings.
fn coerce_integer(value: &Value) -> Option<i64> {
    match value {
        Value::Number(n) => n.as_i64().or_else(|| {
            n.as_f64()
                .filter(|f| f.fract() == 0.0 && f.abs() < 1e15)
                .map(|f| f as i64)
        }),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

pub fn parse_answer_json(
    raw: &str,
    valid_sources: &BTreeSet<u32>,
) -> Result<ModelAnswer, ParseError> {
    let map = extract_json_object(raw)?;
    let (kind, text) = if let Some(v) = map.get("ANSWER") {
        (AnswerKind::Answer, v)
    } else if let Some(v) = map.get("SUMMARY") {
        (AnswerKind::Summary, v)
    } else {
        return Err(ParseError::MissingKey("ANSWER".into()));
    };
    let answer_text = non_empty_string(text, kind.key())?;
    let sources = match required(&map, "SOURCES")? {
        Value::Array(items) => items,
        _ => return Err(ParseError::MalformedOutput("SOURCES is not a list".into())),
    };
    let mut citation_order = Vec::new();
    let mut invalid_citations = Vec::new();
    for item in sources {
        let n = coerce_integer(item)
            .ok_or_else(|| ParseError::MalformedOutput(format!("non-numeric source {item}")))?;
        match u32::try_from(n).ok().filter(|s| valid_sources.contains(s)) {
            Some(s) if !citation_order.contains(&s) => citation_order.push(s),
            Some(_) => {}
            None if !invalid_citations.contains(&n) => invalid_citations.push(n),
            None => {}
        }
    }
    if !invalid_citations.is_empty() {
        tracing::warn!(
            ?invalid_citations,
            "answer cites sources outside the retrieved context"
        );
    }
    let mut cited_sources = citation_order.clone();
    cited_sources.sort_unstable();
    Ok(ModelAnswer {
        answer_text,
        cited_sources,
        citation_order,
        invalid_citations,
        kind,
        raw: raw.to_string(),
    })
}

pub fn parse_conformity_json(
    raw: &str,
    question_index: u8,
) -> Result<ConformityResult, ParseError> {
    let map = extract_json_object(raw)?;
    let analysis_text = non_empty_string(required(&map, "ANALYSIS")?, "ANALYSIS")?;
    let score_value = required(&map, "SCORE")?;
    let score = coerce_integer(score_value).ok_or_else(|| {
        ParseError::MalformedOutput(format!("SCORE {score_value} is not an integer"))
    })?;
    if !(0..=100).contains(&score) {
        return Err(ParseError::ScoreOutOfRange(score));
    }
    let analysis_word_count = word_count(&analysis_text);
    Ok(ConformityResult {
        question_index,
        analysis_word_count,
        analysis_over_limit: analysis_word_count > ANALYSIS_WORD_LIMIT,
        analysis_text,
        score: score as u8,
    })
}

pub fn parse_guideline_json(raw: &str) -> Result<String, ParseError> {
    let map = extract_json_object(raw)?;
    non_empty_string(required(&map, "GUIDELINE")?, "GUIDELINE")
}

/// Missing, null or blank fields become `"unknown"`.
pub fn parse_basic_info_json(raw: &str) -> Result<BasicInfo, ParseError> {
    let map = extract_json_object(raw)?;
    let field = |key: &str| match map.get(key) {
        Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
        Some(Value::Null) | None | Some(Value::String(_)) => BasicInfo::UNKNOWN.to_string(),
        Some(other) => other.to_string(),
    };
    Ok(BasicInfo::new(
        field("COMPANY_NAME"),
        field("LOCATION"),
        field("SECTOR"),
    ))
}

pub fn serialize_answer(answer: &ModelAnswer) -> String {
    let mut map = Map::new();
    map.insert(
        answer.kind.key().into(),
        Value::String(answer.answer_text.clone()),
    );
    map.insert(
        "SOURCES".into(),
        Value::Array(
            answer
                .citation_order
                .iter()
                .map(|&s| Value::from(s))
                .collect(),
        ),
    );
    Value::Object(map).to_string()
}

pub fn serialize_conformity(result: &ConformityResult) -> String {
    serde_json::json!({"ANALYSIS": result.analysis_text, "SCORE": result.score}).to_string()
}

pub fn serialize_guideline(guideline: &str) -> String {
    serde_json::json!({ "GUIDELINE": guideline }).to_string()
}

pub fn serialize_basic_info(info: &BasicInfo) -> String {
    serde_json::json!({
        "COMPANY_NAME": info.company_name,
        "LOCATION": info.location,
        "SECTOR": info.sector,
    })
    .to_string()
}
