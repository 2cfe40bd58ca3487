//! Offline backends: a scripted one driven by a JSON file and a deterministic
//! extractive fallback that answers from the prompt's own context.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::parse::{serialize_basic_info, serialize_guideline};
use super::{BackendError, CompletionParams, LlmBackend};
use crate::prompting::{fingerprint, BasicInfo, QuestionCatalog, TcfdQuestion};
use crate::text::word_tokens;

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read mock script {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid mock script: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Needles {
    One(String),
    All(Vec<String>),
}

impl Needles {
    fn matches(&self, prompt: &str) -> bool {
        match self {
            Needles::One(s) => prompt.contains(s.as_str()),
            Needles::All(list) => list.iter().all(|s| prompt.contains(s.as_str())),
        }
    }
}

/// Replies with `response`, or fails with `error` (`unavailable`, `timeout`,
/// `rate_limited`, `rejected`), when the prompt contains every needle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub contains: Needles,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ScriptRule {
    pub fn reply(needle: impl Into<String>, response: impl Into<String>) -> Self {
        ScriptRule {
            contains: Needles::One(needle.into()),
            response: Some(response.into()),
            error: None,
        }
    }

    pub fn reply_all(needles: Vec<String>, response: impl Into<String>) -> Self {
        ScriptRule {
            contains: Needles::All(needles),
            response: Some(response.into()),
            error: None,
        }
    }

    pub fn fail(needle: impl Into<String>, error: impl Into<String>) -> Self {
        ScriptRule {
            contains: Needles::One(needle.into()),
            response: None,
            error: Some(error.into()),
        }
    }

    /// Answers the conformity prompt for `q` with `score`. The critical-element
    /// line names exactly one question; the disclosure marker keeps the
    /// summarization prompt, which repeats that line, from matching.
    pub fn conformity_score(q: &TcfdQuestion, score: u8) -> Self {
        let response = serde_json::json!({
            "ANALYSIS": format!("Scripted assessment for question {}.", q.index),
            "SCORE": score,
        });
        Self::reply_all(Self::conformity_needles(q), response.to_string())
    }

    /// Fails the conformity prompt for `q` with `error`.
    pub fn conformity_failure(q: &TcfdQuestion, error: impl Into<String>) -> Self {
        ScriptRule {
            contains: Needles::All(Self::conformity_needles(q)),
            response: None,
            error: Some(error.into()),
        }
    }

    fn conformity_needles(q: &TcfdQuestion) -> Vec<String> {
        vec![
            format!("<CRITICAL_ELEMENT>: {}\n", q.recommendation_text),
            "<DISCLOSURE>:".to_string(),
        ]
    }

    fn outcome(&self) -> Result<String, BackendError> {
        match (&self.response, &self.error) {
            (_, Some(kind)) => Err(scripted_error(kind)),
            (Some(r), None) => Ok(r.clone()),
            (None, None) => Err(BackendError::Rejected("rule has no response".into())),
        }
    }
}

fn scripted_error(kind: &str) -> BackendError {
    match kind {
        "timeout" => BackendError::Timeout,
        "rate_limited" => BackendError::RateLimited,
        "rejected" => BackendError::Rejected("scripted rejection".into()),
        _ => BackendError::Unavailable("scripted failure".into()),
    }
}

/// Canned responses keyed by prompt fingerprint (SHA-256 hex of the prompt
/// text), then ordered substring rules. Fingerprints win.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub fingerprints: BTreeMap<String, String>,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
}

impl MockScript {
    pub fn from_json(json: &str) -> Result<Self, ScriptError> {
        let script: MockScript =
            serde_json::from_str(json).map_err(|e| ScriptError::Invalid(e.to_string()))?;
        for (i, rule) in script.rules.iter().enumerate() {
            if rule.response.is_none() && rule.error.is_none() {
                return Err(ScriptError::Invalid(format!(
                    "rule {i} has neither response nor error"
                )));
            }
            if let Some(kind) = &rule.error {
                if !["unavailable", "timeout", "rate_limited", "rejected"].contains(&kind.as_str())
                {
                    return Err(ScriptError::Invalid(format!(
                        "rule {i}: unknown error {kind:?}"
                    )));
                }
            }
        }
        Ok(script)
    }

    pub fn from_path(path: &Path) -> Result<Self, ScriptError> {
        let json = std::fs::read_to_string(path).map_err(|e| ScriptError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&json)
    }

    /// One [`ScriptRule::conformity_score`] rule per question, in catalog
    /// order.
    pub fn conformity_scores(catalog: &QuestionCatalog, scores: &[u8]) -> Self {
        MockScript {
            fingerprints: BTreeMap::new(),
            rules: catalog
                .iter()
                .zip(scores)
                .map(|(q, &s)| ScriptRule::conformity_score(q, s))
                .collect(),
        }
    }

    pub fn with_rule(mut self, rule: ScriptRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("script serializes")
    }

    pub fn lookup(&self, prompt: &str) -> Option<Result<String, BackendError>> {
        if let Some(r) = self.fingerprints.get(&fingerprint(prompt)) {
            return Some(Ok(r.clone()));
        }
        self.rules
            .iter()
            .find(|rule| rule.contains.matches(prompt))
            .map(ScriptRule::outcome)
    }
}

pub struct ScriptedBackend {
    script: MockScript,
    fallback: Option<Box<dyn LlmBackend>>,
}

impl ScriptedBackend {
    pub fn new(script: MockScript) -> Self {
        ScriptedBackend {
            script,
            fallback: None,
        }
    }

    /// Script with the extractive mock answering everything unscripted.
    pub fn with_extractive_fallback(script: MockScript) -> Self {
        Self::new(script).with_fallback(Box::new(ExtractiveMock))
    }

    pub fn with_fallback(mut self, fallback: Box<dyn LlmBackend>) -> Self {
        self.fallback = Some(fallback);
        self
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, BackendError> {
        match self.script.lookup(prompt) {
            Some(outcome) => outcome,
            None => match &self.fallback {
                Some(f) => f.complete(prompt, params),
                None => Err(BackendError::Rejected(format!(
                    "no scripted response for prompt {}",
                    &fingerprint(prompt)[..12]
                ))),
            },
        }
    }

    fn name(&self) -> String {
        "scripted".into()
    }
}

/// Deterministic stand-in for a chat model. It recognises the prompt type by
/// the keys the template asks for and answers by copying from the context.
#[derive(Debug, Default, Clone, Copy)]
pub struct ExtractiveMock;

const ANSWER_WORDS: usize = 40;

fn context_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)Content: (.*?)\nSource: (\d+)\n").expect("valid regex"))
}

fn blocks(prompt: &str) -> Vec<(String, u32)> {
    context_re()
        .captures_iter(prompt)
        .filter_map(|c| Some((c[1].to_string(), c[2].parse().ok()?)))
        .collect()
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = text.find(start)? + start.len();
    let len = text[from..].find(end)?;
    Some(&text[from..from + len])
}

fn leading_words(text: &str, n: usize) -> String {
    text.split_whitespace()
        .take(n)
        .collect::<Vec<_>>()
        .join(" ")
}

impl ExtractiveMock {
    fn answer(prompt: &str, key: &str) -> String {
        let blocks = blocks(prompt);
        let (text, sources) = match blocks.as_slice() {
            [] => (
                "The report does not disclose this information.".to_string(),
                vec![],
            ),
            [(a, sa)] => (leading_words(a, ANSWER_WORDS), vec![*sa]),
            [(a, sa), (b, sb), ..] => (
                format!(
                    "{} {}",
                    leading_words(a, ANSWER_WORDS),
                    leading_words(b, ANSWER_WORDS / 2)
                ),
                vec![*sa, *sb],
            ),
        };
        serde_json::json!({ key: text, "SOURCES": sources }).to_string()
    }

    fn conformity(prompt: &str) -> String {
        let requirements = between(prompt, "<REQUIREMENTS>:\n---\n", "\n---").unwrap_or("");
        let disclosure = between(prompt, "<DISCLOSURE>:\n---\n", "\n---").unwrap_or("");
        let terms: BTreeSet<String> = word_tokens(requirements)
            .into_iter()
            .filter(|t| t.len() >= 4 && t.chars().all(char::is_alphabetic))
            .collect();
        let present: BTreeSet<String> = word_tokens(disclosure).into_iter().collect();
        let covered = terms.iter().filter(|t| present.contains(*t)).count();
        let score = if terms.is_empty() {
            0
        } else {
            covered * 20 / terms.len() * 5
        };
        serde_json::json!({
            "ANALYSIS": format!(
                "The disclosure mentions {covered} of {} requirement terms.",
                terms.len()
            ),
            "SCORE": score,
        })
        .to_string()
    }

    fn guideline(prompt: &str) -> String {
        let feedback = between(prompt, "<Expert Feedback>: \"", "\"\n")
            .unwrap_or("")
            .trim();
        serialize_guideline(&format!(
            "Where relevant, address the following reviewer concern explicitly: {feedback}"
        ))
    }

    fn basic_info(prompt: &str) -> String {
        static RES: OnceLock<[Regex; 3]> = OnceLock::new();
        let res = RES.get_or_init(|| {
            [
                Regex::new(r"\bCompany(?: name)?:\s*([^\n.;]+)").expect("valid regex"),
                Regex::new(r"\b(?:Headquarters|Location):\s*([^\n.;]+)").expect("valid regex"),
                Regex::new(r"\b(?:Sector|Industry):\s*([^\n.;]+)").expect("valid regex"),
            ]
        });
        let context: String = blocks(prompt).into_iter().map(|(t, _)| t + "\n").collect();
        let find = |re: &Regex| {
            re.captures(&context)
                .map(|c| c[1].trim().to_string())
                .unwrap_or_else(|| BasicInfo::UNKNOWN.to_string())
        };
        serialize_basic_info(&BasicInfo::new(find(&res[0]), find(&res[1]), find(&res[2])))
    }
}

impl LlmBackend for ExtractiveMock {
    fn complete(&self, prompt: &str, _params: &CompletionParams) -> Result<String, BackendError> {
        if prompt.contains("<DISCLOSURE>:") {
            Ok(Self::conformity(prompt))
        } else if prompt.contains("single key \"GUIDELINE\"") {
            Ok(Self::guideline(prompt))
        } else if prompt.contains("COMPANY_NAME") {
            Ok(Self::basic_info(prompt))
        } else if prompt.contains("1. SUMMARY") {
            Ok(Self::answer(prompt, "SUMMARY"))
        } else if prompt.contains("QUESTION:") {
            Ok(Self::answer(prompt, "ANSWER"))
        } else {
            Err(BackendError::Rejected("unrecognised prompt".into()))
        }
    }

    fn name(&self) -> String {
        "extractive-mock".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{parse_answer_json, parse_conformity_json};

    #[test]
    fn fingerprint_lookup_beats_rules() {
        let mut script = MockScript::default();
        script.fingerprints.insert(fingerprint("hello"), "X".into());
        script.rules.push(ScriptRule::reply("hel", "Y"));
        let b = ScriptedBackend::new(script);
        let p = CompletionParams::default();
        assert_eq!(b.complete("hello", &p).unwrap(), "X");
        assert_eq!(b.complete("help", &p).unwrap(), "Y");
        assert!(matches!(
            b.complete("zzz", &p),
            Err(BackendError::Rejected(_))
        ));
    }

    #[test]
    fn script_json_forms() {
        let s = MockScript::from_json(
            r#"{"rules":[{"contains":["a","b"],"response":"ab"},{"contains":"c","error":"timeout"}]}"#,
        )
        .unwrap();
        let b = ScriptedBackend::new(s);
        let p = CompletionParams::default();
        assert_eq!(b.complete("b a", &p).unwrap(), "ab");
        assert!(b.complete("a", &p).is_err());
        assert_eq!(b.complete("c", &p), Err(BackendError::Timeout));
        assert!(MockScript::from_json(r#"{"rules":[{"contains":"x","error":"boom"}]}"#).is_err());
        assert!(MockScript::from_json(r#"{"rules":[{"contains":"x"}]}"#).is_err());
    }

    #[test]
    fn extractive_answer_cites_context() {
        let prompt = "QUESTION: q\n=========\nContent: alpha beta\nSource: 4\n\nContent: gamma\nSource: 9\n\n=========";
        let raw = ExtractiveMock
            .complete(prompt, &CompletionParams::default())
            .unwrap();
        let a = parse_answer_json(&raw, &[4, 9].into_iter().collect()).unwrap();
        assert_eq!(a.answer_text, "alpha beta gamma");
        assert_eq!(a.citation_order, vec![4, 9]);
    }

    #[test]
    fn extractive_conformity_counts_terms() {
        let prompt = "<REQUIREMENTS>:\n---\nboard oversight climate risks\n---\n\n<DISCLOSURE>:\n---\nThe board reviews climate matters.\n---\n";
        let raw = ExtractiveMock
            .complete(prompt, &CompletionParams::default())
            .unwrap();
        let r = parse_conformity_json(&raw, 1).unwrap();
        // 2 of 4 terms
        assert_eq!(r.score, 50);
    }
}
