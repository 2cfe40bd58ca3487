//! Prompt templates with `{placeholder}` substitution.
//!
//! Templates live in `templates/*.txt` and are compiled in; a directory of
//! overrides can replace any of them at runtime. Substitution is single-pass,
//! so placeholder-like text inside bound values is never expanded.

mod catalog;
mod guidelines;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use catalog::{Category, QuestionCatalog, TcfdQuestion, QUESTION_COUNT};
pub use guidelines::{
    GuidelineEntry, GuidelineList, GuidelineScope, Provenance, ANSWER_LENGTH_PLACEHOLDER,
};

use crate::retrieval::ContextWindow;

/// Default `{answer_length}` in words.
pub const DEFAULT_ANSWER_LENGTH: u32 = 150;

pub const CHUNKS_PLACEHOLDER: &str = "retrieved_chunks_with_source";
pub const DISCLOSURE_PLACEHOLDER: &str = "disclosure";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("no value bound for placeholder {{{0}}}")]
    MissingBinding(String),
    #[error("invalid question catalog: {0}")]
    InvalidCatalog(String),
    #[error("cannot read template {name}: {message}")]
    TemplateIo { name: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Qa,
    Summarization,
    Conformity,
    Cqa,
    PromptEngineering,
    BasicInfo,
}

impl TemplateId {
    pub const ALL: [TemplateId; 6] = [
        TemplateId::Qa,
        TemplateId::Summarization,
        TemplateId::Conformity,
        TemplateId::Cqa,
        TemplateId::PromptEngineering,
        TemplateId::BasicInfo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Qa => "qa",
            TemplateId::Summarization => "summarization",
            TemplateId::Conformity => "conformity",
            TemplateId::Cqa => "cqa",
            TemplateId::PromptEngineering => "prompt_engineering",
            TemplateId::BasicInfo => "basic_info",
        }
    }

    /// Placeholder that receives retrieved context, if the template has one.
    pub fn context_placeholder(self) -> Option<&'static str> {
        match self {
            TemplateId::Qa
            | TemplateId::Summarization
            | TemplateId::Cqa
            | TemplateId::BasicInfo => Some(CHUNKS_PLACEHOLDER),
            TemplateId::Conformity => Some(DISCLOSURE_PLACEHOLDER),
            TemplateId::PromptEngineering => None,
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            // customized QA shares the QA skeleton; only the guidelines differ
            TemplateId::Qa | TemplateId::Cqa => include_str!("../../templates/qa.txt"),
            TemplateId::Summarization => include_str!("../../templates/summarization.txt"),
            TemplateId::Conformity => include_str!("../../templates/conformity.txt"),
            TemplateId::PromptEngineering => {
                include_str!("../../templates/prompt_engineering.txt")
            }
            TemplateId::BasicInfo => include_str!("../../templates/basic_info.txt"),
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateId, String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        TemplateSet {
            templates: TemplateId::ALL
                .iter()
                .map(|&id| (id, normalize_template(id.builtin())))
                .collect(),
        }
    }

    /// Builtin templates, with `{id}.txt` files from `dir` taking precedence.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::builtin();
        for id in TemplateId::ALL {
            let path = dir.join(format!("{id}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| PromptError::TemplateIo {
                    name: id.to_string(),
                    message: e.to_string(),
                })?;
                set.templates.insert(id, normalize_template(&text));
            }
        }
        Ok(set)
    }

    pub fn get(&self, id: TemplateId) -> &str {
        &self.templates[&id]
    }
}

fn normalize_template(text: &str) -> String {
    text.strip_suffix('\n').unwrap_or(text).to_string()
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("valid regex"))
}

/// Placeholder names appearing in `template`, in order of first appearance.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut seen = Vec::new();
    for cap in placeholder_re().captures_iter(template) {
        let name = cap[1].to_string();
        if !seen.contains(&name) {
            seen.push(name);
        }
    }
    seen
}

pub type Bindings = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasicInfo {
    pub company_name: String,
    pub location: String,
    pub sector: String,
}

impl BasicInfo {
    pub const UNKNOWN: &'static str = "unknown";

    pub fn new(
        company_name: impl Into<String>,
        location: impl Into<String>,
        sector: impl Into<String>,
    ) -> Self {
        BasicInfo {
            company_name: company_name.into(),
            location: location.into(),
            sector: sector.into(),
        }
    }

    pub fn unknown() -> Self {
        Self::new(Self::UNKNOWN, Self::UNKNOWN, Self::UNKNOWN)
    }

    pub fn is_complete(&self) -> bool {
        [&self.company_name, &self.location, &self.sector]
            .iter()
            .all(|s| !s.trim().is_empty())
    }

    pub fn render(&self) -> String {
        format!(
            "Company name: {}\nLocation: {}\nSector: {}",
            self.company_name, self.location, self.sector
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub template_id: TemplateId,
    pub included_sources: Vec<u32>,
    pub variable_bindings: Bindings,
}

impl RenderedPrompt {
    /// Stable SHA-256 hex of the prompt text; keys the scripted mock backend.
    pub fn fingerprint(&self) -> String {
        fingerprint(&self.text)
    }
}

pub fn fingerprint(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, Default)]
pub struct Prompter {
    templates: TemplateSet,
}

impl Prompter {
    pub fn new(templates: TemplateSet) -> Self {
        Prompter { templates }
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    /// Substitutes every `{name}` in the template. Fails on the first
    /// placeholder without a binding.
    pub fn render(
        &self,
        id: TemplateId,
        bindings: Bindings,
        included_sources: Vec<u32>,
    ) -> Result<RenderedPrompt, PromptError> {
        let template = self.templates.get(id);
        if let Some(missing) = placeholders(template)
            .into_iter()
            .find(|name| !bindings.contains_key(name))
        {
            return Err(PromptError::MissingBinding(missing));
        }
        let text = placeholder_re()
            .replace_all(template, |cap: &regex::Captures<'_>| {
                bindings[&cap[1]].clone()
            })
            .into_owned();
        Ok(RenderedPrompt {
            text,
            template_id: id,
            included_sources,
            variable_bindings: bindings,
        })
    }

    /// The prompt with its context placeholder bound to the empty string, used
    /// to size the non-context part of a prompt against the token budget.
    pub fn skeleton(&self, id: TemplateId, mut bindings: Bindings) -> Result<String, PromptError> {
        if let Some(name) = id.context_placeholder() {
            bindings.insert(name.to_string(), String::new());
        }
        Ok(self.render(id, bindings, Vec::new())?.text)
    }

    pub fn qa_bindings(
        &self,
        info: &BasicInfo,
        q: &TcfdQuestion,
        g: &GuidelineList,
        answer_length: u32,
    ) -> Result<Bindings, PromptError> {
        let mut b = Bindings::new();
        bind(&mut b, "basic_info", basic_info_value(info))?;
        bind(
            &mut b,
            "question_regarding_a_TCFD_recommendation",
            q.question_text.clone(),
        )?;
        let specific = g.specific_for(q.index).unwrap_or(&q.specific_guideline);
        bind(
            &mut b,
            "guidelines",
            g.render_block(answer_length, Some(specific)),
        )?;
        bind(&mut b, "answer_length", answer_length.to_string())?;
        Ok(b)
    }

    pub fn render_qa_prompt(
        &self,
        info: &BasicInfo,
        q: &TcfdQuestion,
        ctx: &ContextWindow,
        g: &GuidelineList,
        answer_length: u32,
    ) -> Result<RenderedPrompt, PromptError> {
        let mut b = self.qa_bindings(info, q, g, answer_length)?;
        bind_context(&mut b, CHUNKS_PLACEHOLDER, ctx)?;
        self.render(TemplateId::Qa, b, ctx.sources())
    }

    pub fn summarization_bindings(
        &self,
        info: &BasicInfo,
        q: &TcfdQuestion,
        g: &GuidelineList,
        answer_length: u32,
    ) -> Result<Bindings, PromptError> {
        let mut b = Bindings::new();
        bind(&mut b, "basic_info", basic_info_value(info))?;
        bind(
            &mut b,
            "A_TCFD_recommendation",
            q.recommendation_text.clone(),
        )?;
        let specific = g.specific_for(q.index).unwrap_or(&q.specific_guideline);
        bind(
            &mut b,
            "guidelines",
            g.render_block(answer_length, Some(specific)),
        )?;
        bind(&mut b, "answer_length", answer_length.to_string())?;
        Ok(b)
    }

    pub fn render_summarization_prompt(
        &self,
        info: &BasicInfo,
        q: &TcfdQuestion,
        ctx: &ContextWindow,
        g: &GuidelineList,
        answer_length: u32,
    ) -> Result<RenderedPrompt, PromptError> {
        let mut b = self.summarization_bindings(info, q, g, answer_length)?;
        bind_context(&mut b, CHUNKS_PLACEHOLDER, ctx)?;
        self.render(TemplateId::Summarization, b, ctx.sources())
    }

    pub fn conformity_bindings(
        &self,
        q: &TcfdQuestion,
        requirements: &str,
    ) -> Result<Bindings, PromptError> {
        let mut b = Bindings::new();
        bind(&mut b, "tcfd_recommendation", q.recommendation_text.clone())?;
        bind(&mut b, "requirements", requirements.to_string())?;
        Ok(b)
    }

    pub fn render_conformity_prompt(
        &self,
        q: &TcfdQuestion,
        requirements: &str,
        disclosure: &str,
    ) -> Result<RenderedPrompt, PromptError> {
        let mut b = self.conformity_bindings(q, requirements)?;
        bind(&mut b, DISCLOSURE_PLACEHOLDER, disclosure.to_string())?;
        self.render(TemplateId::Conformity, b, Vec::new())
    }

    /// Conformity prompt whose disclosure is a retrieved context window.
    pub fn render_conformity_prompt_for_context(
        &self,
        q: &TcfdQuestion,
        requirements: &str,
        ctx: &ContextWindow,
    ) -> Result<RenderedPrompt, PromptError> {
        let mut b = self.conformity_bindings(q, requirements)?;
        bind_context(&mut b, DISCLOSURE_PLACEHOLDER, ctx)?;
        self.render(TemplateId::Conformity, b, ctx.sources())
    }

    pub fn cqa_bindings(
        &self,
        info: &BasicInfo,
        user_question: &str,
        g: &GuidelineList,
        cqa_guideline: &str,
        answer_length: u32,
    ) -> Result<Bindings, PromptError> {
        let mut b = Bindings::new();
        bind(&mut b, "basic_info", basic_info_value(info))?;
        bind(
            &mut b,
            "question_regarding_a_TCFD_recommendation",
            user_question.trim().to_string(),
        )?;
        bind(
            &mut b,
            "guidelines",
            g.render_block(answer_length, Some(cqa_guideline)),
        )?;
        bind(&mut b, "answer_length", answer_length.to_string())?;
        Ok(b)
    }

    pub fn render_cqa_prompt(
        &self,
        info: &BasicInfo,
        user_question: &str,
        ctx: &ContextWindow,
        g: &GuidelineList,
        cqa_guideline: &str,
        answer_length: u32,
    ) -> Result<RenderedPrompt, PromptError> {
        let mut b = self.cqa_bindings(info, user_question, g, cqa_guideline, answer_length)?;
        bind_context(&mut b, CHUNKS_PLACEHOLDER, ctx)?;
        self.render(TemplateId::Cqa, b, ctx.sources())
    }

    /// Feedback-to-guideline prompt. The guideline list is embedded as the
    /// numbered general block, plus `specific` when the feedback concerns one
    /// question.
    pub fn render_prompt_engineering_prompt(
        &self,
        original_prompt: &str,
        g: &GuidelineList,
        specific: Option<&str>,
        old_response: &str,
        feedback: &str,
        answer_length: u32,
    ) -> Result<RenderedPrompt, PromptError> {
        let mut b = Bindings::new();
        bind(&mut b, "original_prompt", original_prompt.to_string())?;
        bind(
            &mut b,
            "guideline_list",
            g.render_block(answer_length, specific),
        )?;
        bind(&mut b, "old_response", old_response.to_string())?;
        bind(&mut b, "feedback", feedback.trim().to_string())?;
        self.render(TemplateId::PromptEngineering, b, Vec::new())
    }

    pub fn render_basic_info_prompt(
        &self,
        ctx: &ContextWindow,
    ) -> Result<RenderedPrompt, PromptError> {
        let mut b = Bindings::new();
        bind_context(&mut b, CHUNKS_PLACEHOLDER, ctx)?;
        self.render(TemplateId::BasicInfo, b, ctx.sources())
    }
}

fn basic_info_value(info: &BasicInfo) -> String {
    if info.is_complete() {
        info.render()
    } else {
        String::new()
    }
}

fn bind(b: &mut Bindings, name: &str, value: String) -> Result<(), PromptError> {
    if value.trim().is_empty() {
        return Err(PromptError::MissingBinding(name.to_string()));
    }
    b.insert(name.to_string(), value);
    Ok(())
}

fn bind_context(b: &mut Bindings, name: &str, ctx: &ContextWindow) -> Result<(), PromptError> {
    if ctx.is_empty() {
        return Err(PromptError::MissingBinding(name.to_string()));
    }
    bind(b, name, ctx.formatted_text.clone())
}
