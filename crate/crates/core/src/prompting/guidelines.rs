use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::catalog::QuestionCatalog;

pub const ANSWER_LENGTH_PLACEHOLDER: &str = "{answer_length}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Seed,
    ExpertFeedback { feedback_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidelineEntry {
    pub text: String,
    pub provenance: Provenance,
}

impl GuidelineEntry {
    pub fn seed(text: impl Into<String>) -> Self {
        GuidelineEntry {
            text: text.into(),
            provenance: Provenance::Seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scope", content = "question_index", rename_all = "snake_case")]
pub enum GuidelineScope {
    General,
    Specific(u8),
}

/// Versioned guidelines: an ordered general list plus at most one specific
/// guideline per question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidelineList {
    pub version: u32,
    pub general: Vec<GuidelineEntry>,
    #[serde(default)]
    pub specific: BTreeMap<u8, GuidelineEntry>,
}

impl GuidelineList {
    /// Version 1: the catalog's general guidelines and per-question guidelines.
    pub fn seed(catalog: &QuestionCatalog) -> Self {
        GuidelineList {
            version: 1,
            general: catalog
                .general_guidelines
                .iter()
                .map(GuidelineEntry::seed)
                .collect(),
            specific: catalog
                .iter()
                .map(|q| (q.index, GuidelineEntry::seed(q.specific_guideline.clone())))
                .collect(),
        }
    }

    pub fn specific_for(&self, question_index: u8) -> Option<&str> {
        self.specific.get(&question_index).map(|e| e.text.as_str())
    }

    /// Numbered lines `1. ...`, general guidelines first, then `extra` (if any)
    /// as the next number. `{answer_length}` is substituted.
    pub fn render_block(&self, answer_length: u32, extra: Option<&str>) -> String {
        let length = answer_length.to_string();
        self.general
            .iter()
            .map(|e| e.text.as_str())
            .chain(extra)
            .enumerate()
            .map(|(i, text)| {
                format!(
                    "{}. {}",
                    i + 1,
                    text.replace(ANSWER_LENGTH_PLACEHOLDER, &length)
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Returns a new list one version up. General guidelines are appended;
    /// a specific guideline replaces the question's current one.
    pub fn with_guideline(
        &self,
        text: impl Into<String>,
        scope: GuidelineScope,
        provenance: Provenance,
    ) -> GuidelineList {
        let entry = GuidelineEntry {
            text: text.into(),
            provenance,
        };
        let mut next = self.clone();
        next.version += 1;
        match scope {
            GuidelineScope::General => next.general.push(entry),
            GuidelineScope::Specific(q) => {
                next.specific.insert(q, entry);
            }
        }
        next
    }
}
