//! The eleven TCFD questions, their specific guidelines and the seed general
//! guidelines, loaded from `data/tcfd_catalog.json` or a user-supplied copy.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PromptError;

const BUILTIN_CATALOG: &str = include_str!("../../data/tcfd_catalog.json");

pub const QUESTION_COUNT: u8 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Governance,
    Strategy,
    RiskManagement,
    MetricsTargets,
}

impl Category {
    pub fn for_index(index: u8) -> Option<Category> {
        match index {
            1..=2 => Some(Category::Governance),
            3..=5 => Some(Category::Strategy),
            6..=8 => Some(Category::RiskManagement),
            9..=11 => Some(Category::MetricsTargets),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::Governance => "Governance",
            Category::Strategy => "Strategy",
            Category::RiskManagement => "Risk Management",
            Category::MetricsTargets => "Metrics and Targets",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcfdQuestion {
    pub index: u8,
    pub category: Category,
    pub recommendation_text: String,
    pub question_text: String,
    /// Stored without its list number; numbered after the general guidelines
    /// when rendered.
    pub specific_guideline: String,
    /// Disclosure requirements the conformity prompt checks against.
    pub requirements: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionCatalog {
    pub general_guidelines: Vec<String>,
    pub cqa_guideline: String,
    pub questions: Vec<TcfdQuestion>,
}

impl QuestionCatalog {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_CATALOG).expect("builtin catalog is valid")
    }

    pub fn from_json(json: &str) -> Result<Self, PromptError> {
        let catalog: QuestionCatalog =
            serde_json::from_str(json).map_err(|e| PromptError::InvalidCatalog(e.to_string()))?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn from_path(path: &Path) -> Result<Self, PromptError> {
        let json = std::fs::read_to_string(path)
            .map_err(|e| PromptError::InvalidCatalog(format!("{}: {e}", path.display())))?;
        Self::from_json(&json)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let bad = |msg: String| Err(PromptError::InvalidCatalog(msg));
        if self.questions.len() != QUESTION_COUNT as usize {
            return bad(format!(
                "expected 11 questions, found {}",
                self.questions.len()
            ));
        }
        for (i, q) in self.questions.iter().enumerate() {
            let expected = i as u8 + 1;
            if q.index != expected {
                return bad(format!(
                    "question at position {expected} has index {}",
                    q.index
                ));
            }
            if Category::for_index(q.index) != Some(q.category) {
                return bad(format!(
                    "question {} has category {:?}",
                    q.index, q.category
                ));
            }
            if q.specific_guideline.trim().is_empty() {
                return bad(format!("question {} has no specific guideline", q.index));
            }
            if q.question_text.trim().is_empty() || q.recommendation_text.trim().is_empty() {
                return bad(format!("question {} is missing text", q.index));
            }
        }
        if self.general_guidelines.iter().any(|g| g.trim().is_empty()) {
            return bad("empty general guideline".into());
        }
        Ok(())
    }

    pub fn question(&self, index: u8) -> Option<&TcfdQuestion> {
        self.questions.iter().find(|q| q.index == index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &TcfdQuestion> {
        self.questions.iter()
    }
}
