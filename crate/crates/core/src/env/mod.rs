//! Node generation backends.

pub mod extract;
pub mod llm;
pub mod prompts;
pub mod synthetic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extract::{extract_answer, Extraction};

/// One problem instance handed to a search.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    #[serde(default)]
    pub instance: u64,
    pub text: String,
    /// Reference answer for grading, when known.
    #[serde(default)]
    pub reference: Option<String>,
}

/// Generation unit of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    /// One reasoning step per node, cut at the step delimiter.
    #[default]
    Sequential,
    /// A whole solution per node.
    Full,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub token_count: u64,
    pub natural_stop: bool,
    pub truncated_by_delimiter: bool,
    pub truncated_by_limit: bool,
    /// `token_count` is a whitespace estimate because the server sent no usage.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub token_estimated: bool,
}

impl GenerationResult {
    pub fn natural(text: impl Into<String>, token_count: u64) -> Self {
        Self::with_flags(text, token_count, true, false, false)
    }

    pub fn at_delimiter(text: impl Into<String>, token_count: u64) -> Self {
        Self::with_flags(text, token_count, false, true, false)
    }

    pub fn at_limit(text: impl Into<String>, token_count: u64) -> Self {
        Self::with_flags(text, token_count, false, false, true)
    }

    fn with_flags(text: impl Into<String>, token_count: u64, n: bool, d: bool, l: bool) -> Self {
        GenerationResult {
            text: text.into(),
            token_count,
            natural_stop: n,
            truncated_by_delimiter: d,
            truncated_by_limit: l,
            token_estimated: false,
        }
    }
}

/// A generated child plus backend-specific hints.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub result: GenerationResult,
    /// The backend refuses to continue below this node (e.g. a depth cap).
    pub terminal: bool,
}

/// One step on the root-to-node path, root excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathStep<'a> {
    /// Position of the node among its siblings.
    pub slot: u32,
    pub text: &'a str,
    pub continuation: bool,
}

#[derive(Debug, Clone)]
pub struct ExpansionRequest<'a> {
    pub problem: &'a Problem,
    /// Steps from the root to the node being expanded.
    pub steps: Vec<PathStep<'a>>,
    /// Slot assigned to the first new child; the rest follow consecutively.
    pub first_slot: u32,
    pub n_children: usize,
    pub mode: GenerationMode,
    /// Expanding an answered node through the wait-continuation prompt.
    pub continuation: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("transient generation failure: {message}")]
    Transient { message: String, tokens_spent: u64 },
    #[error("generation failed: {0}")]
    Fatal(String),
}

impl EnvError {
    pub fn tokens_spent(&self) -> u64 {
        match self {
            EnvError::Transient { tokens_spent, .. } => *tokens_spent,
            EnvError::Fatal(_) => 0,
        }
    }
}

/// Produces children for a node. Implementations must tolerate concurrent
/// calls from independent searches.
pub trait Environment: Send + Sync {
    fn expand(&self, request: &ExpansionRequest<'_>) -> Result<Vec<Generated>, EnvError>;
}

impl<T: Environment + ?Sized> Environment for &T {
    fn expand(&self, request: &ExpansionRequest<'_>) -> Result<Vec<Generated>, EnvError> {
        (**self).expand(request)
    }
}

impl<T: Environment + ?Sized> Environment for std::sync::Arc<T> {
    fn expand(&self, request: &ExpansionRequest<'_>) -> Result<Vec<Generated>, EnvError> {
        (**self).expand(request)
    }
}

impl<T: Environment + ?Sized> Environment for Box<T> {
    fn expand(&self, request: &ExpansionRequest<'_>) -> Result<Vec<Generated>, EnvError> {
        (**self).expand(request)
    }
}
