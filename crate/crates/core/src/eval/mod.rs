//! Node scoring backends.

pub mod oracle;
pub mod prm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{GenerationMode, PathStep, Problem};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub q: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

impl Evaluation {
    pub fn score(q: f64) -> Self {
        Evaluation { q, rationale: None }
    }
}

#[derive(Debug, Clone)]
pub struct EvaluationRequest<'a> {
    pub problem: &'a Problem,
    /// Steps from the root to the evaluated node, the node's own step last.
    pub steps: Vec<PathStep<'a>>,
    pub mode: GenerationMode,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    EmptyHistory,
    #[error("unparseable judgement: {raw}")]
    Unparseable { raw: String },
    #[error("evaluator request failed: {0}")]
    Request(String),
    #[error("evaluator produced a non-finite score {0}")]
    NonFinite(f64),
}

/// Assigns a scalar value to a node. Implementations must tolerate concurrent
/// calls from independent searches.
pub trait Evaluator: Send + Sync {
    fn evaluate(&self, request: &EvaluationRequest<'_>) -> Result<Evaluation, EvalError>;
}

impl<T: Evaluator + ?Sized> Evaluator for &T {
    fn evaluate(&self, request: &EvaluationRequest<'_>) -> Result<Evaluation, EvalError> {
        (**self).evaluate(request)
    }
}

impl<T: Evaluator + ?Sized> Evaluator for std::sync::Arc<T> {
    fn evaluate(&self, request: &EvaluationRequest<'_>) -> Result<Evaluation, EvalError> {
        (**self).evaluate(request)
    }
}

impl<T: Evaluator + ?Sized> Evaluator for Box<T> {
    fn evaluate(&self, request: &EvaluationRequest<'_>) -> Result<Evaluation, EvalError> {
        (**self).evaluate(request)
    }
}
