#![allow(dead_code)]

pub mod dd;
pub mod reference;
pub mod server;

use bgmcts::env::{EnvError, Environment, ExpansionRequest, Generated, GenerationResult, Problem};
use bgmcts::eval::{EvalError, Evaluation, EvaluationRequest, Evaluator};
use bgmcts::tree::SearchTree;

type ExpandFn = dyn Fn(&ExpansionRequest<'_>) -> Result<Vec<Generated>, EnvError> + Send + Sync;
type EvalFn = dyn Fn(&EvaluationRequest<'_>) -> Result<Evaluation, EvalError> + Send + Sync;

/// Environment backed by a closure.
pub struct FnEnv(pub Box<ExpandFn>);

impl FnEnv {
    pub fn new(f: impl Fn(&ExpansionRequest<'_>) -> Result<Vec<Generated>, EnvError> + Send + Sync + 'static) -> Self {
        FnEnv(Box::new(f))
    }
}

impl Environment for FnEnv {
    fn expand(&self, request: &ExpansionRequest<'_>) -> Result<Vec<Generated>, EnvError> {
        (self.0)(request)
    }
}

/// Evaluator backed by a closure.
pub struct FnEval(pub Box<EvalFn>);

impl FnEval {
    pub fn new(f: impl Fn(&EvaluationRequest<'_>) -> Result<Evaluation, EvalError> + Send + Sync + 'static) -> Self {
        FnEval(Box::new(f))
    }

    pub fn constant(q: f64) -> Self {
        FnEval::new(move |_| Ok(Evaluation::score(q)))
    }
}

impl Evaluator for FnEval {
    fn evaluate(&self, request: &EvaluationRequest<'_>) -> Result<Evaluation, EvalError> {
        (self.0)(request)
    }
}

/// Every child costs `tau` tokens and stops at the step delimiter; children
/// at `answer_depth` carry a boxed answer instead.
pub fn fixed_cost_env(tau: u64, answer_depth: Option<usize>) -> FnEnv {
    FnEnv::new(move |req| {
        let depth = req.steps.len() + 1;
        Ok((0..req.n_children)
            .map(|i| {
                let slot = req.first_slot as usize + i;
                let result = if Some(depth) == answer_depth {
                    GenerationResult::natural(format!("so the answer is \\boxed{{{slot}}}"), tau)
                } else {
                    GenerationResult::at_delimiter(format!("step {depth}.{slot}"), tau)
                };
                Generated { result, terminal: false }
            })
            .collect())
    })
}

pub fn problem(text: &str) -> Problem {
    Problem { id: "p".into(), instance: 0, text: text.into(), reference: None }
}

#[derive(Debug, serde::Deserialize)]
pub struct ExtractionCase {
    pub name: String,
    pub text: String,
    /// `natural`, `delimiter` or `limit`.
    pub stop: String,
    pub answered: bool,
    pub answer: Option<String>,
}

impl ExtractionCase {
    pub fn result(&self) -> GenerationResult {
        let tokens = bgmcts::chat::estimate_tokens(&self.text);
        match self.stop.as_str() {
            "natural" => GenerationResult::natural(self.text.clone(), tokens),
            "delimiter" => GenerationResult::at_delimiter(self.text.clone(), tokens),
            "limit" => GenerationResult::at_limit(self.text.clone(), tokens),
            other => panic!("unknown stop kind {other}"),
        }
    }
}

pub fn extraction_cases() -> Vec<ExtractionCase> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/extraction.json");
    serde_json::from_str(&std::fs::read_to_string(path).expect("fixture present")).expect("fixture parses")
}

/// `(m, w, d_sum)` of every node by walking its subtree.
pub fn brute_force(t: &SearchTree) -> Vec<(u64, f64, f64)> {
    let nodes = t.nodes();
    let mut out = Vec::with_capacity(nodes.len());
    for n in nodes {
        let mut stack = vec![n.id];
        let (mut m, mut w, mut d) = (0u64, 0.0, 0.0);
        while let Some(x) = stack.pop() {
            let node = t.node(x);
            m += 1;
            w += node.q_value;
            d += node.depth as f64;
            stack.extend_from_slice(t.children(x));
        }
        out.push((m, w, d));
    }
    out
}
