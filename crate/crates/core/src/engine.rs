//! The budgeted search loop: select, expand, evaluate, backpropagate, charge.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::budget::{BudgetError, BudgetLedger};
use crate::config::{Method, PolicyConfig};
use crate::env::{extract_answer, EnvError, Environment, ExpansionRequest, GenerationMode, PathStep, Problem};
use crate::eval::{EvalError, EvaluationRequest, Evaluator};
use crate::harness::trace::{ChildRecord, Payload, Phase, TraceEvent, TraceSink};
use crate::policy::{pick_best, score_candidates, Candidate, ParentView, ScoredChild};
use crate::tree::{NewNode, NodeId, SearchTree, TreeError};

/// Retries after a failed generation call before the node is given up.
pub const EXPANSION_RETRIES: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    BudgetExhausted,
    AllTerminal,
    EarlyStopThreshold,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::BudgetExhausted => "budget-exhausted",
            StopReason::AllTerminal => "all-terminal",
            StopReason::EarlyStopThreshold => "early-stop-threshold",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best_answer: Option<String>,
    pub best_answer_node: Option<NodeId>,
    pub c_used_final: u64,
    pub budget: u64,
    pub iterations: u64,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone)]
pub struct SearchRun {
    pub outcome: SearchOutcome,
    pub tree: SearchTree,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Budget(#[from] BudgetError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("evaluating {node} failed: {source}")]
    Evaluator { node: NodeId, source: EvalError },
    #[error("evaluator returned non-finite score {q} for {node}")]
    NonFiniteScore { node: NodeId, q: f64 },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Where descent stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub node: NodeId,
    /// Generate one extra child at an internal node instead of a leaf expansion.
    pub widen: bool,
    pub path: Vec<NodeId>,
    pub scores: Vec<ScoredChild>,
}

/// Every node is terminal or leads only to terminal nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no expandable node left")]
pub struct AllTerminal;

/// Descends from the root. At each internal node the argmax of the unified
/// score decides between a standard child and, for budget-guided search, the
/// generative option. Terminal children are never candidates; a child whose
/// whole subtree turns out to be exhausted is excluded and the argmax redone.
pub fn select(tree: &SearchTree, rho: f64, config: &PolicyConfig) -> Result<Selection, AllTerminal> {
    let root = tree.root();
    if tree.node(root).terminal {
        return Err(AllTerminal);
    }
    let mut path = Vec::new();
    descend(tree, root, rho, config, &mut path).ok_or(AllTerminal)
}

fn descend(
    tree: &SearchTree,
    node: NodeId,
    rho: f64,
    config: &PolicyConfig,
    path: &mut Vec<NodeId>,
) -> Option<Selection> {
    path.push(node);
    if tree.node(node).is_leaf() {
        return Some(Selection { node, widen: false, path: path.clone(), scores: Vec::new() });
    }
    let d_hat = tree.d_hat_ans();
    let mut dead: HashSet<NodeId> = HashSet::new();
    loop {
        let mut view = ParentView::from_tree(tree, node);
        for c in view.children.iter_mut() {
            if dead.contains(&c.id) {
                c.selectable = false;
            }
        }
        let scores = score_candidates(&view, rho, d_hat, config);
        match pick_best(&scores) {
            None => {
                path.pop();
                return None;
            }
            Some(ScoredChild { child: Candidate::Generative, .. }) => {
                return Some(Selection { node, widen: true, path: path.clone(), scores });
            }
            Some(ScoredChild { child: Candidate::Child(c), .. }) => {
                if let Some(mut sel) = descend(tree, c, rho, config, path) {
                    if sel.scores.is_empty() && sel.node == c {
                        // A leaf: record the decision that led to it.
                        sel.scores = scores;
                    }
                    return Some(sel);
                }
                dead.insert(c);
            }
        }
    }
}

/// Mutable state shared by the search loop and the baselines.
pub(crate) struct SearchState<'a> {
    pub problem: &'a Problem,
    env: &'a dyn Environment,
    evaluator: &'a dyn Evaluator,
    sink: &'a mut dyn TraceSink,
    pub tree: SearchTree,
    pub ledger: BudgetLedger,
    pub iteration: u64,
    pub mode: GenerationMode,
    pub allow_wait: bool,
    run_id: String,
    iter_c_used: u64,
    iter_rho: f64,
    pending_tokens: u64,
}

impl<'a> SearchState<'a> {
    pub fn new(
        problem: &'a Problem,
        budget: u64,
        env: &'a dyn Environment,
        evaluator: &'a dyn Evaluator,
        sink: &'a mut dyn TraceSink,
        mode: GenerationMode,
        allow_wait: bool,
    ) -> Result<Self, EngineError> {
        let ledger = BudgetLedger::new(budget)?;
        let run_id = sink.run_id().to_string();
        Ok(SearchState {
            problem,
            env,
            evaluator,
            sink,
            tree: SearchTree::new(problem.text.clone()),
            ledger,
            iteration: 0,
            mode,
            allow_wait,
            run_id,
            iter_c_used: 0,
            iter_rho: 1.0,
            pending_tokens: 0,
        })
    }

    pub fn begin_iteration(&mut self) -> f64 {
        self.iter_c_used = self.ledger.used();
        self.iter_rho = self.ledger.rho();
        self.pending_tokens = 0;
        self.iter_rho
    }

    pub fn emit(&mut self, phase: Phase, node_id: NodeId, payload: Payload) {
        self.sink.record(TraceEvent {
            run_id: self.run_id.clone(),
            iteration: self.iteration,
            phase,
            node_id,
            c_used: self.iter_c_used,
            rho: self.iter_rho,
            payload,
        });
    }

    pub fn emit_select(&mut self, sel: &Selection) {
        let payload = Payload::Select {
            path: sel.path.clone(),
            widen: sel.widen,
            d_hat: self.tree.d_hat_ans(),
            scores: sel.scores.clone(),
        };
        self.emit(Phase::Select, sel.node, payload);
    }

    fn steps_to(&self, id: NodeId) -> Vec<PathStep<'_>> {
        self.tree.path_to(id)[1..]
            .iter()
            .map(|&n| {
                let node = self.tree.node(n);
                PathStep { slot: node.slot, text: &node.text, continuation: node.continuation }
            })
            .collect()
    }

    /// Generates `n` children of `parent`. On repeated failure the parent is
    /// marked terminal and no children are returned.
    pub fn expand(&mut self, parent: NodeId, n: usize, phase: Phase) -> Result<Vec<NodeId>, EngineError> {
        let continuation = self.tree.node(parent).answered;
        let mut attempt = 0;
        let generated = loop {
            let request = ExpansionRequest {
                problem: self.problem,
                steps: self.steps_to(parent),
                first_slot: self.tree.children(parent).len() as u32,
                n_children: n,
                mode: self.mode,
                continuation,
            };
            match self.env.expand(&request) {
                Ok(g) => break g,
                Err(err) => {
                    let give_up = matches!(err, EnvError::Fatal(_)) || attempt >= EXPANSION_RETRIES;
                    let tokens = err.tokens_spent();
                    self.pending_tokens += tokens;
                    if give_up {
                        self.tree.mark_terminal(parent)?;
                    }
                    log::warn!("expansion of {parent} failed (attempt {attempt}): {err}");
                    self.emit(
                        phase,
                        parent,
                        Payload::ExpandFailed {
                            parent,
                            attempt,
                            error: err.to_string(),
                            tokens,
                            marked_terminal: give_up,
                        },
                    );
                    if give_up {
                        return Ok(Vec::new());
                    }
                    attempt += 1;
                }
            }
        };
        let mut ids = Vec::with_capacity(generated.len());
        let mut records = Vec::with_capacity(generated.len());
        let mut tokens = 0;
        for g in generated {
            let ex = extract_answer(&g.result.text, &g.result);
            let terminal = g.terminal || (ex.answered && !self.allow_wait);
            tokens += g.result.token_count;
            let id = self.tree.add_child(
                parent,
                NewNode {
                    text: g.result.text.clone(),
                    token_cost: g.result.token_count,
                    answered: ex.answered,
                    answer: ex.answer.clone(),
                    terminal,
                    continuation,
                },
            )?;
            let node = self.tree.node(id);
            records.push(ChildRecord {
                id,
                slot: node.slot,
                depth: node.depth,
                text: g.result.text,
                token_cost: g.result.token_count,
                answered: ex.answered,
                answer: ex.answer,
                terminal,
                continuation,
                token_estimated: g.result.token_estimated,
            });
            ids.push(id);
        }
        self.pending_tokens += tokens;
        self.emit(phase, parent, Payload::Expand { parent, tokens, children: records });
        Ok(ids)
    }

    pub fn evaluate_and_backprop(&mut self, children: &[NodeId]) -> Result<(), EngineError> {
        for &id in children {
            let request = EvaluationRequest { problem: self.problem, steps: self.steps_to(id), mode: self.mode };
            let ev = self.evaluator.evaluate(&request).map_err(|source| EngineError::Evaluator { node: id, source })?;
            if !ev.q.is_finite() {
                return Err(EngineError::NonFiniteScore { node: id, q: ev.q });
            }
            self.tree.assign_q(id, ev.q)?;
            self.emit(Phase::Evaluate, id, Payload::Evaluate { q: ev.q, rationale: ev.rationale });
        }
        for &id in children {
            self.tree.update_statistics(id)?;
            let node = self.tree.node(id);
            let mut ancestors = self.tree.path_to(id);
            ancestors.pop();
            let payload = Payload::Backprop { ancestors, q: node.q_value, depth: node.depth };
            self.emit(Phase::Backprop, id, payload);
        }
        Ok(())
    }

    pub fn end_iteration(&mut self) {
        self.ledger.charge(self.pending_tokens);
        self.pending_tokens = 0;
        self.iteration += 1;
    }

    pub fn finish(mut self, reason: StopReason) -> SearchRun {
        let best = self.tree.best_answered();
        let outcome = SearchOutcome {
            best_answer: best.and_then(|n| n.answer.clone()),
            best_answer_node: best.map(|n| n.id),
            c_used_final: self.ledger.used(),
            budget: self.ledger.budget(),
            iterations: self.iteration,
            stop_reason: reason,
        };
        self.iter_c_used = self.ledger.used();
        self.iter_rho = self.ledger.rho();
        let payload = Payload::Stop {
            reason,
            best_node: outcome.best_answer_node,
            best_answer: outcome.best_answer.clone(),
            c_used_final: outcome.c_used_final,
            iterations: outcome.iterations,
        };
        self.emit(Phase::Stop, outcome.best_answer_node.unwrap_or(NodeId::ROOT), payload);
        SearchRun { outcome, tree: self.tree }
    }
}

/// Tree search over sequential generation units.
pub fn run_search(
    problem: &Problem,
    budget: u64,
    env: &dyn Environment,
    evaluator: &dyn Evaluator,
    config: &PolicyConfig,
    sink: &mut dyn TraceSink,
) -> Result<SearchRun, EngineError> {
    run_search_in_mode(problem, budget, env, evaluator, config, GenerationMode::Sequential, sink)
}

pub fn run_search_in_mode(
    problem: &Problem,
    budget: u64,
    env: &dyn Environment,
    evaluator: &dyn Evaluator,
    config: &PolicyConfig,
    mode: GenerationMode,
    sink: &mut dyn TraceSink,
) -> Result<SearchRun, EngineError> {
    config.validate().map_err(EngineError::Config)?;
    if !matches!(config.method, Method::BgMcts | Method::Mcts | Method::EarlyStop) {
        return Err(EngineError::Config(format!("{} is not a tree-search method", config.method)));
    }
    let mut st = SearchState::new(problem, budget, env, evaluator, sink, mode, config.allow_wait_continuation)?;
    while !st.ledger.exhausted() {
        let rho = st.begin_iteration();
        let sel = match select(&st.tree, rho, config) {
            Ok(s) => s,
            Err(AllTerminal) => return Ok(st.finish(StopReason::AllTerminal)),
        };
        st.emit_select(&sel);
        let (n, phase) = if sel.widen { (1, Phase::Widen) } else { (config.k_leaf, Phase::Expand) };
        let children = st.expand(sel.node, n, phase)?;
        st.evaluate_and_backprop(&children)?;
        st.end_iteration();
        if config.method == Method::EarlyStop
            && children.iter().any(|&c| {
                let node = st.tree.node(c);
                node.answered && node.q_value >= config.epsilon_stop
            })
        {
            return Ok(st.finish(StopReason::EarlyStopThreshold));
        }
    }
    Ok(st.finish(StopReason::BudgetExhausted))
}
