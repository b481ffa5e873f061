//! Budget-agnostic comparison methods. They share the engine's ledger,
//! tracing and environments, so every budget and trace invariant carries over.

use crate::config::{Method, PolicyConfig};
use crate::engine::{run_search, EngineError, SearchRun, SearchState, Selection, StopReason};
use crate::env::{Environment, GenerationMode, Problem};
use crate::eval::Evaluator;
use crate::harness::trace::{Phase, TraceSink};
use crate::tree::NodeId;

/// Independent full solutions from the root until the budget runs out.
/// The tree is a star.
pub fn repeated_sampling(
    problem: &Problem,
    budget: u64,
    env: &dyn Environment,
    evaluator: &dyn Evaluator,
    sink: &mut dyn TraceSink,
) -> Result<SearchRun, EngineError> {
    let mut st = SearchState::new(problem, budget, env, evaluator, sink, GenerationMode::Full, false)?;
    let root = NodeId::ROOT;
    while !st.ledger.exhausted() {
        if st.tree.node(root).terminal {
            return Ok(st.finish(StopReason::AllTerminal));
        }
        st.begin_iteration();
        let widen = !st.tree.node(root).is_leaf();
        st.emit_select(&Selection { node: root, widen, path: vec![root], scores: Vec::new() });
        let phase = if widen { Phase::Widen } else { Phase::Expand };
        let children = st.expand(root, 1, phase)?;
        st.evaluate_and_backprop(&children)?;
        st.end_iteration();
    }
    Ok(st.finish(StopReason::BudgetExhausted))
}

/// One chain of full solutions; each answered solution is followed by the
/// wait-continuation prompt and generated again. The tree is a path.
pub fn sequential_refinement(
    problem: &Problem,
    budget: u64,
    env: &dyn Environment,
    evaluator: &dyn Evaluator,
    sink: &mut dyn TraceSink,
) -> Result<SearchRun, EngineError> {
    let mut st = SearchState::new(problem, budget, env, evaluator, sink, GenerationMode::Full, true)?;
    let mut tip = NodeId::ROOT;
    let mut path = vec![tip];
    while !st.ledger.exhausted() {
        if st.tree.node(tip).terminal {
            return Ok(st.finish(StopReason::AllTerminal));
        }
        st.begin_iteration();
        st.emit_select(&Selection { node: tip, widen: false, path: path.clone(), scores: Vec::new() });
        let children = st.expand(tip, 1, Phase::Expand)?;
        st.evaluate_and_backprop(&children)?;
        st.end_iteration();
        if let Some(&c) = children.first() {
            tip = c;
            path.push(c);
        }
    }
    Ok(st.finish(StopReason::BudgetExhausted))
}

/// PUCT search that stops as soon as an answered node scores at least
/// `epsilon`. Models only the early-stopping rule of LiteSearch, not its
/// value-guided selection or dynamic expansion widths.
pub fn early_stop_search(
    problem: &Problem,
    budget: u64,
    env: &dyn Environment,
    evaluator: &dyn Evaluator,
    epsilon: f64,
    config: &PolicyConfig,
    sink: &mut dyn TraceSink,
) -> Result<SearchRun, EngineError> {
    let config = PolicyConfig { method: Method::EarlyStop, epsilon_stop: epsilon, ..config.clone() };
    run_search(problem, budget, env, evaluator, &config, sink)
}

/// Dispatches on `config.method`.
pub fn run_method(
    problem: &Problem,
    budget: u64,
    env: &dyn Environment,
    evaluator: &dyn Evaluator,
    config: &PolicyConfig,
    sink: &mut dyn TraceSink,
) -> Result<SearchRun, EngineError> {
    match config.method {
        Method::BgMcts | Method::Mcts => run_search(problem, budget, env, evaluator, config, sink),
        Method::EarlyStop => early_stop_search(problem, budget, env, evaluator, config.epsilon_stop, config, sink),
        Method::Repeated => repeated_sampling(problem, budget, env, evaluator, sink),
        Method::Refinement => sequential_refinement(problem, budget, env, evaluator, sink),
    }
}
