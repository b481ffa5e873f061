//! Fixed-budget tree-search decoding.
//!
//! The crate implements budget-guided Monte Carlo tree search (BG-MCTS) next to
//! its budget-agnostic baselines (standard PUCT search, repeated sampling,
//! sequential refinement and a threshold early-stopping search). Node
//! generators and evaluators are pluggable: a deterministic synthetic world is
//! bundled for desk-scale experiments, and chat-completions clients talk to
//! real LLM and process-reward-model servers.
//!
//! ```no_run
//! use bgmcts::prelude::*;
//!
//! let world = SyntheticWorld::new(SyntheticWorldSpec::default());
//! let env = SyntheticEnvironment::new(world.clone());
//! let evaluator = OracleEvaluator::new(world.clone());
//! let problem = world.problem(0);
//! let mut sink = VecSink::default();
//! let run = run_search(&problem, 4000, &env, &evaluator, &PolicyConfig::default(), &mut sink)
//!     .unwrap();
//! println!("{:?}", run.outcome.best_answer);
//! ```

pub mod baselines;
pub mod budget;
pub mod chat;
pub mod config;
pub mod engine;
pub mod env;
pub mod eval;
pub mod harness;
pub mod policy;
pub mod tree;

pub mod prelude {
    pub use crate::baselines::{early_stop_search, repeated_sampling, sequential_refinement};
    pub use crate::budget::BudgetLedger;
    pub use crate::config::{Method, PolicyConfig};
    pub use crate::engine::{run_search, SearchOutcome, SearchRun, StopReason};
    pub use crate::env::synthetic::{SyntheticEnvironment, SyntheticWorld, SyntheticWorldSpec};
    pub use crate::env::{Environment, GenerationMode, GenerationResult, Problem};
    pub use crate::eval::oracle::OracleEvaluator;
    pub use crate::eval::{Evaluation, Evaluator};
    pub use crate::harness::trace::{NullSink, TraceEvent, TraceSink, VecSink};
    pub use crate::tree::{NodeId, SearchNode, SearchTree};
}
