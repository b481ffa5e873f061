//! Append-only search traces.
//!
//! Every phase of every iteration is recorded with the token usage and budget
//! ratio at the start of that iteration. The stream is complete: replaying it
//! rebuilds the final tree exactly.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::StopReason;
use crate::policy::ScoredChild;
use crate::tree::{NewNode, NodeId, SearchTree, TreeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Select,
    Expand,
    Widen,
    Evaluate,
    Backprop,
    Stop,
}

/// A node as created by an expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildRecord {
    pub id: NodeId,
    pub slot: u32,
    pub depth: u32,
    pub text: String,
    pub token_cost: u64,
    pub answered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    pub terminal: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub continuation: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub token_estimated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Select {
        path: Vec<NodeId>,
        widen: bool,
        d_hat: f64,
        /// Candidates scored at the node where descent ended.
        scores: Vec<ScoredChild>,
    },
    Expand {
        parent: NodeId,
        tokens: u64,
        children: Vec<ChildRecord>,
    },
    ExpandFailed {
        parent: NodeId,
        attempt: u32,
        error: String,
        tokens: u64,
        marked_terminal: bool,
    },
    Evaluate {
        q: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rationale: Option<String>,
    },
    Backprop {
        ancestors: Vec<NodeId>,
        q: f64,
        depth: u32,
    },
    Stop {
        reason: StopReason,
        best_node: Option<NodeId>,
        best_answer: Option<String>,
        c_used_final: u64,
        iterations: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub run_id: String,
    pub iteration: u64,
    pub phase: Phase,
    pub node_id: NodeId,
    pub c_used: u64,
    pub rho: f64,
    pub payload: Payload,
}

impl TraceEvent {
    /// Tokens charged by this event.
    pub fn tokens(&self) -> u64 {
        match &self.payload {
            Payload::Expand { tokens, .. } | Payload::ExpandFailed { tokens, .. } => *tokens,
            _ => 0,
        }
    }
}

pub trait TraceSink {
    fn record(&mut self, event: TraceEvent);

    /// Identifier stamped on events emitted into this sink.
    fn run_id(&self) -> &str {
        ""
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl TraceSink for NullSink {
    fn record(&mut self, _event: TraceEvent) {}
}

#[derive(Debug, Default, Clone)]
pub struct VecSink {
    pub run_id: String,
    pub events: Vec<TraceEvent>,
}

impl VecSink {
    pub fn new(run_id: impl Into<String>) -> Self {
        VecSink { run_id: run_id.into(), events: Vec::new() }
    }
}

impl TraceSink for VecSink {
    fn record(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    fn run_id(&self) -> &str {
        &self.run_id
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("event {index} does not fit the tree: {reason}")]
    Inconsistent { index: usize, reason: String },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Writes events as JSON lines.
pub fn write_jsonl<W: Write>(mut out: W, events: &[TraceEvent]) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<TraceEvent>, TraceError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| TraceError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

/// Rebuilds the tree described by a trace.
pub fn replay(root_text: &str, events: &[TraceEvent]) -> Result<SearchTree, TraceError> {
    let mut tree = SearchTree::new(root_text);
    for (index, e) in events.iter().enumerate() {
        apply(&mut tree, index, e)?;
    }
    Ok(tree)
}

pub(crate) fn apply(tree: &mut SearchTree, index: usize, e: &TraceEvent) -> Result<(), TraceError> {
    let bad = |reason: String| TraceError::Inconsistent { index, reason };
    match &e.payload {
        Payload::Expand { parent, children, .. } => {
            for c in children {
                let id = tree.add_child(
                    *parent,
                    NewNode {
                        text: c.text.clone(),
                        token_cost: c.token_cost,
                        answered: c.answered,
                        answer: c.answer.clone(),
                        terminal: c.terminal,
                        continuation: c.continuation,
                    },
                )?;
                if id != c.id || tree.node(id).slot != c.slot || tree.node(id).depth != c.depth {
                    return Err(bad(format!("child {} recreated as {}", c.id, id)));
                }
            }
        }
        Payload::ExpandFailed { parent, marked_terminal, .. } => {
            if *marked_terminal {
                tree.mark_terminal(*parent)?;
            }
        }
        Payload::Evaluate { q, .. } => tree.assign_q(e.node_id, *q)?,
        Payload::Backprop { .. } => tree.update_statistics(e.node_id)?,
        Payload::Select { .. } | Payload::Stop { .. } => {}
    }
    Ok(())
}
