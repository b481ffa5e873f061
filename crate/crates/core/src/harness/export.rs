//! Tree export: Graphviz DOT and a JSON node table.

use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::metrics::Grader;
use crate::tree::{SearchNode, SearchTree, TreeError};

/// Number of expansion-order shading buckets; later buckets are darker.
pub const SHADE_BUCKETS: u32 = 5;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub method: String,
    pub budget: u64,
    pub seed: u64,
    pub instance: u64,
    pub problem_id: String,
    pub reference: Option<String>,
    pub best_answer: Option<String>,
    pub best_answer_node: Option<u32>,
    pub c_used_final: u64,
    pub iterations: u64,
    pub stop_reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpNode {
    #[serde(flatten)]
    pub node: SearchNode,
    /// Graded against the run's reference; false for unanswered nodes.
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDump {
    pub meta: RunMeta,
    pub nodes: Vec<DumpNode>,
}

impl TreeDump {
    pub fn new(meta: RunMeta, tree: &SearchTree, grader: &dyn Grader) -> Self {
        let reference = meta.reference.clone();
        let nodes = tree
            .nodes()
            .iter()
            .map(|n| DumpNode {
                correct: n.answered && n.answer.as_deref().is_some_and(|a| grader.grade(reference.as_deref(), a)),
                node: n.clone(),
            })
            .collect();
        TreeDump { meta, nodes }
    }

    pub fn to_tree(&self) -> Result<SearchTree, TreeError> {
        SearchTree::from_nodes(self.nodes.iter().map(|n| n.node.clone()).collect())
    }

    pub fn write<W: Write>(&self, out: W) -> serde_json::Result<()> {
        serde_json::to_writer_pretty(out, self)
    }

    pub fn read<R: Read>(input: R) -> serde_json::Result<Self> {
        serde_json::from_reader(input)
    }

    pub fn to_dot(&self) -> String {
        let correct: Vec<bool> = self.nodes.iter().map(|n| n.correct).collect();
        let nodes: Vec<&SearchNode> = self.nodes.iter().map(|n| &n.node).collect();
        render_dot(&self.meta.run_id, &nodes, &correct)
    }
}

/// Graphviz rendering. Correct answered nodes are stars, other answered nodes
/// triangles; fill shade encodes expansion order.
pub fn export_dot(tree: &SearchTree, reference: Option<&str>, grader: &dyn Grader, name: &str) -> String {
    let nodes: Vec<&SearchNode> = tree.nodes().iter().collect();
    let correct: Vec<bool> =
        nodes.iter().map(|n| n.answered && n.answer.as_deref().is_some_and(|a| grader.grade(reference, a))).collect();
    render_dot(name, &nodes, &correct)
}

fn shade_bucket(index: u32, max_index: u32) -> u32 {
    (index as u64 * SHADE_BUCKETS as u64 / (max_index as u64 + 1)) as u32
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

fn render_dot(name: &str, nodes: &[&SearchNode], correct: &[bool]) -> String {
    let max_index = nodes.iter().map(|n| n.expansion_index).max().unwrap_or(0);
    let mut out = String::new();
    let _ = writeln!(out, "digraph \"{}\" {{", escape(name));
    let _ = writeln!(out, "  node [style=filled, colorscheme=blues{}, fontsize=10];", SHADE_BUCKETS + 1);
    for (n, &ok) in nodes.iter().zip(correct) {
        let shape = match (n.parent.is_none(), n.answered, ok) {
            (true, _, _) => "box",
            (false, true, true) => "star",
            (false, true, false) => "triangle",
            _ => "circle",
        };
        let color = shade_bucket(n.expansion_index, max_index) + 2;
        let _ = writeln!(
            out,
            "  n{} [shape={shape}, fillcolor={color}, label=\"{}\\nq={:.3} m={}\"];",
            n.id.0, n.id.0, n.q_value, n.m
        );
    }
    for n in nodes {
        if let Some(p) = n.parent {
            let _ = writeln!(out, "  n{} -> n{};", p.0, n.id.0);
        }
    }
    out.push_str("}\n");
    out
}
