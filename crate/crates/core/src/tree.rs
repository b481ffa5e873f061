//! Arena-backed search tree and subtree-statistic bookkeeping.
//!
//! Every node caches three subtree aggregates:
//!
//! * `m`     - number of nodes in the expanded subtree (the node itself included),
//! * `w`     - sum of raw evaluator scores `Q` over that subtree,
//! * `d_sum` - sum of node depths over that subtree.
//!
//! `d_sum` lets the depth-biased corrected value of a whole subtree be computed
//! in constant time for any budget ratio: `w + kappa * (1 - rho) * d_sum / d_hat`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub const ROOT: NodeId = NodeId(0);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} was already backpropagated")]
    AlreadyBackpropagated(NodeId),
    #[error("the root has no ancestors to update")]
    RootUpdate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub depth: u32,
    pub text: String,
    pub q_value: f64,
    pub m: u64,
    pub w: f64,
    pub d_sum: f64,
    pub answered: bool,
    pub answer: Option<String>,
    pub terminal: bool,
    /// Global creation order; equal to the arena index.
    pub expansion_index: u32,
    pub token_cost: u64,
    /// Position among the parent's children, in creation order.
    pub slot: u32,
    /// Created by the wait-continuation prompt from an answered parent.
    #[serde(default)]
    pub continuation: bool,
    #[serde(skip)]
    pub(crate) children: Vec<NodeId>,
    #[serde(skip)]
    pub(crate) backpropagated: bool,
}

impl SearchNode {
    pub fn children(&self) -> &[NodeId] {
        &self.children
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// Generation outcome attached to a freshly created node.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NewNode {
    pub text: String,
    pub token_cost: u64,
    pub answered: bool,
    pub answer: Option<String>,
    pub terminal: bool,
    pub continuation: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchTree {
    nodes: Vec<SearchNode>,
    answered_count: u64,
    answered_depth_sum: u64,
    max_expanded_depth: u32,
    d_hat_ans: f64,
}

impl SearchTree {
    pub fn new(root_text: impl Into<String>) -> Self {
        let root = SearchNode {
            id: NodeId::ROOT,
            parent: None,
            depth: 0,
            text: root_text.into(),
            q_value: 0.0,
            m: 1,
            w: 0.0,
            d_sum: 0.0,
            answered: false,
            answer: None,
            terminal: false,
            expansion_index: 0,
            token_cost: 0,
            slot: 0,
            continuation: false,
            children: Vec::new(),
            backpropagated: true,
        };
        SearchTree {
            nodes: vec![root],
            answered_count: 0,
            answered_depth_sum: 0,
            max_expanded_depth: 0,
            d_hat_ans: 1.0,
        }
    }

    pub fn root(&self) -> NodeId {
        NodeId::ROOT
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[SearchNode] {
        &self.nodes
    }

    pub fn get(&self, id: NodeId) -> Result<&SearchNode, TreeError> {
        self.nodes.get(id.index()).ok_or(TreeError::UnknownNode(id))
    }

    fn get_mut(&mut self, id: NodeId) -> Result<&mut SearchNode, TreeError> {
        self.nodes.get_mut(id.index()).ok_or(TreeError::UnknownNode(id))
    }

    /// Panicking accessor for ids handed out by this tree.
    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id.index()]
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.index()].children
    }

    pub fn d_hat_ans(&self) -> f64 {
        self.d_hat_ans
    }

    pub fn answered_count(&self) -> u64 {
        self.answered_count
    }

    pub fn max_expanded_depth(&self) -> u32 {
        self.max_expanded_depth
    }

    /// Ids from the root down to `id`, inclusive.
    pub fn path_to(&self, id: NodeId) -> Vec<NodeId> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.nodes[cur.index()].parent {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    /// Appends a child with `m = 1`, `w = 0`, `d_sum = depth`. The node does not
    /// count towards its ancestors until [`assign_q`](Self::assign_q) and
    /// [`update_statistics`](Self::update_statistics) have run.
    pub fn add_child(&mut self, parent: NodeId, init: NewNode) -> Result<NodeId, TreeError> {
        let id = NodeId(self.nodes.len() as u32);
        let p = self.get_mut(parent)?;
        let depth = p.depth + 1;
        let slot = p.children.len() as u32;
        p.children.push(id);
        self.nodes.push(SearchNode {
            id,
            parent: Some(parent),
            depth,
            text: init.text,
            q_value: 0.0,
            m: 1,
            w: 0.0,
            d_sum: depth as f64,
            answered: init.answered,
            answer: init.answer,
            terminal: init.terminal,
            expansion_index: id.0,
            token_cost: init.token_cost,
            slot,
            continuation: init.continuation,
            children: Vec::new(),
            backpropagated: false,
        });
        Ok(id)
    }

    pub fn assign_q(&mut self, id: NodeId, q: f64) -> Result<(), TreeError> {
        let node = self.get_mut(id)?;
        if node.backpropagated {
            return Err(TreeError::AlreadyBackpropagated(id));
        }
        node.q_value = q;
        node.w = q;
        Ok(())
    }

    pub fn mark_terminal(&mut self, id: NodeId) -> Result<(), TreeError> {
        self.get_mut(id)?.terminal = true;
        Ok(())
    }

    /// Propagates a freshly evaluated node's contribution to every strict
    /// ancestor and refreshes the answer-depth estimate.
    pub fn update_statistics(&mut self, new_node: NodeId) -> Result<(), TreeError> {
        let (q, depth, answered, mut cursor) = {
            let node = self.get(new_node)?;
            if node.backpropagated {
                return Err(TreeError::AlreadyBackpropagated(new_node));
            }
            if node.parent.is_none() {
                return Err(TreeError::RootUpdate);
            }
            (node.q_value, node.depth, node.answered, node.parent)
        };
        while let Some(a) = cursor {
            let anc = self.get_mut(a)?;
            anc.m += 1;
            anc.w += q;
            anc.d_sum += depth as f64;
            cursor = anc.parent;
        }
        self.nodes[new_node.index()].backpropagated = true;
        self.max_expanded_depth = self.max_expanded_depth.max(depth);
        if answered {
            self.answered_count += 1;
            self.answered_depth_sum += depth as u64;
        }
        self.refresh_d_hat();
        Ok(())
    }

    fn refresh_d_hat(&mut self) {
        self.d_hat_ans = if self.answered_count > 0 {
            self.answered_depth_sum as f64 / self.answered_count as f64
        } else {
            (self.max_expanded_depth as f64).max(1.0)
        };
    }

    /// Ids of answered nodes in creation order.
    pub fn answered_nodes(&self) -> impl Iterator<Item = &SearchNode> {
        self.nodes.iter().filter(|n| n.answered)
    }

    /// Answered node with the highest `Q`; ties go to the older node.
    pub fn best_answered(&self) -> Option<&SearchNode> {
        let mut best: Option<&SearchNode> = None;
        for n in self.answered_nodes() {
            match best {
                Some(b) if n.q_value <= b.q_value => {}
                _ => best = Some(n),
            }
        }
        best
    }

    /// Deepest node depth present in the tree.
    pub fn max_depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Largest number of nodes sharing one depth level.
    pub fn max_width(&self) -> usize {
        let mut per_level = vec![0usize; self.max_depth() as usize + 1];
        for n in &self.nodes {
            per_level[n.depth as usize] += 1;
        }
        per_level.into_iter().max().unwrap_or(0)
    }

    /// Rebuilds a tree from a flat node table (e.g. a JSON dump). Children are
    /// re-linked from `parent` in id order and statistics are taken as stored.
    pub fn from_nodes(mut nodes: Vec<SearchNode>) -> Result<Self, TreeError> {
        nodes.sort_by_key(|n| n.id);
        for (i, n) in nodes.iter().enumerate() {
            if n.id.index() != i {
                return Err(TreeError::UnknownNode(NodeId(i as u32)));
            }
        }
        if nodes.first().is_none_or(|r| r.parent.is_some()) {
            return Err(TreeError::UnknownNode(NodeId::ROOT));
        }
        for n in nodes.iter_mut() {
            n.children.clear();
            n.backpropagated = true;
        }
        for i in 1..nodes.len() {
            let p = nodes[i].parent.ok_or(TreeError::UnknownNode(nodes[i].id))?;
            if p.index() >= i {
                return Err(TreeError::UnknownNode(p));
            }
            let id = nodes[i].id;
            nodes[p.index()].children.push(id);
        }
        let mut tree =
            SearchTree { nodes, answered_count: 0, answered_depth_sum: 0, max_expanded_depth: 0, d_hat_ans: 1.0 };
        for n in &tree.nodes[1..] {
            tree.max_expanded_depth = tree.max_expanded_depth.max(n.depth);
            if n.answered {
                tree.answered_count += 1;
                tree.answered_depth_sum += n.depth as u64;
            }
        }
        tree.refresh_d_hat();
        Ok(tree)
    }
}
