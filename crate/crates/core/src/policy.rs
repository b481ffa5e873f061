//! Selection scores: PUCT, its budget-guided variant with completion bias,
//! softmax child priors, the widening score of the virtual generative child,
//! and the argmax over both kinds of candidates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PolicyConfig;
use crate::tree::{NodeId, SearchTree};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("no children to score")]
    NoChildren,
}

/// Numerically stable softmax of `q / temperature`, order preserved.
pub fn child_priors(q_values: &[f64], temperature: f64) -> Result<Vec<f64>, PolicyError> {
    if q_values.is_empty() {
        return Err(PolicyError::NoChildren);
    }
    let max = q_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = q_values.iter().map(|q| ((q - max) / temperature).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

#[inline]
fn exploration(m_s: u64, m_p: u64, prior: f64, c: f64) -> f64 {
    c * prior * ((m_p as f64).ln() / m_s as f64).sqrt()
}

/// `w_s / m_s + c * prior * sqrt(ln(m_p) / m_s)`.
pub fn puct_score(w_s: f64, m_s: u64, m_p: u64, prior: f64, c: f64) -> f64 {
    w_s / m_s as f64 + exploration(m_s, m_p, prior, c)
}

/// Depth-biased value of a single node: `q + kappa * (1 - rho) * depth / d_hat`.
pub fn corrected_q(q: f64, depth: u32, rho: f64, d_hat: f64, kappa: f64) -> f64 {
    q + kappa * (1.0 - rho) * depth as f64 / d_hat
}

/// Subtree aggregates of a candidate child.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeStats {
    pub w: f64,
    pub d_sum: f64,
    pub m: u64,
}

/// Budget-guided PUCT. The corrected accumulated value is the subtree sum of
/// [`corrected_q`], which collapses to `w + kappa * (1 - rho) * d_sum / d_hat`.
pub fn bg_puct_score(stats: NodeStats, m_p: u64, prior: f64, rho: f64, d_hat: f64, config: &PolicyConfig) -> f64 {
    let w_tilde = stats.w + config.kappa * (1.0 - rho) * stats.d_sum / d_hat;
    w_tilde / stats.m as f64 + rho * exploration(stats.m, m_p, prior, config.c)
}

/// Score of the virtual generative child: mean plus `lambda * rho` times the
/// population variance of the existing children's `Q`.
pub fn generative_score(child_q_values: &[f64], rho: f64, lambda: f64) -> Result<f64, PolicyError> {
    if child_q_values.is_empty() {
        return Err(PolicyError::NoChildren);
    }
    let n = child_q_values.len() as f64;
    let mean = child_q_values.iter().sum::<f64>() / n;
    let var = child_q_values.iter().map(|q| (q - mean).powi(2)).sum::<f64>() / n;
    Ok(mean + lambda * rho * var)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Candidate {
    Child(NodeId),
    Generative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredChild {
    pub child: Candidate,
    pub score: f64,
}

/// One standard child as seen by selection.
#[derive(Debug, Clone, PartialEq)]
pub struct ChildView {
    pub id: NodeId,
    pub q: f64,
    pub stats: NodeStats,
    pub expansion_index: u32,
    /// False for children excluded from the argmax (terminal or dead ends).
    /// They still shape the priors and the widening score.
    pub selectable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParentView {
    pub m: u64,
    pub children: Vec<ChildView>,
}

impl ParentView {
    pub fn from_tree(tree: &SearchTree, parent: NodeId) -> Self {
        let p = tree.node(parent);
        let children = p
            .children()
            .iter()
            .map(|&c| {
                let n = tree.node(c);
                ChildView {
                    id: c,
                    q: n.q_value,
                    stats: NodeStats { w: n.w, d_sum: n.d_sum, m: n.m },
                    expansion_index: n.expansion_index,
                    selectable: !n.terminal,
                }
            })
            .collect();
        ParentView { m: p.m, children }
    }
}

/// Every candidate with its score, standard children first in
/// expansion order, the generative option last when present.
pub fn score_candidates(parent: &ParentView, rho: f64, d_hat: f64, config: &PolicyConfig) -> Vec<ScoredChild> {
    let mut ordered: Vec<&ChildView> = parent.children.iter().collect();
    ordered.sort_by_key(|c| c.expansion_index);
    let qs: Vec<f64> = ordered.iter().map(|c| c.q).collect();
    let Ok(priors) = child_priors(&qs, config.softmax_temp) else {
        return Vec::new();
    };
    let budget_guided = config.method.budget_guided();
    let mut out = Vec::with_capacity(ordered.len() + 1);
    for (c, prior) in ordered.iter().zip(priors) {
        if !c.selectable {
            continue;
        }
        let score = if budget_guided {
            bg_puct_score(c.stats, parent.m, prior, rho, d_hat, config)
        } else {
            puct_score(c.stats.w, c.stats.m, parent.m, prior, config.c)
        };
        out.push(ScoredChild { child: Candidate::Child(c.id), score });
    }
    if budget_guided {
        if let Ok(score) = generative_score(&qs, rho, config.lambda) {
            out.push(ScoredChild { child: Candidate::Generative, score });
        }
    }
    out
}

/// Argmax over selectable standard children and, for budget-guided search,
/// the generative option. Ties go to a standard child, then to the oldest
/// child. `None` when nothing is selectable.
pub fn unified_select(parent: &ParentView, rho: f64, d_hat: f64, config: &PolicyConfig) -> Option<ScoredChild> {
    pick_best(&score_candidates(parent, rho, d_hat, config))
}

pub(crate) fn pick_best(scored: &[ScoredChild]) -> Option<ScoredChild> {
    let mut best: Option<ScoredChild> = None;
    for s in scored {
        match best {
            Some(b) if s.score <= b.score => {}
            _ => best = Some(*s),
        }
    }
    best
}
