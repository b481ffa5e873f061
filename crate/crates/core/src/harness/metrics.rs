//! Budget curves, answered-node statistics and search-shape profiles.

use serde::{Deserialize, Serialize};

use super::trace::{Payload, TraceEvent};
use crate::tree::SearchTree;

/// Decides whether an extracted answer is correct.
pub trait Grader: Send + Sync {
    fn grade(&self, reference: Option<&str>, answer: &str) -> bool;
}

/// String equality after trimming whitespace and surrounding `$`.
#[derive(Debug, Default, Clone, Copy)]
pub struct ExactMatch;

fn normalize(s: &str) -> String {
    s.trim().trim_matches('$').split_whitespace().collect::<Vec<_>>().join("")
}

impl Grader for ExactMatch {
    fn grade(&self, reference: Option<&str>, answer: &str) -> bool {
        reference.is_some_and(|r| normalize(r) == normalize(answer))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetCurvePoint {
    pub consumed_tokens: u64,
    pub accuracy: f64,
    pub reach_rate: f64,
    pub avg_max_depth: f64,
    pub avg_max_width: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AnsweredNodeStats {
    pub total: u64,
    pub correct: u64,
    pub ratio: f64,
}

impl AnsweredNodeStats {
    pub fn from_counts(total: u64, correct: u64) -> Self {
        let ratio = if total > 0 { correct as f64 / total as f64 } else { 0.0 };
        AnsweredNodeStats { total, correct, ratio }
    }
}

/// Counts answered nodes over a set of final trees, each with its reference.
pub fn answered_node_stats<'a>(
    trees: impl IntoIterator<Item = (&'a SearchTree, Option<&'a str>)>,
    grader: &dyn Grader,
) -> AnsweredNodeStats {
    let (mut total, mut correct) = (0, 0);
    for (tree, reference) in trees {
        for n in tree.answered_nodes() {
            total += 1;
            if n.answer.as_deref().is_some_and(|a| grader.grade(reference, a)) {
                correct += 1;
            }
        }
    }
    AnsweredNodeStats::from_counts(total, correct)
}

/// Tree shape and returned-answer state after some prefix of a run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Snapshot {
    pub correct: bool,
    pub reached: bool,
    pub max_depth: u32,
    pub max_width: usize,
}

#[derive(Debug, Clone, Copy)]
struct LiteNode {
    answered: bool,
    q: f64,
}

/// Incremental reconstruction of the quantities tracked by the curves.
struct Timeline<'g> {
    nodes: Vec<LiteNode>,
    answers: Vec<Option<String>>,
    per_level: Vec<usize>,
    best: Option<usize>,
    reference: Option<&'g str>,
    grader: &'g dyn Grader,
}

impl<'g> Timeline<'g> {
    fn new(reference: Option<&'g str>, grader: &'g dyn Grader) -> Self {
        Timeline {
            nodes: vec![LiteNode { answered: false, q: 0.0 }],
            answers: vec![None],
            per_level: vec![1],
            best: None,
            reference,
            grader,
        }
    }

    fn apply(&mut self, e: &TraceEvent) {
        match &e.payload {
            Payload::Expand { children, .. } => {
                for c in children {
                    let idx = c.id.index();
                    if self.nodes.len() <= idx {
                        self.nodes.resize(idx + 1, LiteNode { answered: false, q: 0.0 });
                        self.answers.resize(idx + 1, None);
                    }
                    self.nodes[idx] = LiteNode { answered: c.answered, q: 0.0 };
                    self.answers[idx] = c.answer.clone();
                    let d = c.depth as usize;
                    if self.per_level.len() <= d {
                        self.per_level.resize(d + 1, 0);
                    }
                    self.per_level[d] += 1;
                }
            }
            Payload::Evaluate { q, .. } => {
                let idx = e.node_id.index();
                self.nodes[idx].q = *q;
                if self.nodes[idx].answered {
                    // Ties keep the older node.
                    match self.best {
                        Some(b) if self.nodes[b].q >= *q => {}
                        _ => self.best = Some(idx),
                    }
                }
            }
            _ => {}
        }
    }

    fn snapshot(&self) -> Snapshot {
        let correct =
            self.best.and_then(|b| self.answers[b].as_deref()).is_some_and(|a| self.grader.grade(self.reference, a));
        Snapshot {
            correct,
            reached: self.best.is_some(),
            max_depth: (self.per_level.len() - 1) as u32,
            max_width: self.per_level.iter().copied().max().unwrap_or(1),
        }
    }
}

/// `(tokens used when the iteration started, state after it)` per iteration.
pub fn run_timeline(events: &[TraceEvent], reference: Option<&str>, grader: &dyn Grader) -> Vec<(u64, Snapshot)> {
    let mut tl = Timeline::new(reference, grader);
    let mut out: Vec<(u64, Snapshot)> = Vec::new();
    let mut current: Option<(u64, u64)> = None;
    for e in events {
        if matches!(e.payload, Payload::Stop { .. }) {
            break;
        }
        if let Some((it, c)) = current {
            if it != e.iteration {
                out.push((c, tl.snapshot()));
            }
        }
        current = Some((e.iteration, e.c_used));
        tl.apply(e);
    }
    if let Some((_, c)) = current {
        out.push((c, tl.snapshot()));
    }
    out
}

/// State a run would report with `tokens` of budget: every iteration that
/// started below `tokens` has happened.
pub fn snapshot_at(timeline: &[(u64, Snapshot)], tokens: u64) -> Snapshot {
    let n = timeline.partition_point(|(c, _)| *c < tokens);
    if n == 0 {
        Snapshot { max_width: 1, ..Snapshot::default() }
    } else {
        timeline[n - 1].1
    }
}

/// `n` evenly spaced checkpoints ending at `budget`.
pub fn checkpoints(budget: u64, n: usize) -> Vec<u64> {
    let n = n.max(1) as u64;
    let mut out: Vec<u64> = (1..=n).map(|j| budget * j / n).filter(|&x| x > 0).collect();
    out.dedup();
    out
}

/// One trace per instance, with the reference answer for grading.
pub struct RunTrace<'a> {
    pub events: &'a [TraceEvent],
    pub reference: Option<&'a str>,
}

pub fn compute_curves(runs: &[RunTrace<'_>], checkpoints: &[u64], grader: &dyn Grader) -> Vec<BudgetCurvePoint> {
    let timelines: Vec<Vec<(u64, Snapshot)>> =
        runs.iter().map(|r| run_timeline(r.events, r.reference, grader)).collect();
    let n = timelines.len().max(1) as f64;
    checkpoints
        .iter()
        .map(|&x| {
            let snaps: Vec<Snapshot> = timelines.iter().map(|t| snapshot_at(t, x)).collect();
            BudgetCurvePoint {
                consumed_tokens: x,
                accuracy: snaps.iter().filter(|s| s.correct).count() as f64 / n,
                reach_rate: snaps.iter().filter(|s| s.reached).count() as f64 / n,
                avg_max_depth: snaps.iter().map(|s| s.max_depth as f64).sum::<f64>() / n,
                avg_max_width: snaps.iter().map(|s| s.max_width as f64).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Search activity inside one slice of the budget.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BudgetSlice {
    pub iterations: u64,
    pub tokens: u64,
    /// Generations at nodes that already had children.
    pub widen_events: u64,
    /// Children opened next to an existing sibling: every child beyond the
    /// first of a leaf expansion, plus every widening child.
    pub branch_events: u64,
    pub leaf_expansions: u64,
    /// Deepest node created inside the slice (0 when none).
    pub max_new_depth: u32,
}

impl BudgetSlice {
    pub fn widen_rate(&self) -> f64 {
        per_kilo(self.widen_events, self.tokens)
    }

    pub fn branch_rate(&self) -> f64 {
        per_kilo(self.branch_events, self.tokens)
    }

    pub fn merge(&mut self, o: &BudgetSlice) {
        self.iterations += o.iterations;
        self.tokens += o.tokens;
        self.widen_events += o.widen_events;
        self.branch_events += o.branch_events;
        self.leaf_expansions += o.leaf_expansions;
        self.max_new_depth = self.max_new_depth.max(o.max_new_depth);
    }
}

fn per_kilo(events: u64, tokens: u64) -> f64 {
    if tokens == 0 {
        0.0
    } else {
        events as f64 * 1000.0 / tokens as f64
    }
}

/// Splits one run into `bins` equal budget slices by the token count at the
/// start of each iteration.
pub fn budget_profile(events: &[TraceEvent], budget: u64, bins: usize) -> Vec<BudgetSlice> {
    let bins = bins.max(1);
    let mut out = vec![BudgetSlice::default(); bins];
    let mut last_iter = None;
    for e in events {
        let Payload::Expand { children, tokens, .. } = &e.payload else {
            if let Payload::ExpandFailed { tokens, .. } = &e.payload {
                let b = bin_of(e.c_used, budget, bins);
                out[b].tokens += tokens;
            }
            continue;
        };
        let b = bin_of(e.c_used, budget, bins);
        let slice = &mut out[b];
        if last_iter != Some(e.iteration) {
            slice.iterations += 1;
            last_iter = Some(e.iteration);
        }
        slice.tokens += tokens;
        match e.phase {
            super::trace::Phase::Widen => slice.widen_events += 1,
            _ => slice.leaf_expansions += 1,
        }
        slice.branch_events += children.iter().filter(|c| c.slot >= 1).count() as u64;
        for c in children {
            slice.max_new_depth = slice.max_new_depth.max(c.depth);
        }
    }
    out
}

fn bin_of(c_used: u64, budget: u64, bins: usize) -> usize {
    ((c_used as u128 * bins as u128 / budget.max(1) as u128) as usize).min(bins - 1)
}
