//! Straight-line re-implementation of the budgeted search loop, written
//! against the environment and evaluator interfaces only. Used as an oracle
//! for the engine's event stream.

use bgmcts::config::{Method, PolicyConfig};
use bgmcts::env::{extract_answer, EnvError, Environment, ExpansionRequest, GenerationMode, PathStep, Problem};
use bgmcts::eval::{EvaluationRequest, Evaluator};
use bgmcts::harness::trace::{Payload, TraceEvent};

const RETRIES: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Child {
    pub id: u32,
    pub slot: u32,
    pub depth: u32,
    pub tokens: u64,
    pub answered: bool,
    pub answer: Option<String>,
    pub terminal: bool,
    pub q: f64,
}

/// One iteration, normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub c_used: u64,
    pub node: u32,
    pub widen: bool,
    pub children: Vec<Child>,
    pub failed_tokens: Vec<u64>,
    /// `(new node, strict ancestors root first)` in backprop order.
    pub backprop: Vec<(u32, Vec<u32>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub steps: Vec<Step>,
    pub stop: String,
    pub c_used_final: u64,
}

struct Node {
    parent: Option<usize>,
    children: Vec<usize>,
    depth: u32,
    text: String,
    slot: u32,
    continuation: bool,
    q: f64,
    m: u64,
    w: f64,
    d_sum: f64,
    answered: bool,
    terminal: bool,
}

pub struct Reference<'a> {
    problem: &'a Problem,
    env: &'a dyn Environment,
    evaluator: &'a dyn Evaluator,
    cfg: PolicyConfig,
    nodes: Vec<Node>,
}

impl<'a> Reference<'a> {
    pub fn new(
        problem: &'a Problem,
        env: &'a dyn Environment,
        evaluator: &'a dyn Evaluator,
        cfg: &PolicyConfig,
    ) -> Self {
        let root = Node {
            parent: None,
            children: Vec::new(),
            depth: 0,
            text: problem.text.clone(),
            slot: 0,
            continuation: false,
            q: 0.0,
            m: 1,
            w: 0.0,
            d_sum: 0.0,
            answered: false,
            terminal: false,
        };
        Reference { problem, env, evaluator, cfg: cfg.clone(), nodes: vec![root] }
    }

    fn d_hat(&self) -> f64 {
        let answered: Vec<u32> = self.nodes.iter().filter(|n| n.answered).map(|n| n.depth).collect();
        if answered.is_empty() {
            let deepest = self.nodes.iter().map(|n| n.depth).max().unwrap_or(0);
            (deepest as f64).max(1.0)
        } else {
            answered.iter().map(|&d| d as f64).sum::<f64>() / answered.len() as f64
        }
    }

    fn priors(&self, kids: &[usize]) -> Vec<f64> {
        let t = self.cfg.softmax_temp;
        let top = kids.iter().map(|&k| self.nodes[k].q).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = kids.iter().map(|&k| ((self.nodes[k].q - top) / t).exp()).collect();
        let z: f64 = e.iter().sum();
        e.iter().map(|x| x / z).collect()
    }

    fn child_score(&self, k: usize, m_p: u64, prior: f64, rho: f64, d_hat: f64) -> f64 {
        let n = &self.nodes[k];
        let (c, m) = (self.cfg.c, n.m as f64);
        let bonus = ((m_p as f64).ln() / m).sqrt();
        if self.cfg.method == Method::BgMcts {
            (n.w + self.cfg.kappa * (1.0 - rho) * n.d_sum / d_hat) / m + rho * (c * prior * bonus)
        } else {
            n.w / m + c * prior * bonus
        }
    }

    fn widen_score(&self, kids: &[usize], rho: f64) -> f64 {
        let qs: Vec<f64> = kids.iter().map(|&k| self.nodes[k].q).collect();
        let n = qs.len() as f64;
        let mean = qs.iter().sum::<f64>() / n;
        let var = qs.iter().map(|q| (q - mean) * (q - mean)).sum::<f64>() / n;
        mean + self.cfg.lambda * rho * var
    }

    /// `(node, widen)` or `None` when nothing below `n` can be expanded.
    fn descend(&self, n: usize, rho: f64, d_hat: f64) -> Option<(usize, bool)> {
        let kids = self.nodes[n].children.clone();
        if kids.is_empty() {
            return Some((n, false));
        }
        let priors = self.priors(&kids);
        let mut excluded: Vec<usize> = Vec::new();
        loop {
            // `None` in the second slot stands for the generative option.
            let mut best: Option<(f64, Option<usize>)> = None;
            for (i, &k) in kids.iter().enumerate() {
                if self.nodes[k].terminal || excluded.contains(&k) {
                    continue;
                }
                let s = self.child_score(k, self.nodes[n].m, priors[i], rho, d_hat);
                if best.is_none_or(|b| s > b.0) {
                    best = Some((s, Some(k)));
                }
            }
            if self.cfg.method == Method::BgMcts {
                let g = self.widen_score(&kids, rho);
                if best.is_none_or(|b| g > b.0) {
                    best = Some((g, None));
                }
            }
            match best {
                None => return None,
                Some((_, None)) => return Some((n, true)),
                Some((_, Some(k))) => match self.descend(k, rho, d_hat) {
                    Some(found) => return Some(found),
                    None => excluded.push(k),
                },
            }
        }
    }

    fn lineage(&self, n: usize) -> Vec<usize> {
        let mut out = vec![n];
        let mut cur = n;
        while let Some(p) = self.nodes[cur].parent {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    fn steps(&self, n: usize) -> Vec<PathStep<'_>> {
        self.lineage(n)
            .into_iter()
            .skip(1)
            .map(|i| {
                let x = &self.nodes[i];
                PathStep { slot: x.slot, text: &x.text, continuation: x.continuation }
            })
            .collect()
    }

    pub fn run(&mut self, budget: u64) -> Run {
        let mut used = 0u64;
        let mut steps = Vec::new();
        let stop = loop {
            if used >= budget {
                break "budget-exhausted";
            }
            let rho = (1.0 - used as f64 / budget as f64).clamp(0.0, 1.0);
            if self.nodes[0].terminal {
                break "all-terminal";
            }
            let Some((target, widen)) = self.descend(0, rho, self.d_hat()) else {
                break "all-terminal";
            };
            let mut step = Step {
                c_used: used,
                node: target as u32,
                widen,
                children: Vec::new(),
                failed_tokens: Vec::new(),
                backprop: Vec::new(),
            };
            let n = if widen { 1 } else { self.cfg.k_leaf };
            let continuation = self.nodes[target].answered;
            let mut spent = 0u64;
            let mut generated = None;
            for attempt in 0..=RETRIES {
                let request = ExpansionRequest {
                    problem: self.problem,
                    steps: self.steps(target),
                    first_slot: self.nodes[target].children.len() as u32,
                    n_children: n,
                    mode: GenerationMode::Sequential,
                    continuation,
                };
                match self.env.expand(&request) {
                    Ok(g) => {
                        generated = Some(g);
                        break;
                    }
                    Err(e) => {
                        spent += e.tokens_spent();
                        step.failed_tokens.push(e.tokens_spent());
                        if matches!(e, EnvError::Fatal(_)) || attempt == RETRIES {
                            self.nodes[target].terminal = true;
                            break;
                        }
                    }
                }
            }
            let mut new_ids = Vec::new();
            for g in generated.unwrap_or_default() {
                let ex = extract_answer(&g.result.text, &g.result);
                let terminal = g.terminal || (ex.answered && !self.cfg.allow_wait_continuation);
                let id = self.nodes.len();
                let depth = self.nodes[target].depth + 1;
                let slot = self.nodes[target].children.len() as u32;
                self.nodes[target].children.push(id);
                self.nodes.push(Node {
                    parent: Some(target),
                    children: Vec::new(),
                    depth,
                    text: g.result.text.clone(),
                    slot,
                    continuation,
                    q: 0.0,
                    m: 1,
                    w: 0.0,
                    d_sum: depth as f64,
                    answered: ex.answered,
                    terminal,
                });
                spent += g.result.token_count;
                step.children.push(Child {
                    id: id as u32,
                    slot,
                    depth,
                    tokens: g.result.token_count,
                    answered: ex.answered,
                    answer: ex.answer,
                    terminal,
                    q: 0.0,
                });
                new_ids.push(id);
            }
            for (j, &id) in new_ids.iter().enumerate() {
                let request = EvaluationRequest {
                    problem: self.problem,
                    steps: self.steps(id),
                    mode: GenerationMode::Sequential,
                };
                let q = self.evaluator.evaluate(&request).expect("reference evaluation").q;
                self.nodes[id].q = q;
                self.nodes[id].w = q;
                step.children[j].q = q;
            }
            for &id in &new_ids {
                let mut ancestors = self.lineage(id);
                ancestors.pop();
                let (q, depth) = (self.nodes[id].q, self.nodes[id].depth as f64);
                for &a in &ancestors {
                    self.nodes[a].m += 1;
                    self.nodes[a].w += q;
                    self.nodes[a].d_sum += depth;
                }
                step.backprop.push((id as u32, ancestors.iter().map(|&a| a as u32).collect()));
            }
            used += spent;
            let hit = self.cfg.method == Method::EarlyStop
                && step.children.iter().any(|c| c.answered && c.q >= self.cfg.epsilon_stop);
            steps.push(step);
            if hit {
                break "early-stop-threshold";
            }
        };
        Run { steps, stop: stop.to_string(), c_used_final: used }
    }

    /// Final `(m, w, d_sum)` per node, in id order.
    pub fn stats(&self) -> Vec<(u64, f64, f64)> {
        self.nodes.iter().map(|n| (n.m, n.w, n.d_sum)).collect()
    }
}

/// Groups an engine trace into the same per-iteration shape.
pub fn normalize(events: &[TraceEvent]) -> Run {
    let mut steps: Vec<Step> = Vec::new();
    let mut stop = String::new();
    let mut c_used_final = 0;
    for e in events {
        match &e.payload {
            Payload::Select { widen, .. } => steps.push(Step {
                c_used: e.c_used,
                node: e.node_id.0,
                widen: *widen,
                children: Vec::new(),
                failed_tokens: Vec::new(),
                backprop: Vec::new(),
            }),
            Payload::Expand { children, .. } => {
                let s = steps.last_mut().expect("expand after select");
                s.children = children
                    .iter()
                    .map(|c| Child {
                        id: c.id.0,
                        slot: c.slot,
                        depth: c.depth,
                        tokens: c.token_cost,
                        answered: c.answered,
                        answer: c.answer.clone(),
                        terminal: c.terminal,
                        q: 0.0,
                    })
                    .collect();
            }
            Payload::ExpandFailed { tokens, .. } => {
                steps.last_mut().expect("failure after select").failed_tokens.push(*tokens);
            }
            Payload::Evaluate { q, .. } => {
                let s = steps.last_mut().expect("evaluate after select");
                let c = s.children.iter_mut().find(|c| c.id == e.node_id.0).expect("evaluated child");
                c.q = *q;
            }
            Payload::Backprop { ancestors, .. } => {
                let s = steps.last_mut().expect("backprop after select");
                s.backprop.push((e.node_id.0, ancestors.iter().map(|a| a.0).collect()));
            }
            Payload::Stop { reason, c_used_final: c, .. } => {
                stop = reason.as_str().to_string();
                c_used_final = *c;
            }
        }
    }
    Run { steps, stop, c_used_final }
}
