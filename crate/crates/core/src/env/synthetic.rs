//! Deterministic synthetic reasoning worlds.
//!
//! Each instance is an implicit tree with `branching` distinct continuations
//! per node. Exactly one child of every golden node is golden, so exactly one
//! root-to-answer path of length `answer_depth` is correct. Every world node at
//! `answer_depth` terminates with a boxed answer; only the golden one carries
//! the instance's reference answer.
//!
//! Search nodes are samples from this world. The first `branching` samples
//! drawn from a node are distinct world children in a weighted random order
//! (the golden child has weight `correct_path_fraction`, the others share the
//! rest); later samples are drawn with replacement from the same weights.
//! Everything is a pure function of the spec, the instance and the sequence
//! of sibling slots leading to a node.

use serde::{Deserialize, Serialize};

use super::{EnvError, Environment, ExpansionRequest, Generated, GenerationMode, GenerationResult, PathStep, Problem};

/// Extra levels below `answer_depth` before children are forced terminal.
pub const DEPTH_CAP_MARGIN: u32 = 4;
/// Relative spread of per-step token costs around `tokens_per_step`.
pub const TOKEN_JITTER: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticWorldSpec {
    pub seed: u64,
    pub branching: u32,
    pub answer_depth: u32,
    pub tokens_per_step: u64,
    pub correct_path_fraction: f64,
    pub evaluator_noise: f64,
    pub instance_count: u64,
}

/// The bundled suite: eight steps to an answer, about 27 steps of budget at
/// `B = 4000`.
impl Default for SyntheticWorldSpec {
    fn default() -> Self {
        SyntheticWorldSpec {
            seed: 42,
            branching: 3,
            answer_depth: 8,
            tokens_per_step: 150,
            correct_path_fraction: 0.7,
            evaluator_noise: 0.1,
            instance_count: 200,
        }
    }
}

impl SyntheticWorldSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.branching < 2 {
            return Err("branching must be at least 2".into());
        }
        if self.answer_depth < 2 {
            return Err("answer_depth must be at least 2".into());
        }
        if self.tokens_per_step == 0 {
            return Err("tokens_per_step must be positive".into());
        }
        if !(self.correct_path_fraction > 0.0 && self.correct_path_fraction <= 1.0) {
            return Err("correct_path_fraction must lie in (0, 1]".into());
        }
        if !(self.evaluator_noise >= 0.0 && self.evaluator_noise.is_finite()) {
            return Err("evaluator_noise must be non-negative".into());
        }
        Ok(())
    }

    pub fn depth_cap(&self) -> u32 {
        self.answer_depth + DEPTH_CAP_MARGIN
    }
}

// splitmix64 finalizer
#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Hasher(u64);

impl Hasher {
    pub(crate) fn new(seed: u64, domain: u64) -> Self {
        Hasher(mix(seed ^ mix(domain)))
    }

    pub(crate) fn push(self, x: u64) -> Self {
        Hasher(mix(self.0 ^ x.wrapping_mul(0xD6E8_FEB8_6659_FD93)))
    }

    pub(crate) fn extend(self, xs: impl IntoIterator<Item = u64>) -> Self {
        let mut h = self;
        let mut n = 0u64;
        for x in xs {
            h = h.push(x);
            n += 1;
        }
        h.push(n ^ 0xA5A5_A5A5)
    }

    pub(crate) fn value(self) -> u64 {
        self.0
    }

    /// Uniform in `[0, 1)`.
    pub(crate) fn unit(self) -> f64 {
        (self.0 >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

// Hash domains.
const D_GOLDEN: u64 = 1;
const D_ANSWER: u64 = 2;
const D_ORDER: u64 = 3;
const D_RESAMPLE: u64 = 4;
const D_TOKENS: u64 = 5;
const D_WRONG: u64 = 6;
pub(crate) const D_QVALUE: u64 = 7;
pub(crate) const D_NOISE: u64 = 8;

/// Location of a search node inside the world.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WorldPos {
    /// World child indices from the world root.
    pub path: Vec<u32>,
    pub golden: bool,
}

impl WorldPos {
    pub fn root() -> Self {
        WorldPos { path: Vec::new(), golden: true }
    }

    pub fn depth(&self) -> u32 {
        self.path.len() as u32
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    spec: SyntheticWorldSpec,
}

impl SyntheticWorld {
    pub fn new(spec: SyntheticWorldSpec) -> Self {
        SyntheticWorld { spec }
    }

    pub fn spec(&self) -> &SyntheticWorldSpec {
        &self.spec
    }

    fn h(&self, instance: u64, domain: u64) -> Hasher {
        Hasher::new(self.spec.seed, domain).push(instance)
    }

    /// Reference answer of an instance.
    pub fn answer(&self, instance: u64) -> String {
        (self.h(instance, D_ANSWER).value() % 1000).to_string()
    }

    fn wrong_answer(&self, instance: u64, path: &[u32]) -> String {
        let correct = self.h(instance, D_ANSWER).value() % 1000;
        let offset = 1 + self.h(instance, D_WRONG).extend(path.iter().map(|&x| x as u64)).value() % 999;
        ((correct + offset) % 1000).to_string()
    }

    pub fn problem(&self, instance: u64) -> Problem {
        Problem {
            id: format!("synthetic-s{}-i{}", self.spec.seed, instance),
            instance,
            text: format!(
                "Synthetic problem {instance} (seed {}): find the hidden value at depth {}.",
                self.spec.seed, self.spec.answer_depth
            ),
            reference: Some(self.answer(instance)),
        }
    }

    pub fn problems(&self) -> Vec<Problem> {
        (0..self.spec.instance_count).map(|i| self.problem(i)).collect()
    }

    /// Index of the golden child below a world node.
    pub fn golden_child(&self, instance: u64, path: &[u32]) -> u32 {
        (self.h(instance, D_GOLDEN).extend(path.iter().map(|&x| x as u64)).value() % self.spec.branching as u64) as u32
    }

    pub fn child_pos(&self, instance: u64, parent: &WorldPos, child: u32) -> WorldPos {
        let golden = parent.golden && self.golden_child(instance, &parent.path) == child;
        let mut path = parent.path.clone();
        path.push(child);
        WorldPos { path, golden }
    }

    /// Sampling weights over the world children of `parent`.
    fn weights(&self, instance: u64, parent: &WorldPos) -> Vec<f64> {
        let b = self.spec.branching as usize;
        if !parent.golden {
            return vec![1.0; b];
        }
        let g = self.golden_child(instance, &parent.path) as usize;
        let f = self.spec.correct_path_fraction;
        (0..b).map(|i| if i == g { f } else { (1.0 - f) / (b - 1) as f64 }).collect()
    }

    /// World child reached by the `slot`-th sample drawn from a search node
    /// identified by `key` sitting at world node `parent`.
    pub(crate) fn sample_child(&self, instance: u64, parent: &WorldPos, key: Hasher, slot: u32) -> u32 {
        let weights = self.weights(instance, parent);
        let b = weights.len();
        if (slot as usize) < b {
            // Weighted order without replacement: sort by u^(1/w) descending.
            let order_key = Hasher::new(self.spec.seed, D_ORDER).push(key.value());
            let mut keyed: Vec<(f64, usize)> = weights
                .iter()
                .enumerate()
                .map(|(i, &w)| {
                    let u = order_key.push(i as u64).unit().max(f64::MIN_POSITIVE);
                    let k = if w > 0.0 { u.powf(1.0 / w) } else { 0.0 };
                    (k, i)
                })
                .collect();
            keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            keyed[slot as usize].1 as u32
        } else {
            let u = Hasher::new(self.spec.seed, D_RESAMPLE).push(key.value()).push(slot as u64).unit();
            let total: f64 = weights.iter().sum();
            let mut acc = 0.0;
            for (i, w) in weights.iter().enumerate() {
                acc += w / total;
                if u < acc {
                    return i as u32;
                }
            }
            (b - 1) as u32
        }
    }

    fn step_tokens(&self, key: Hasher) -> u64 {
        let u = Hasher::new(self.spec.seed, D_TOKENS).push(key.value()).unit();
        let tau = self.spec.tokens_per_step as f64;
        let jitter = (2.0 * u - 1.0) * TOKEN_JITTER;
        ((tau * (1.0 + jitter)).round() as u64).max(1)
    }

    fn node_key(&self, instance: u64, slots: &[u32]) -> Hasher {
        Hasher::new(self.spec.seed, 0).push(instance).extend(slots.iter().map(|&s| s as u64))
    }

    /// Walk a full-generation chain from `start` down to the answer depth.
    fn full_chain(&self, instance: u64, start: &WorldPos, key: Hasher) -> (WorldPos, Vec<(WorldPos, u64)>) {
        let mut pos = start.clone();
        let mut steps = Vec::new();
        let mut j = 0u64;
        while pos.depth() < self.spec.answer_depth {
            let step_key = key.push(0xF011 + j);
            let child = self.sample_child(instance, &pos, step_key, 0);
            pos = self.child_pos(instance, &pos, child);
            steps.push((pos.clone(), self.step_tokens(step_key)));
            j += 1;
        }
        (pos, steps)
    }

    fn parent_pos(&self, instance: u64, pos: &WorldPos) -> WorldPos {
        let mut parent = WorldPos::root();
        for &c in &pos.path[..pos.path.len().saturating_sub(1)] {
            parent = self.child_pos(instance, &parent, c);
        }
        parent
    }

    /// World position of the search node reached by `steps` (root excluded).
    pub fn locate(&self, instance: u64, steps: &[(u32, bool)], mode: GenerationMode) -> WorldPos {
        let mut pos = WorldPos::root();
        let mut slots: Vec<u32> = Vec::with_capacity(steps.len());
        for &(slot, continuation) in steps {
            let parent_key = self.node_key(instance, &slots);
            slots.push(slot);
            pos = self.advance(instance, &pos, parent_key, slot, continuation, mode, &slots).0;
        }
        pos
    }

    /// Position and generation of one child. Returns (position, step list).
    #[allow(clippy::too_many_arguments)]
    fn advance(
        &self,
        instance: u64,
        parent: &WorldPos,
        parent_key: Hasher,
        slot: u32,
        continuation: bool,
        mode: GenerationMode,
        child_slots: &[u32],
    ) -> (WorldPos, Vec<(WorldPos, u64)>) {
        let child_key = self.node_key(instance, child_slots);
        match mode {
            GenerationMode::Sequential => {
                let base = if continuation && parent.depth() >= self.spec.answer_depth {
                    // Re-think the final step.
                    self.parent_pos(instance, parent)
                } else {
                    parent.clone()
                };
                let c = self.sample_child(instance, &base, parent_key, slot);
                let pos = self.child_pos(instance, &base, c);
                let tokens = self.step_tokens(child_key);
                (pos.clone(), vec![(pos, tokens)])
            }
            GenerationMode::Full => {
                let start = if continuation || parent.depth() >= self.spec.answer_depth {
                    WorldPos::root()
                } else {
                    parent.clone()
                };
                self.full_chain(instance, &start, child_key)
            }
        }
    }

    fn step_text(&self, instance: u64, pos: &WorldPos, step_no: usize) -> String {
        let label: Vec<String> = pos.path.iter().map(|c| c.to_string()).collect();
        if pos.depth() >= self.spec.answer_depth {
            let ans = if pos.golden { self.answer(instance) } else { self.wrong_answer(instance, &pos.path) };
            format!(
                "Step {step_no}: Combining the branch [{}], the final answer is: $\\boxed{{{ans}}}$. I hope it is correct.",
                label.join(".")
            )
        } else {
            format!("Step {step_no}: Follow branch [{}] of the derivation.", label.join("."))
        }
    }

    /// `n_children` samples below the node at `parent_steps`.
    pub fn synthetic_expand(
        &self,
        instance: u64,
        parent_steps: &[(u32, bool)],
        first_slot: u32,
        n_children: usize,
        mode: GenerationMode,
        continuation: bool,
    ) -> Vec<Generated> {
        let parent = self.locate(instance, parent_steps, mode);
        let mut slots: Vec<u32> = parent_steps.iter().map(|s| s.0).collect();
        let parent_key = self.node_key(instance, &slots);
        let search_depth = parent_steps.len() as u32;
        let capped = search_depth >= self.spec.depth_cap();
        (0..n_children as u32)
            .map(|i| {
                let slot = first_slot + i;
                slots.push(slot);
                let (pos, steps) = self.advance(instance, &parent, parent_key, slot, continuation, mode, &slots);
                slots.pop();
                let tokens: u64 = steps.iter().map(|s| s.1).sum();
                let first_step_no = match mode {
                    GenerationMode::Sequential => search_depth as usize + 1,
                    GenerationMode::Full => 1,
                };
                let text = steps
                    .iter()
                    .enumerate()
                    .map(|(j, (p, _))| self.step_text(instance, p, first_step_no + j))
                    .collect::<Vec<_>>()
                    .join("\n\n");
                let result = if capped {
                    GenerationResult::at_limit(text, tokens)
                } else if pos.depth() >= self.spec.answer_depth {
                    GenerationResult::natural(text, tokens)
                } else {
                    GenerationResult::at_delimiter(text, tokens)
                };
                Generated { result, terminal: capped }
            })
            .collect()
    }
}

/// [`Environment`] adapter over a [`SyntheticWorld`].
#[derive(Debug, Clone)]
pub struct SyntheticEnvironment {
    world: SyntheticWorld,
}

impl SyntheticEnvironment {
    pub fn new(world: SyntheticWorld) -> Self {
        SyntheticEnvironment { world }
    }

    pub fn world(&self) -> &SyntheticWorld {
        &self.world
    }
}

pub(crate) fn step_slots(steps: &[PathStep<'_>]) -> Vec<(u32, bool)> {
    steps.iter().map(|s| (s.slot, s.continuation)).collect()
}

impl Environment for SyntheticEnvironment {
    fn expand(&self, request: &ExpansionRequest<'_>) -> Result<Vec<Generated>, EnvError> {
        Ok(self.world.synthetic_expand(
            request.problem.instance,
            &step_slots(&request.steps),
            request.first_slot,
            request.n_children,
            request.mode,
            request.continuation,
        ))
    }
}
