//! Ground-truth evaluators for synthetic worlds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{EvalError, Evaluation, EvaluationRequest, Evaluator};
use crate::env::synthetic::{step_slots, Hasher, SyntheticWorld, D_NOISE, D_QVALUE};
use crate::env::GenerationMode;

/// Upper end of the score range for nodes off the golden path.
pub const OFF_PATH_MAX: f64 = 0.4;

/// Scores 1 on the golden path and a seeded value in `[0, 0.4]` elsewhere,
/// optionally perturbed by seeded Gaussian noise and clamped to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct OracleEvaluator {
    world: SyntheticWorld,
    noise: f64,
}

impl OracleEvaluator {
    /// Uses the world's `evaluator_noise`.
    pub fn new(world: SyntheticWorld) -> Self {
        let noise = world.spec().evaluator_noise;
        OracleEvaluator { world, noise }
    }

    pub fn noiseless(world: SyntheticWorld) -> Self {
        OracleEvaluator { world, noise: 0.0 }
    }

    pub fn oracle_evaluate(&self, instance: u64, path: &[(u32, bool)], mode: GenerationMode) -> Evaluation {
        let pos = self.world.locate(instance, path, mode);
        let seed = self.world.spec().seed;
        let base = if pos.golden {
            1.0
        } else {
            let h = Hasher::new(seed, D_QVALUE).push(instance).extend(pos.path.iter().map(|&c| c as u64));
            OFF_PATH_MAX * h.unit()
        };
        let q = if self.noise > 0.0 {
            let key = Hasher::new(seed, D_NOISE)
                .push(instance)
                .extend(path.iter().map(|&(s, c)| ((s as u64) << 1) | c as u64));
            let mut rng = ChaCha8Rng::seed_from_u64(key.value());
            let n = Normal::new(0.0, self.noise).expect("finite noise").sample(&mut rng);
            (base + n).clamp(0.0, 1.0)
        } else {
            base
        };
        Evaluation::score(q)
    }
}

impl Evaluator for OracleEvaluator {
    fn evaluate(&self, request: &EvaluationRequest<'_>) -> Result<Evaluation, EvalError> {
        if request.steps.is_empty() {
            return Err(EvalError::EmptyHistory);
        }
        Ok(self.oracle_evaluate(request.problem.instance, &step_slots(&request.steps), request.mode))
    }
}
