//! Central finite-difference check of the hand-written policy and value
//! gradients on random small models.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::policy::{PolicyError, PolicyModel, PpoSample};
use crate::trainer::PpoParams;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// A random model together with a batch that exercises both clip branches.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: PolicyModel<f64>,
    pub samples: Vec<PpoSample<f64>>,
    pub advantages: Vec<f64>,
    pub ref_log_probs: Vec<f64>,
    pub targets_turn: Vec<f64>,
    pub targets_session: Vec<f64>,
    pub ppo: PpoParams,
}

impl Problem {
    /// Feature dim in `2..=8`, 2 to 5 actions, 4 to 12 turns, hidden layer
    /// on half of the draws. Old log-probs are offset from the current ones
    /// either well inside or well outside the clip band so that no finite
    /// difference straddles a kink.
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let feature_dim = rng.gen_range(2..=8);
        let actions = rng.gen_range(2..=5);
        let hidden = rng.gen_bool(0.5);
        let model = PolicyModel::random(feature_dim, actions, hidden, 0.8, rng);
        let ppo = PpoParams {
            epsilon_clip: 0.2,
            kl_coef: rng.gen_range(0.0..0.5),
            ..PpoParams::default()
        };
        let n = rng.gen_range(4..=12);
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let features: Vec<f64> = (0..feature_dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let action = rng.gen_range(0..actions);
            let lp = model.log_prob(&features, action).expect("dims agree");
            let offset = match rng.gen_range(0..3) {
                0 => rng.gen_range(-0.1..0.1),
                1 => rng.gen_range(0.4..0.9),
                _ => -rng.gen_range(0.4..0.9),
            };
            samples.push(PpoSample { features, action, old_log_prob: lp + offset });
        }
        let advantages = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let ref_log_probs = (0..n).map(|_| -rng.gen_range(0.2..3.0)).collect();
        let targets_turn = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let targets_session = (0..n).map(|_| rng.gen_range(-6.0..6.0)).collect();
        Self { model, samples, advantages, ref_log_probs, targets_turn, targets_session, ppo }
    }

    fn features(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.features.clone()).collect()
    }

    /// PPO loss plus both value losses.
    pub fn objective(&self, model: &PolicyModel<f64>) -> Result<f64, PolicyError> {
        let ppo = model.ppo_loss(&self.samples, &self.advantages, &self.ref_log_probs, &self.ppo)?;
        let (lt, ls) = model.value_loss(&self.features(), &self.targets_turn, &self.targets_session)?;
        Ok(ppo.loss + lt + ls)
    }

    /// Max relative error per parameter block.
    pub fn check(&self) -> Result<BTreeMap<&'static str, f64>, PolicyError> {
        let (_, mut grads) =
            self.model.ppo_loss_and_grad(&self.samples, &self.advantages, &self.ref_log_probs, &self.ppo)?;
        let (_, vgrads) =
            self.model.value_loss_and_grad(&self.features(), &self.targets_turn, &self.targets_session)?;
        grads.add_assign(&vgrads);

        let mut worst = BTreeMap::new();
        for (name, analytic) in grads.blocks() {
            let mut block_max: f64 = 0.0;
            for (i, &a) in analytic.iter().enumerate() {
                let mut plus = self.model.clone();
                *plus.param_mut(name, i).expect("block layout") += STEP;
                let mut minus = self.model.clone();
                *minus.param_mut(name, i).expect("block layout") -= STEP;
                let numeric = (self.objective(&plus)? - self.objective(&minus)?) / (2.0 * STEP);
                block_max = block_max.max(relative_error(a, numeric));
            }
            worst.insert(name, block_max);
        }
        Ok(worst)
    }
}

/// Runs `models` random problems seeded from `seed` and returns the max
/// relative error seen in each parameter block.
pub fn run_suite(seed: u64, models: usize) -> Result<BTreeMap<&'static str, f64>, PolicyError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: BTreeMap<&'static str, f64> = BTreeMap::new();
    for _ in 0..models {
        for (name, err) in Problem::random(&mut rng).check()? {
            let e = worst.entry(name).or_insert(0.0);
            *e = e.max(err);
        }
    }
    Ok(worst)
}
