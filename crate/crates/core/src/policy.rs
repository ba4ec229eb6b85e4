//! Linear-softmax (optionally one tanh hidden layer) policy over the action
//! kinds, plus two disjoint linear value heads. All gradients are derived by
//! hand.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advantage::ValueHeads;
use crate::env::sample_index;
use crate::scalar::Scalar;
use crate::trainer::PpoParams;

pub const HIDDEN_WIDTH: usize = 16;
const CHECKPOINT_FORMAT: &str = "duca-policy";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

fn dim_check(expected: usize, got: usize) -> Result<(), PolicyError> {
    if expected == got {
        Ok(())
    } else {
        Err(PolicyError::DimMismatch { expected, got })
    }
}

/// Affine layer, weights stored row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![T::zero(); inputs * outputs], bias: vec![T::zero(); outputs] }
    }

    fn uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, scale: f64, rng: &mut R) -> Self {
        let mut d = Self::zeros(inputs, outputs);
        for w in d.weights.iter_mut().chain(d.bias.iter_mut()) {
            *w = T::lit(rng.gen_range(-scale..scale));
        }
        d
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(x).map(|(&w, &xi)| w * xi).sum::<T>() + b)
            .collect()
    }

    /// Accumulates `d_out x^T` and `d_out` into this (gradient) layer.
    fn accumulate(&mut self, d_out: &[T], x: &[T]) {
        for (row, (&g, b)) in self.weights.chunks_exact_mut(self.inputs).zip(d_out.iter().zip(self.bias.iter_mut())) {
            *b = *b + g;
            for (w, &xi) in row.iter_mut().zip(x) {
                *w = *w + g * xi;
            }
        }
    }

    /// `W^T d_out`.
    fn backward_input(&self, d_out: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.inputs];
        for (row, &g) in self.weights.chunks_exact(self.inputs).zip(d_out) {
            for (o, &w) in out.iter_mut().zip(row) {
                *o = *o + g * w;
            }
        }
        out
    }
}

/// Linear state-value head `w . x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueHead<T> {
    pub weights: Vec<T>,
    pub bias: T,
}

impl<T: Scalar> ValueHead<T> {
    pub fn zeros(inputs: usize) -> Self {
        Self { weights: vec![T::zero(); inputs], bias: T::zero() }
    }

    pub fn predict(&self, x: &[T]) -> T {
        self.weights.iter().zip(x).map(|(&w, &xi)| w * xi).sum::<T>() + self.bias
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel<T> {
    pub feature_dim: usize,
    pub action_count: usize,
    /// Present for the tanh hidden-layer variant.
    pub hidden: Option<Dense<T>>,
    pub output: Dense<T>,
    pub v_turn: ValueHead<T>,
    pub v_session: ValueHead<T>,
}

/// Gradients with exactly the parameter layout of [`PolicyModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientRecord<T> {
    pub hidden: Option<Dense<T>>,
    pub output: Dense<T>,
    pub v_turn: ValueHead<T>,
    pub v_session: ValueHead<T>,
}

impl<T: Scalar> GradientRecord<T> {
    pub fn zeros_like(model: &PolicyModel<T>) -> Self {
        Self {
            hidden: model.hidden.as_ref().map(|h| Dense::zeros(h.inputs, h.outputs)),
            output: Dense::zeros(model.output.inputs, model.output.outputs),
            v_turn: ValueHead::zeros(model.feature_dim),
            v_session: ValueHead::zeros(model.feature_dim),
        }
    }

    pub fn blocks(&self) -> Vec<(&'static str, Vec<T>)> {
        param_blocks(&self.hidden, &self.output, &self.v_turn, &self.v_session)
    }

    /// Euclidean norm over the policy parameters only.
    pub fn policy_norm(&self) -> T {
        let mut acc = T::zero();
        let mut add = |xs: &[T]| xs.iter().for_each(|&x| acc = acc + x * x);
        if let Some(h) = &self.hidden {
            add(&h.weights);
            add(&h.bias);
        }
        add(&self.output.weights);
        add(&self.output.bias);
        acc.sqrt()
    }

    pub fn add_assign(&mut self, other: &Self) {
        fn add<T: Scalar>(a: &mut [T], b: &[T]) {
            a.iter_mut().zip(b).for_each(|(x, &y)| *x = *x + y);
        }
        if let (Some(a), Some(b)) = (&mut self.hidden, &other.hidden) {
            add(&mut a.weights, &b.weights);
            add(&mut a.bias, &b.bias);
        }
        add(&mut self.output.weights, &other.output.weights);
        add(&mut self.output.bias, &other.output.bias);
        add(&mut self.v_turn.weights, &other.v_turn.weights);
        self.v_turn.bias = self.v_turn.bias + other.v_turn.bias;
        add(&mut self.v_session.weights, &other.v_session.weights);
        self.v_session.bias = self.v_session.bias + other.v_session.bias;
    }
}

fn param_blocks<T: Scalar>(
    hidden: &Option<Dense<T>>,
    output: &Dense<T>,
    v_turn: &ValueHead<T>,
    v_session: &ValueHead<T>,
) -> Vec<(&'static str, Vec<T>)> {
    let mut out = Vec::new();
    if let Some(h) = hidden {
        out.push(("policy.hidden.weights", h.weights.clone()));
        out.push(("policy.hidden.bias", h.bias.clone()));
    }
    out.push(("policy.output.weights", output.weights.clone()));
    out.push(("policy.output.bias", output.bias.clone()));
    out.push(("v_turn.weights", v_turn.weights.clone()));
    out.push(("v_turn.bias", vec![v_turn.bias]));
    out.push(("v_session.weights", v_session.weights.clone()));
    out.push(("v_session.bias", vec![v_session.bias]));
    out
}

/// One turn of a PPO update batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoSample<T> {
    pub features: Vec<T>,
    pub action: usize,
    pub old_log_prob: T,
}

/// Loss value and its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoLoss<T> {
    pub loss: T,
    /// Mean clipped surrogate (the quantity PPO maximises).
    pub surrogate: T,
    /// Mean `log pi - log pi_ref` at the taken actions.
    pub kl: T,
    /// Fraction of turns whose policy gradient is cut by the clip.
    pub clipped_fraction: T,
}

struct Forward<T> {
    hidden: Option<Vec<T>>,
    log_probs: Vec<T>,
}

pub fn log_softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<T>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

impl<T: Scalar> PolicyModel<T> {
    /// Zero-initialised linear policy (uniform over actions) and zero value heads.
    pub fn linear(feature_dim: usize, action_count: usize) -> Self {
        Self {
            feature_dim,
            action_count,
            hidden: None,
            output: Dense::zeros(feature_dim, action_count),
            v_turn: ValueHead::zeros(feature_dim),
            v_session: ValueHead::zeros(feature_dim),
        }
    }

    /// Tanh hidden layer with small uniform weights; the output layer starts
    /// at zero so the initial policy is still uniform.
    pub fn with_hidden<R: Rng + ?Sized>(feature_dim: usize, action_count: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (feature_dim as f64).sqrt();
        Self {
            hidden: Some(Dense::uniform(feature_dim, HIDDEN_WIDTH, scale, rng)),
            output: Dense::zeros(HIDDEN_WIDTH, action_count),
            ..Self::linear(feature_dim, action_count)
        }
    }

    /// Every parameter drawn uniformly from `[-scale, scale)`.
    pub fn random<R: Rng + ?Sized>(
        feature_dim: usize,
        action_count: usize,
        hidden: bool,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let hidden_layer = hidden.then(|| Dense::uniform(feature_dim, HIDDEN_WIDTH, scale, rng));
        let out_in = if hidden { HIDDEN_WIDTH } else { feature_dim };
        let output = Dense::uniform(out_in, action_count, scale, rng);
        let head = |rng: &mut R| {
            let d = Dense::<T>::uniform(feature_dim, 1, scale, rng);
            ValueHead { weights: d.weights, bias: d.bias[0] }
        };
        let v_turn = head(rng);
        let v_session = head(rng);
        Self { feature_dim, action_count, hidden: hidden_layer, output, v_turn, v_session }
    }

    fn check_features(&self, x: &[T]) -> Result<(), PolicyError> {
        dim_check(self.feature_dim, x.len())
    }

    fn forward(&self, x: &[T]) -> Forward<T> {
        let hidden = self.hidden.as_ref().map(|h| h.forward(x).into_iter().map(T::tanh).collect::<Vec<_>>());
        let logits = self.output.forward(hidden.as_deref().unwrap_or(x));
        Forward { hidden, log_probs: log_softmax(&logits) }
    }

    pub fn action_logits(&self, features: &[T]) -> Result<Vec<T>, PolicyError> {
        self.check_features(features)?;
        let h = self.hidden.as_ref().map(|h| h.forward(features).into_iter().map(T::tanh).collect::<Vec<_>>());
        Ok(self.output.forward(h.as_deref().unwrap_or(features)))
    }

    pub fn log_probs(&self, features: &[T]) -> Result<Vec<T>, PolicyError> {
        self.check_features(features)?;
        Ok(self.forward(features).log_probs)
    }

    pub fn probs(&self, features: &[T]) -> Result<Vec<T>, PolicyError> {
        Ok(self.log_probs(features)?.into_iter().map(T::exp).collect())
    }

    pub fn log_prob(&self, features: &[T], action: usize) -> Result<T, PolicyError> {
        Ok(self.log_probs(features)?[action])
    }

    /// Inverse-CDF categorical draw consuming one uniform from `rng`.
    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        features: &[T],
        rng: &mut R,
    ) -> Result<(usize, T), PolicyError> {
        let lp = self.log_probs(features)?;
        let probs: Vec<f64> = lp.iter().map(|&l| l.exp().to_f64_lossy()).collect();
        let a = sample_index(&probs, rng.gen::<f64>());
        Ok((a, lp[a]))
    }

    /// Most probable action, lowest index on ties.
    pub fn greedy_action(&self, features: &[T]) -> Result<(usize, T), PolicyError> {
        let lp = self.log_probs(features)?;
        let mut best = 0;
        for (i, &l) in lp.iter().enumerate() {
            if l > lp[best] {
                best = i;
            }
        }
        Ok((best, lp[best]))
    }

    pub fn value_turn(&self, features: &[T]) -> T {
        self.v_turn.predict(features)
    }

    pub fn value_session(&self, features: &[T]) -> T {
        self.v_session.predict(features)
    }

    fn check_ppo_inputs(
        &self,
        batch: &[PpoSample<T>],
        a_total: &[T],
        ref_log_probs: &[T],
    ) -> Result<(), PolicyError> {
        dim_check(batch.len(), a_total.len())?;
        dim_check(batch.len(), ref_log_probs.len())?;
        for s in batch {
            self.check_features(&s.features)?;
            if s.action >= self.action_count {
                return Err(PolicyError::DimMismatch { expected: self.action_count, got: s.action });
            }
        }
        Ok(())
    }

    /// Forward-only PPO loss, `-mean(min(rho A, clip(rho) A)) + kl_coef * mean(log pi - log pi_ref)`.
    pub fn ppo_loss(
        &self,
        batch: &[PpoSample<T>],
        a_total: &[T],
        ref_log_probs: &[T],
        ppo: &PpoParams,
    ) -> Result<PpoLoss<T>, PolicyError> {
        self.check_ppo_inputs(batch, a_total, ref_log_probs)?;
        let eps = T::lit(ppo.epsilon_clip);
        let n = T::lit(batch.len().max(1) as f64);
        let (mut surr, mut kl, mut clipped) = (T::zero(), T::zero(), T::zero());
        for ((s, &adv), &r) in batch.iter().zip(a_total).zip(ref_log_probs) {
            let lp = self.forward(&s.features).log_probs[s.action];
            let rho = (lp - s.old_log_prob).exp();
            let clipped_rho = rho.max(T::one() - eps).min(T::one() + eps);
            surr = surr + (rho * adv).min(clipped_rho * adv);
            kl = kl + (lp - r);
            if clip_active(rho, adv, eps) {
                clipped = clipped + T::one();
            }
        }
        let (surrogate, kl) = (surr / n, kl / n);
        Ok(PpoLoss {
            loss: -surrogate + T::lit(ppo.kl_coef) * kl,
            surrogate,
            kl,
            clipped_fraction: clipped / n,
        })
    }

    /// PPO loss with exact gradients. A turn contributes no surrogate
    /// gradient when `(rho > 1 + eps and A > 0)` or `(rho < 1 - eps and A < 0)`.
    pub fn ppo_loss_and_grad(
        &self,
        batch: &[PpoSample<T>],
        a_total: &[T],
        ref_log_probs: &[T],
        ppo: &PpoParams,
    ) -> Result<(PpoLoss<T>, GradientRecord<T>), PolicyError> {
        let loss = self.ppo_loss(batch, a_total, ref_log_probs, ppo)?;
        let eps = T::lit(ppo.epsilon_clip);
        let kl_coef = T::lit(ppo.kl_coef);
        let n = T::lit(batch.len().max(1) as f64);
        let mut grads = GradientRecord::zeros_like(self);
        for (s, &adv) in batch.iter().zip(a_total) {
            let fw = self.forward(&s.features);
            let lp = fw.log_probs[s.action];
            let rho = (lp - s.old_log_prob).exp();
            let surrogate_coef = if clip_active(rho, adv, eps) { T::zero() } else { -(adv * rho) };
            let coef = (surrogate_coef + kl_coef) / n;
            self.accumulate_log_prob_grad(&mut grads, &s.features, &fw, s.action, coef);
        }
        Ok((loss, grads))
    }

    /// Adds `coef * d log pi(action | x) / d theta` into `grads`.
    fn accumulate_log_prob_grad(
        &self,
        grads: &mut GradientRecord<T>,
        x: &[T],
        fw: &Forward<T>,
        action: usize,
        coef: T,
    ) {
        if coef == T::zero() {
            return;
        }
        let d_logits: Vec<T> = fw
            .log_probs
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let onehot = if i == action { T::one() } else { T::zero() };
                coef * (onehot - l.exp())
            })
            .collect();
        match (&self.hidden, &fw.hidden, &mut grads.hidden) {
            (Some(_), Some(h), Some(gh)) => {
                grads.output.accumulate(&d_logits, h);
                let dh = self.output.backward_input(&d_logits);
                let d_pre: Vec<T> = dh.iter().zip(h).map(|(&g, &a)| g * (T::one() - a * a)).collect();
                gh.accumulate(&d_pre, x);
            }
            _ => grads.output.accumulate(&d_logits, x),
        }
    }

    /// Forward-only value losses `(mean (t - V_turn)^2, mean (t - V_session)^2)`.
    pub fn value_loss(
        &self,
        features: &[Vec<T>],
        targets_turn: &[T],
        targets_session: &[T],
    ) -> Result<(T, T), PolicyError> {
        dim_check(features.len(), targets_turn.len())?;
        dim_check(features.len(), targets_session.len())?;
        let n = T::lit(features.len().max(1) as f64);
        let (mut lt, mut ls) = (T::zero(), T::zero());
        for ((x, &tt), &ts) in features.iter().zip(targets_turn).zip(targets_session) {
            self.check_features(x)?;
            let et = tt - self.value_turn(x);
            let es = ts - self.value_session(x);
            lt = lt + et * et;
            ls = ls + es * es;
        }
        Ok((lt / n, ls / n))
    }

    pub fn value_loss_and_grad(
        &self,
        features: &[Vec<T>],
        targets_turn: &[T],
        targets_session: &[T],
    ) -> Result<((T, T), GradientRecord<T>), PolicyError> {
        let losses = self.value_loss(features, targets_turn, targets_session)?;
        let scale = T::lit(-2.0) / T::lit(features.len().max(1) as f64);
        let mut grads = GradientRecord::zeros_like(self);
        for ((x, &tt), &ts) in features.iter().zip(targets_turn).zip(targets_session) {
            let gt = scale * (tt - self.value_turn(x));
            let gs = scale * (ts - self.value_session(x));
            for ((wt, ws), &xi) in grads.v_turn.weights.iter_mut().zip(grads.v_session.weights.iter_mut()).zip(x) {
                *wt = *wt + gt * xi;
                *ws = *ws + gs * xi;
            }
            grads.v_turn.bias = grads.v_turn.bias + gt;
            grads.v_session.bias = grads.v_session.bias + gs;
        }
        Ok((losses, grads))
    }

    /// Gradient step `theta -= learning_rate * grad`.
    pub fn apply_gradients(&mut self, grads: &GradientRecord<T>, learning_rate: T) {
        fn step<T: Scalar>(p: &mut [T], g: &[T], lr: T) {
            p.iter_mut().zip(g).for_each(|(x, &d)| *x = *x - lr * d);
        }
        if let (Some(h), Some(g)) = (&mut self.hidden, &grads.hidden) {
            step(&mut h.weights, &g.weights, learning_rate);
            step(&mut h.bias, &g.bias, learning_rate);
        }
        step(&mut self.output.weights, &grads.output.weights, learning_rate);
        step(&mut self.output.bias, &grads.output.bias, learning_rate);
        step(&mut self.v_turn.weights, &grads.v_turn.weights, learning_rate);
        self.v_turn.bias = self.v_turn.bias - learning_rate * grads.v_turn.bias;
        step(&mut self.v_session.weights, &grads.v_session.weights, learning_rate);
        self.v_session.bias = self.v_session.bias - learning_rate * grads.v_session.bias;
    }

    /// Named flat parameter blocks, in a fixed order.
    pub fn blocks(&self) -> Vec<(&'static str, Vec<T>)> {
        param_blocks(&self.hidden, &self.output, &self.v_turn, &self.v_session)
    }

    /// Mutable access to parameter `index` of block `name`.
    pub fn param_mut(&mut self, name: &str, index: usize) -> Option<&mut T> {
        match name {
            "policy.hidden.weights" => self.hidden.as_mut()?.weights.get_mut(index),
            "policy.hidden.bias" => self.hidden.as_mut()?.bias.get_mut(index),
            "policy.output.weights" => self.output.weights.get_mut(index),
            "policy.output.bias" => self.output.bias.get_mut(index),
            "v_turn.weights" => self.v_turn.weights.get_mut(index),
            "v_turn.bias" => (index == 0).then_some(&mut self.v_turn.bias),
            "v_session.weights" => self.v_session.weights.get_mut(index),
            "v_session.bias" => (index == 0).then_some(&mut self.v_session.bias),
            _ => None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|x| x.is_finite()))
    }

    fn check_shapes(&self) -> Result<(), PolicyError> {
        let bad = |m: &str| PolicyError::Checkpoint(m.to_owned());
        let out_in = self.hidden.as_ref().map_or(self.feature_dim, |h| h.outputs);
        if let Some(h) = &self.hidden {
            if h.inputs != self.feature_dim || h.weights.len() != h.inputs * h.outputs || h.bias.len() != h.outputs {
                return Err(bad("hidden layer shape"));
            }
        }
        let o = &self.output;
        if o.inputs != out_in || o.outputs != self.action_count || o.weights.len() != o.inputs * o.outputs || o.bias.len() != o.outputs {
            return Err(bad("output layer shape"));
        }
        if self.v_turn.weights.len() != self.feature_dim || self.v_session.weights.len() != self.feature_dim {
            return Err(bad("value head shape"));
        }
        if !self.all_finite() {
            return Err(bad("non-finite parameter"));
        }
        Ok(())
    }
}

impl<T: Scalar> PolicyModel<T>
where
    T: Serialize + for<'de> Deserialize<'de>,
{
    /// Writes a versioned JSON checkpoint.
    pub fn save<W: Write>(&self, out: W) -> Result<(), PolicyError> {
        let record = CheckpointRef { format: CHECKPOINT_FORMAT, version: CHECKPOINT_VERSION, model: self };
        serde_json::to_writer_pretty(out, &record).map_err(|e| PolicyError::Checkpoint(e.to_string()))
    }

    pub fn load<R: Read>(input: R) -> Result<Self, PolicyError> {
        let record: Checkpoint<T> =
            serde_json::from_reader(input).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        if record.format != CHECKPOINT_FORMAT || record.version != CHECKPOINT_VERSION {
            return Err(PolicyError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                record.format, record.version
            )));
        }
        record.model.check_shapes()?;
        Ok(record.model)
    }
}

#[derive(Serialize)]
struct CheckpointRef<'a, T> {
    format: &'static str,
    version: u32,
    model: &'a PolicyModel<T>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint<T> {
    format: String,
    version: u32,
    model: PolicyModel<T>,
}

fn clip_active<T: Scalar>(rho: T, adv: T, eps: T) -> bool {
    (rho > T::one() + eps && adv > T::zero()) || (rho < T::one() - eps && adv < T::zero())
}

impl<T: Scalar> ValueHeads<T> for PolicyModel<T> {
    fn turn_value(&self, features: &[f64]) -> T {
        let x: Vec<T> = features.iter().map(|&v| T::lit(v)).collect();
        self.value_turn(&x)
    }

    fn session_value(&self, features: &[f64]) -> T {
        let x: Vec<T> = features.iter().map(|&v| T::lit(v)).collect();
        self.value_session(&x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ppo() -> PpoParams {
        PpoParams { epsilon_clip: 0.2, kl_coef: 0.0, ..PpoParams::default() }
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = PolicyModel::<f64>::linear(3, 8);
        let lp = m.log_probs(&[0.3, -1.0, 2.0]).unwrap();
        for l in lp {
            assert!((l + 8f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn log_softmax_is_shift_invariant() {
        let z = [0.3f64, -1.2, 4.0];
        let a = log_softmax(&z);
        let b = log_softmax(&z.map(|x| x + 17.0));
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn two_action_softmax_by_hand() {
        let mut m = PolicyModel::<f64>::linear(1, 2);
        m.output.weights = vec![1.0, 0.0];
        let p = m.probs(&[1.0]).unwrap();
        let e = 1f64.exp();
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn dim_mismatch() {
        let m = PolicyModel::<f64>::linear(3, 8);
        assert!(matches!(m.action_logits(&[1.0]), Err(PolicyError::DimMismatch { expected: 3, got: 1 })));
    }

    #[test]
    fn sampling_is_deterministic_per_stream() {
        let m = PolicyModel::<f64>::linear(2, 8);
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            assert_eq!(m.sample_action(&[0.1, 0.2], &mut a).unwrap(), m.sample_action(&[0.1, 0.2], &mut b).unwrap());
        }
    }

    #[test]
    fn ratio_one_gives_mean_advantage() {
        let m = PolicyModel::<f64>::linear(2, 3);
        let x = vec![0.5, -0.5];
        let lp = m.log_prob(&x, 1).unwrap();
        let batch = vec![
            PpoSample { features: x.clone(), action: 1, old_log_prob: lp },
            PpoSample { features: x, action: 1, old_log_prob: lp },
        ];
        let out = m.ppo_loss(&batch, &[1.0, -3.0], &[lp, lp], &ppo()).unwrap();
        assert!((out.surrogate + 1.0).abs() < 1e-15);
        assert_eq!(out.clipped_fraction, 0.0);
        assert_eq!(out.kl, 0.0);
    }

    #[test]
    fn clipped_turns_have_zero_policy_gradient() {
        let m = PolicyModel::<f64>::linear(1, 2);
        let lp = m.log_prob(&[1.0], 0).unwrap();
        // rho = 1.5, A = +1
        let batch = vec![PpoSample { features: vec![1.0], action: 0, old_log_prob: lp - 1.5f64.ln() }];
        let (out, g) = m.ppo_loss_and_grad(&batch, &[1.0], &[lp], &ppo()).unwrap();
        assert!((out.surrogate - 1.2).abs() < 1e-12);
        assert_eq!(g.policy_norm(), 0.0);
        // rho = 0.5, A = -1
        let batch = vec![PpoSample { features: vec![1.0], action: 0, old_log_prob: lp - 0.5f64.ln() }];
        let (out, g) = m.ppo_loss_and_grad(&batch, &[-1.0], &[lp], &ppo()).unwrap();
        assert!((out.surrogate + 0.8).abs() < 1e-12);
        assert_eq!(g.policy_norm(), 0.0);
    }

    #[test]
    fn value_loss_examples() {
        let m = PolicyModel::<f64>::linear(1, 2);
        let ((lt, ls), g) = m.value_loss_and_grad(&[vec![1.0]], &[1.0], &[1.0]).unwrap();
        assert_eq!((lt, ls), (1.0, 1.0));
        assert_eq!(g.v_turn.bias, -2.0);
        assert_eq!(g.v_session.weights, vec![-2.0]);
        let ((lt2, _), _) = m.value_loss_and_grad(&[vec![1.0]], &[2.0], &[2.0]).unwrap();
        assert_eq!(lt2, 4.0 * lt);
    }

    #[test]
    fn perfect_value_predictions_give_zero_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = PolicyModel::<f64>::random(3, 4, false, 0.5, &mut rng);
        let xs = vec![vec![0.1, 0.2, 0.3], vec![-1.0, 0.0, 2.0]];
        let tt: Vec<f64> = xs.iter().map(|x| m.value_turn(x)).collect();
        let ts: Vec<f64> = xs.iter().map(|x| m.value_session(x)).collect();
        let ((lt, ls), g) = m.value_loss_and_grad(&xs, &tt, &ts).unwrap();
        assert_eq!((lt, ls), (0.0, 0.0));
        assert!(g.blocks().iter().all(|(_, b)| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = PolicyModel::<f64>::random(5, 8, true, 0.7, &mut rng);
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        let back = PolicyModel::<f64>::load(buf.as_slice()).unwrap();
        assert_eq!(m, back);
        let text = String::from_utf8(buf).unwrap().replace("\"version\": 1", "\"version\": 9");
        assert!(PolicyModel::<f64>::load(text.as_bytes()).is_err());
    }
}
