//! Per-horizon advantage estimation, horizon-independent normalization and fusion.
//!
//! Turn-level and session-level rewards each get their own GAE pass with
//! their own value head and discounting. The two advantage streams are then
//! standardized separately over the whole update batch before being summed
//! with fixed weights, so neither horizon can drown out the other.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{mean, population_std, Scalar};
use crate::trajectory::Trajectory;

#[derive(Debug, Error, PartialEq)]
pub enum AdvantageError {
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("empty input")]
    Empty,
    #[error("trajectory {0} in the batch has not terminated")]
    NonTerminal(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaeParams {
    pub gamma_turn: f64,
    pub lambda_turn: f64,
    pub gamma_session: f64,
    pub lambda_session: f64,
}

impl Default for GaeParams {
    fn default() -> Self {
        Self { gamma_turn: 0.99, lambda_turn: 0.95, gamma_session: 1.0, lambda_session: 1.0 }
    }
}

impl GaeParams {
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        for (key, v) in [
            ("gamma_turn", self.gamma_turn),
            ("lambda_turn", self.lambda_turn),
            ("gamma_session", self.gamma_session),
            ("lambda_session", self.lambda_session),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err((key, format!("must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HianParams {
    pub epsilon_norm: f64,
    pub w_turn: f64,
    pub w_session: f64,
}

impl Default for HianParams {
    fn default() -> Self {
        Self { epsilon_norm: 1e-8, w_turn: 1.0, w_session: 1.0 }
    }
}

impl HianParams {
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        if !(self.epsilon_norm > 0.0 && self.epsilon_norm.is_finite()) {
            return Err(("epsilon_norm", format!("must be positive, got {}", self.epsilon_norm)));
        }
        if !(self.w_turn >= 0.0 && self.w_turn.is_finite()) {
            return Err(("w_turn", format!("must be >= 0, got {}", self.w_turn)));
        }
        if !(self.w_session >= 0.0 && self.w_session.is_finite()) {
            return Err(("w_session", format!("must be >= 0, got {}", self.w_session)));
        }
        if self.w_turn + self.w_session <= 0.0 {
            return Err(("w_session", "w_turn + w_session must be positive".into()));
        }
        Ok(())
    }
}

/// Advantages for every turn of a batch, flattened in trajectory order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageSet<T> {
    pub a_turn: Vec<T>,
    pub a_session: Vec<T>,
    pub a_turn_hat: Vec<T>,
    pub a_session_hat: Vec<T>,
    pub a_total: Vec<T>,
}

impl<T> AdvantageSet<T> {
    pub fn len(&self) -> usize {
        self.a_total.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a_total.is_empty()
    }
}

/// State-value predictions for both horizons.
pub trait ValueHeads<T> {
    fn turn_value(&self, features: &[f64]) -> T;
    fn session_value(&self, features: &[f64]) -> T;
}

/// Heads that predict zero everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroHeads;

impl<T: Scalar> ValueHeads<T> for ZeroHeads {
    fn turn_value(&self, _: &[f64]) -> T {
        T::zero()
    }
    fn session_value(&self, _: &[f64]) -> T {
        T::zero()
    }
}

/// Generalized advantage estimation over one episode, bootstrapping the
/// post-terminal value with zero.
pub fn gae<T: Scalar>(
    rewards: &[T],
    values: &[T],
    gamma: T,
    lambda: T,
) -> Result<Vec<T>, AdvantageError> {
    if rewards.len() != values.len() {
        return Err(AdvantageError::LengthMismatch { expected: rewards.len(), got: values.len() });
    }
    let mut out = vec![T::zero(); rewards.len()];
    let mut running = T::zero();
    let mut next_value = T::zero();
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * running;
        out[t] = running;
        next_value = values[t];
    }
    Ok(out)
}

/// Discounted reward-to-go, the regression target of a value head.
pub fn discounted_returns<T: Scalar>(rewards: &[T], gamma: T) -> Vec<T> {
    let mut out = vec![T::zero(); rewards.len()];
    let mut acc = T::zero();
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Batch standardization `(A - mean) / (population_std + eps)`.
pub fn normalize<T: Scalar>(advantages: &[T], epsilon_norm: T) -> Vec<T> {
    let mu = mean(advantages);
    let denom = population_std(advantages) + epsilon_norm;
    advantages.iter().map(|&a| (a - mu) / denom).collect()
}

pub fn fuse<T: Scalar>(
    a_turn_hat: &[T],
    a_session_hat: &[T],
    params: &HianParams,
) -> Result<Vec<T>, AdvantageError> {
    if a_turn_hat.len() != a_session_hat.len() {
        return Err(AdvantageError::LengthMismatch {
            expected: a_turn_hat.len(),
            got: a_session_hat.len(),
        });
    }
    let (wt, ws) = (T::lit(params.w_turn), T::lit(params.w_session));
    Ok(a_turn_hat.iter().zip(a_session_hat).map(|(&t, &s)| wt * t + ws * s).collect())
}

fn check_batch(batch: &[Trajectory]) -> Result<(), AdvantageError> {
    if batch.is_empty() {
        return Err(AdvantageError::Empty);
    }
    if let Some(i) = batch.iter().position(|t| !t.terminal || t.is_empty()) {
        return Err(AdvantageError::NonTerminal(i));
    }
    Ok(())
}

fn lit_vec<T: Scalar>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&x| T::lit(x)).collect()
}

/// Raw (pre-normalization) turn and session advantages of one episode.
pub fn episode_advantages<T: Scalar, V: ValueHeads<T>>(
    trajectory: &Trajectory,
    heads: &V,
    params: &GaeParams,
) -> (Vec<T>, Vec<T>) {
    let v_turn: Vec<T> = trajectory.turns.iter().map(|t| heads.turn_value(&t.features)).collect();
    let v_session: Vec<T> =
        trajectory.turns.iter().map(|t| heads.session_value(&t.features)).collect();
    let a_turn = gae(
        &lit_vec(&trajectory.turn_rewards()),
        &v_turn,
        T::lit(params.gamma_turn),
        T::lit(params.lambda_turn),
    )
    .expect("one value per turn");
    let a_session = gae(
        &lit_vec(&trajectory.session_rewards()),
        &v_session,
        T::lit(params.gamma_session),
        T::lit(params.lambda_session),
    )
    .expect("one value per turn");
    (a_turn, a_session)
}

/// Full dual-horizon pipeline: per-horizon GAE, per-horizon batch
/// normalization, weighted fusion.
pub fn duca_advantages<T: Scalar, V: ValueHeads<T>>(
    batch: &[Trajectory],
    heads: &V,
    gae_params: &GaeParams,
    hian: &HianParams,
) -> Result<AdvantageSet<T>, AdvantageError> {
    check_batch(batch)?;
    let mut a_turn = Vec::new();
    let mut a_session = Vec::new();
    for traj in batch {
        let (t, s) = episode_advantages(traj, heads, gae_params);
        a_turn.extend(t);
        a_session.extend(s);
    }
    let eps = T::lit(hian.epsilon_norm);
    let a_turn_hat = normalize(&a_turn, eps);
    let a_session_hat = normalize(&a_session, eps);
    let a_total = fuse(&a_turn_hat, &a_session_hat, hian)?;
    Ok(AdvantageSet { a_turn, a_session, a_turn_hat, a_session_hat, a_total })
}

/// Per-turn sum `r_turn + r_session` of one episode.
pub fn summed_rewards(trajectory: &Trajectory) -> Vec<f64> {
    trajectory
        .turn_rewards()
        .into_iter()
        .zip(trajectory.session_rewards())
        .map(|(a, b)| a + b)
        .collect()
}

/// Raw GAE over the summed reward stream, one value head (the session head),
/// session-horizon discounting. Not normalized.
pub fn naive_raw_advantages<T: Scalar, V: ValueHeads<T>>(
    batch: &[Trajectory],
    heads: &V,
    gae_params: &GaeParams,
    reward_stream: impl Fn(&Trajectory) -> Vec<f64>,
) -> Result<Vec<T>, AdvantageError> {
    check_batch(batch)?;
    let mut out = Vec::new();
    for traj in batch {
        let values: Vec<T> = traj.turns.iter().map(|t| heads.session_value(&t.features)).collect();
        out.extend(gae(
            &lit_vec(&reward_stream(traj)),
            &values,
            T::lit(gae_params.gamma_session),
            T::lit(gae_params.lambda_session),
        )?);
    }
    Ok(out)
}

/// Scalarized baseline: one GAE over `r_turn + r_session`, one normalization.
pub fn naive_advantages<T: Scalar, V: ValueHeads<T>>(
    batch: &[Trajectory],
    heads: &V,
    gae_params: &GaeParams,
    epsilon_norm: f64,
) -> Result<Vec<T>, AdvantageError> {
    let raw = naive_raw_advantages(batch, heads, gae_params, summed_rewards)?;
    Ok(normalize(&raw, T::lit(epsilon_norm)))
}

/// Effective per-unit scale of the turn signal under joint standardization
/// of the summed stream, `sigma_turn / sqrt(sigma_turn^2 + sigma_session^2)`
/// (independent streams), next to the unit scale horizon-independent
/// normalization gives it. Returns `(naive, hian)`.
pub fn dominance_ratio<T: Scalar>(a_turn: &[T], a_session: &[T]) -> (T, T) {
    let st = population_std(a_turn);
    let ss = population_std(a_session);
    let total = (st * st + ss * ss).sqrt();
    let naive = if total > T::zero() { st / total } else { T::one() };
    (naive, T::one())
}

/// Closed form of [`dominance_ratio`] from the two standard deviations.
pub fn naive_turn_weight<T: Scalar>(sigma_turn: T, sigma_session: T) -> T {
    let total = (sigma_turn * sigma_turn + sigma_session * sigma_session).sqrt();
    if total > T::zero() {
        sigma_turn / total
    } else {
        T::one()
    }
}
