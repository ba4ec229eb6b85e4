//! Turn-level and session-level rewards.
//!
//! The turn reward is a gated fusion: a Gaussian length incentive is paid
//! only while the response is either non-repetitive or far from the canned
//! script library, otherwise a fixed penalty replaces it. The session reward
//! is paid once, at the final turn, from the conversion outcome and the
//! number of compliance violations.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::trajectory::Trajectory;

/// Number of earlier agent turns inspected for inter-turn overlap.
pub const REPETITION_WINDOW: usize = 3;

/// Violation score charged per compliance-violating turn.
pub const VIOLATION_UNIT: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("utterance is empty")]
    EmptyUtterance,
    #[error("script library is empty")]
    EmptyLibrary,
    #[error("trajectory has not terminated")]
    NonTerminalTrajectory,
    #[error("failed to read script library {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TurnRewardParams {
    /// Repetition gate threshold.
    pub delta1: f64,
    /// Script-similarity gate threshold.
    pub delta2: f64,
    /// Target response length in tokens.
    pub l_target: u32,
    /// Width of the Gaussian length incentive.
    pub sigma_len: f64,
    /// Reward paid instead of the length incentive when the gate is closed.
    pub r_penalty: f64,
}

impl Default for TurnRewardParams {
    fn default() -> Self {
        Self {
            delta1: 0.4,
            delta2: 0.85,
            l_target: 30,
            sigma_len: 10.0,
            r_penalty: -2.0,
        }
    }
}

impl TurnRewardParams {
    /// Returns the offending key and reason on the first invariant violation.
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        if !(self.delta1 > 0.0 && self.delta1 < 1.0) {
            return Err(("delta1", format!("must lie in (0, 1), got {}", self.delta1)));
        }
        if !(self.delta2 > 0.0 && self.delta2 <= 1.0) {
            return Err(("delta2", format!("must lie in (0, 1], got {}", self.delta2)));
        }
        if self.l_target == 0 {
            return Err(("l_target", "must be positive".into()));
        }
        if !(self.sigma_len > 0.0 && self.sigma_len.is_finite()) {
            return Err(("sigma_len", format!("must be positive, got {}", self.sigma_len)));
        }
        if !(self.r_penalty < 0.0 && self.r_penalty.is_finite()) {
            return Err(("r_penalty", format!("must be negative, got {}", self.r_penalty)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionRewardParams {
    /// Weight of the conversion indicator.
    pub alpha: f64,
    /// Weight of the violation score.
    pub beta: f64,
}

impl Default for SessionRewardParams {
    fn default() -> Self {
        Self { alpha: 5.0, beta: 1.0 }
    }
}

impl SessionRewardParams {
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(("alpha", format!("must be positive, got {}", self.alpha)));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(("beta", format!("must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Every intermediate quantity of one turn reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown<T> {
    /// Within-response repetition, `1 - distinct/total`.
    pub intra: T,
    /// Max Jaccard overlap with the previous agent turns.
    pub inter: T,
    /// `max(intra, inter)`.
    pub rep: T,
    pub sim: T,
    pub r_len: T,
    pub gate_valid: bool,
    pub r_turn: T,
}

/// `1 - distinct/total` over one response.
pub fn intra_repetition<T: Scalar, S: AsRef<str>>(tokens: &[S]) -> Result<T, RewardError> {
    if tokens.is_empty() {
        return Err(RewardError::EmptyUtterance);
    }
    let distinct: BTreeSet<&str> = tokens.iter().map(AsRef::as_ref).collect();
    Ok(T::one() - T::lit(distinct.len() as f64) / T::lit(tokens.len() as f64))
}

/// Max Jaccard overlap between the token set of `tokens` and each of the
/// last [`REPETITION_WINDOW`] entries of `history` (oldest first).
pub fn inter_repetition<T, S, H, P>(tokens: &[S], history: &[H]) -> T
where
    T: Scalar,
    S: AsRef<str>,
    H: AsRef<[P]>,
    P: AsRef<str>,
{
    let current: BTreeSet<&str> = tokens.iter().map(AsRef::as_ref).collect();
    let start = history.len().saturating_sub(REPETITION_WINDOW);
    history[start..]
        .iter()
        .map(|prev| {
            let prev: BTreeSet<&str> = prev.as_ref().iter().map(AsRef::as_ref).collect();
            let union = current.union(&prev).count();
            if union == 0 {
                T::zero()
            } else {
                T::lit(current.intersection(&prev).count() as f64) / T::lit(union as f64)
            }
        })
        .fold(T::zero(), T::max)
}

/// Repetition score `max(intra, inter)` in `[0, 1]`.
pub fn repetition_score<T, S, H, P>(current: &[S], history: &[H]) -> Result<T, RewardError>
where
    T: Scalar,
    S: AsRef<str>,
    H: AsRef<[P]>,
    P: AsRef<str>,
{
    let intra: T = intra_repetition(current)?;
    Ok(intra.max(inter_repetition(current, history)))
}

fn count_vector<S: AsRef<str>>(tokens: &[S]) -> BTreeMap<&str, u32> {
    let mut counts = BTreeMap::new();
    for t in tokens {
        *counts.entry(t.as_ref()).or_insert(0) += 1;
    }
    counts
}

fn cosine<T: Scalar>(a: &BTreeMap<&str, u32>, b: &BTreeMap<&str, u32>) -> T {
    let dot: u64 = a
        .iter()
        .filter_map(|(k, &x)| b.get(k).map(|&y| u64::from(x) * u64::from(y)))
        .sum();
    let na: u64 = a.values().map(|&x| u64::from(x) * u64::from(x)).sum();
    let nb: u64 = b.values().map(|&x| u64::from(x) * u64::from(x)).sum();
    if na == 0 || nb == 0 {
        return T::zero();
    }
    // Integer accumulation keeps the result independent of iteration order.
    (T::lit(dot as f64) / (T::lit(na as f64).sqrt() * T::lit(nb as f64).sqrt())).min(T::one())
}

/// Max cosine similarity between token-count vectors of `utterance` and each script.
pub fn script_similarity<T, S, H, P>(utterance: &[S], script_library: &[H]) -> Result<T, RewardError>
where
    T: Scalar,
    S: AsRef<str>,
    H: AsRef<[P]>,
    P: AsRef<str>,
{
    if script_library.is_empty() {
        return Err(RewardError::EmptyLibrary);
    }
    let u = count_vector(utterance);
    Ok(script_library
        .iter()
        .map(|s| cosine::<T>(&u, &count_vector(s.as_ref())))
        .fold(T::zero(), T::max))
}

/// `exp(-(len - L_target)^2 / (2 sigma^2))`.
pub fn length_reward<T: Scalar>(length_tokens: usize, params: &TurnRewardParams) -> T {
    let diff = T::lit(length_tokens as f64) - T::lit(f64::from(params.l_target));
    let sigma = T::lit(params.sigma_len);
    (-(diff * diff) / (T::lit(2.0) * sigma * sigma)).exp()
}

/// Gate fusion from already-computed components.
pub fn fuse_gate<T: Scalar>(
    intra: T,
    inter: T,
    sim: T,
    r_len: T,
    params: &TurnRewardParams,
) -> RewardBreakdown<T> {
    let rep = intra.max(inter);
    let gate_valid = rep <= T::lit(params.delta1) || sim <= T::lit(params.delta2);
    let r_turn = if gate_valid { r_len } else { T::lit(params.r_penalty) };
    RewardBreakdown { intra, inter, rep, sim, r_len, gate_valid, r_turn }
}

/// Gated turn reward for one agent response given the earlier agent turns
/// of the same dialogue (oldest first).
pub fn turn_reward<T, S, H, P>(
    utterance: &[S],
    history: &[H],
    script_library: &ScriptLibrary,
    params: &TurnRewardParams,
) -> Result<RewardBreakdown<T>, RewardError>
where
    T: Scalar,
    S: AsRef<str>,
    H: AsRef<[P]>,
    P: AsRef<str>,
{
    let intra = intra_repetition(utterance)?;
    let inter = inter_repetition(utterance, history);
    let sim = script_library.similarity(utterance)?;
    let r_len = length_reward(utterance.len(), params);
    Ok(fuse_gate(intra, inter, sim, r_len, params))
}

/// Cumulative violation score of a dialogue.
pub fn violation_score(trajectory: &Trajectory) -> f64 {
    f64::from(trajectory.violation_count()) * VIOLATION_UNIT
}

/// Compliance on a 100-point scale: `100 - S_violation`.
pub fn compliance_score(trajectory: &Trajectory) -> f64 {
    100.0 - violation_score(trajectory)
}

/// `alpha * 1[converted] - beta * S_violation`, paid at the final turn.
pub fn session_reward(
    trajectory: &Trajectory,
    params: &SessionRewardParams,
) -> Result<f64, RewardError> {
    if !trajectory.terminal {
        return Err(RewardError::NonTerminalTrajectory);
    }
    let conversion = if trajectory.converted { 1.0 } else { 0.0 };
    Ok(params.alpha * conversion - params.beta * violation_score(trajectory))
}

/// Canned professional scripts, tokenized on whitespace.
#[derive(Debug, Clone)]
pub struct ScriptLibrary {
    scripts: Vec<Vec<String>>,
}

impl ScriptLibrary {
    pub fn new(scripts: Vec<Vec<String>>) -> Result<Self, RewardError> {
        let scripts: Vec<_> = scripts.into_iter().filter(|s| !s.is_empty()).collect();
        if scripts.is_empty() {
            return Err(RewardError::EmptyLibrary);
        }
        Ok(Self { scripts })
    }

    /// One script per non-blank line.
    pub fn parse(text: &str) -> Result<Self, RewardError> {
        Self::new(
            text.lines()
                .map(|l| l.split_whitespace().map(str::to_owned).collect())
                .collect(),
        )
    }

    pub fn load(path: &Path) -> Result<Self, RewardError> {
        let text = std::fs::read_to_string(path).map_err(|e| RewardError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// The library shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse(include_str!("../assets/scripts.txt")).expect("bundled script library is valid")
    }

    pub fn scripts(&self) -> &[Vec<String>] {
        &self.scripts
    }

    pub fn similarity<T: Scalar, S: AsRef<str>>(&self, utterance: &[S]) -> Result<T, RewardError> {
        script_similarity(utterance, &self.scripts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    const NO_HISTORY: &[Vec<&str>] = &[];

    #[test]
    fn repetition_examples() {
        let r: f64 = repetition_score(&toks("a b c d"), NO_HISTORY).unwrap();
        assert_eq!(r, 0.0);
        let r: f64 = repetition_score(&toks("a a a a"), NO_HISTORY).unwrap();
        assert_eq!(r, 0.75);
        let r: f64 = repetition_score(&toks("a b"), &[toks("a b")]).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn repetition_only_looks_back_three_turns() {
        let history = vec![toks("x y"), toks("p"), toks("q"), toks("r")];
        let r: f64 = repetition_score(&toks("x y"), &history).unwrap();
        assert_eq!(r, 0.0);
        let r: f64 = repetition_score(&toks("x y"), &history[..3]).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn empty_utterance_is_rejected() {
        let empty: Vec<&str> = vec![];
        assert_eq!(
            repetition_score::<f64, _, _, &str>(&empty, NO_HISTORY),
            Err(RewardError::EmptyUtterance)
        );
    }

    #[test]
    fn similarity_examples() {
        let lib = vec![toks("a b c"), toks("d e")];
        let s: f64 = script_similarity(&toks("d e"), &lib).unwrap();
        assert!((s - 1.0).abs() < 1e-15);
        let s: f64 = script_similarity(&toks("x y z"), &lib).unwrap();
        assert_eq!(s, 0.0);
        let s: f64 = script_similarity(&toks("a a b"), &[toks("a b")]).unwrap();
        assert!((s - 3.0 / 10f64.sqrt()).abs() < 1e-12);
        let empty: &[Vec<&str>] = &[];
        assert_eq!(
            script_similarity::<f64, _, _, &str>(&toks("a"), empty),
            Err(RewardError::EmptyLibrary)
        );
    }

    #[test]
    fn length_examples() {
        let p = TurnRewardParams::default();
        assert_eq!(length_reward::<f64>(30, &p), 1.0);
        assert!((length_reward::<f64>(40, &p) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((length_reward::<f64>(1, &p) - (-841.0f64 / 200.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn gate_examples() {
        let p = TurnRewardParams::default();
        let b = fuse_gate(0.5f64, 0.0, 0.9, 0.7, &p);
        assert!(!b.gate_valid);
        assert_eq!(b.r_turn, -2.0);
        let b = fuse_gate(0.0f64, 0.0, 1.0, 0.7, &p);
        assert!(b.gate_valid);
        assert_eq!(b.r_turn, 0.7);
        let b = fuse_gate(0.5f64, 0.2, 0.2, 0.7, &p);
        assert!(b.gate_valid);
        assert_eq!(b.rep, 0.5);
        assert_eq!(b.r_turn, 0.7);
    }

    #[test]
    fn turn_reward_penalises_verbatim_repeat_of_a_script() {
        let lib = ScriptLibrary::bundled();
        let p = TurnRewardParams::default();
        let script = lib.scripts()[1].clone();
        let fresh: RewardBreakdown<f64> = turn_reward(&script, NO_HISTORY, &lib, &p).unwrap();
        assert!(fresh.gate_valid);
        assert_eq!(fresh.r_turn, fresh.r_len);
        let repeated: RewardBreakdown<f64> =
            turn_reward(&script, std::slice::from_ref(&script), &lib, &p).unwrap();
        assert!(!repeated.gate_valid);
        assert_eq!(repeated.r_turn, -2.0);
    }

    #[test]
    fn params_validation() {
        let mut p = TurnRewardParams::default();
        assert!(p.check().is_ok());
        p.delta1 = 1.5;
        assert_eq!(p.check().unwrap_err().0, "delta1");
        let s = SessionRewardParams { alpha: 5.0, beta: 0.0 };
        assert_eq!(s.check().unwrap_err().0, "beta");
    }

    #[test]
    fn bundled_library_parses() {
        assert_eq!(ScriptLibrary::bundled().scripts().len(), 5);
        assert!(ScriptLibrary::parse("\n  \n").is_err());
    }
}
