//! Evaluation metrics computed from recorded dialogues.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::ActionKind;
use crate::rewards::violation_score;
use crate::trajectory::Trajectory;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no trajectories to report on")]
    EmptyInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Number of episodes the report covers; zero marks an empty report.
    pub episodes: usize,
    pub cvr: f64,
    /// `100 - mean violation score`, floored at zero.
    pub compliance: f64,
    pub avg_turn: f64,
    /// Mean within-response repetition over all turns.
    pub intra_r: f64,
    /// Mean overlap with the previous agent turns over all turns.
    pub inter_r: f64,
    /// Share of adjacent turn pairs that reuse the previous action kind.
    pub repeat_action_rate: f64,
    pub filler_rate: f64,
    pub repeat_script_rate: f64,
    pub overpromise_rate: f64,
    /// Share of episodes whose final attitude ranks above the initial one.
    pub positive_transfer_rate: f64,
}

impl EvalReport {
    /// Report over zero episodes.
    pub fn empty() -> Self {
        Self {
            episodes: 0,
            cvr: 0.0,
            compliance: 0.0,
            avg_turn: 0.0,
            intra_r: 0.0,
            inter_r: 0.0,
            repeat_action_rate: 0.0,
            filler_rate: 0.0,
            repeat_script_rate: 0.0,
            overpromise_rate: 0.0,
            positive_transfer_rate: 0.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.episodes == 0
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Sum over the sorted values, so the result does not depend on episode order.
fn order_free_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

pub fn compute_report(trajectories: &[Trajectory]) -> Result<EvalReport, MetricsError> {
    if trajectories.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let episodes = trajectories.len();
    let converted = trajectories.iter().filter(|t| t.converted).count();
    let turns: usize = trajectories.iter().map(Trajectory::len).sum();
    let violations: f64 = trajectories.iter().map(violation_score).sum();

    let mut pairs = 0;
    let mut repeats = 0;
    for t in trajectories {
        let kinds: Vec<ActionKind> = t.actions().collect();
        pairs += kinds.len().saturating_sub(1);
        repeats += kinds.windows(2).filter(|w| w[0] == w[1]).count();
    }
    let count_kind = |k: ActionKind| trajectories.iter().flat_map(Trajectory::actions).filter(|&a| a == k).count();
    let intra = order_free_sum(trajectories.iter().flat_map(|t| &t.turns).map(|t| t.reward.intra));
    let inter = order_free_sum(trajectories.iter().flat_map(|t| &t.turns).map(|t| t.reward.inter));
    let improved = trajectories
        .iter()
        .filter(|t| t.final_attitude().rank() > t.initial_intent().rank())
        .count();

    let turns_f = turns.max(1) as f64;
    Ok(EvalReport {
        episodes,
        cvr: ratio(converted, episodes),
        compliance: (100.0 - violations / episodes as f64).max(0.0),
        avg_turn: turns as f64 / episodes as f64,
        intra_r: intra / turns_f,
        inter_r: inter / turns_f,
        repeat_action_rate: ratio(repeats, pairs),
        filler_rate: ratio(count_kind(ActionKind::Filler), turns),
        repeat_script_rate: ratio(count_kind(ActionKind::RepeatScript), turns),
        overpromise_rate: ratio(count_kind(ActionKind::OverPromise), turns),
        positive_transfer_rate: ratio(improved, episodes),
    })
}

/// Median of a sample; NaN when empty.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}
