//! Recorded dialogues and their line-delimited JSON form.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::env::{ActionKind, Intent};
use crate::rewards::RewardBreakdown;

/// One agent turn and the user's reaction to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub turn_index: usize,
    /// User intent observed before the agent acted.
    pub intent: Intent,
    pub features: Vec<f64>,
    pub action: ActionKind,
    pub utterance: Vec<String>,
    /// Log-probability of `action` under the behaviour policy.
    pub log_prob: f64,
    pub user_utterance: Vec<String>,
    /// Attitude the user ended the turn with (never `Terminated`).
    pub user_attitude: Intent,
    pub reward: RewardBreakdown<f64>,
}

/// One complete dialogue episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub persona_id: u32,
    pub seed: u64,
    pub turns: Vec<TurnRecord>,
    pub terminal: bool,
    pub converted: bool,
    pub session_reward: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn violation_count(&self) -> u32 {
        self.turns.iter().filter(|t| t.action.is_violation()).count() as u32
    }

    pub fn turn_rewards(&self) -> Vec<f64> {
        self.turns.iter().map(|t| t.reward.r_turn).collect()
    }

    /// Sparse session stream: zero everywhere except the final turn.
    pub fn session_rewards(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.turns.len()];
        if let Some(last) = out.last_mut() {
            *last = self.session_reward;
        }
        out
    }

    pub fn initial_intent(&self) -> Intent {
        self.turns.first().map_or(Intent::Neutral, |t| t.intent)
    }

    pub fn final_attitude(&self) -> Intent {
        self.turns.last().map_or(Intent::Neutral, |t| t.user_attitude)
    }

    pub fn actions(&self) -> impl Iterator<Item = ActionKind> + '_ {
        self.turns.iter().map(|t| t.action)
    }
}

/// Writes one episode per line.
pub fn write_jsonl<W: Write>(mut out: W, trajectories: &[Trajectory]) -> std::io::Result<()> {
    for t in trajectories {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl<R: BufRead>(input: R) -> anyhow::Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t = serde_json::from_str(&line)
            .map_err(|e| anyhow::anyhow!("line {}: {}", i + 1, e))?;
        out.push(t);
    }
    Ok(out)
}
