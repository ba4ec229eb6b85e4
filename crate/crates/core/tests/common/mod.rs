#![allow(dead_code)]

use duca::env::FEATURE_DIM;
use duca::{ActionKind, Intent, RewardBreakdown, Trajectory, TurnRecord};

pub fn turn(index: usize, action: ActionKind, r_turn: f64) -> TurnRecord {
    TurnRecord {
        turn_index: index,
        intent: Intent::Neutral,
        features: vec![0.0; FEATURE_DIM],
        action,
        utterance: vec!["w".into()],
        log_prob: -(ActionKind::COUNT as f64).ln(),
        user_utterance: vec![],
        user_attitude: Intent::Neutral,
        reward: RewardBreakdown { intra: 0.0, inter: 0.0, rep: 0.0, sim: 0.0, r_len: r_turn, gate_valid: true, r_turn },
    }
}

/// Terminal trajectory with the given per-turn rewards and session reward.
pub fn trajectory(r_turn: &[f64], session_reward: f64) -> Trajectory {
    Trajectory {
        persona_id: 0,
        seed: 0,
        turns: r_turn.iter().enumerate().map(|(i, &r)| turn(i, ActionKind::PitchFeature, r)).collect(),
        terminal: true,
        converted: session_reward > 0.0,
        session_reward,
    }
}

pub fn with_actions(actions: &[ActionKind], converted: bool) -> Trajectory {
    Trajectory {
        persona_id: 0,
        seed: 0,
        turns: actions.iter().enumerate().map(|(i, &a)| turn(i, a, 0.0)).collect(),
        terminal: true,
        converted,
        session_reward: 0.0,
    }
}
