mod common;

use common::with_actions;
use duca::rewards::{
    fuse_gate, length_reward, script_similarity, session_reward, ScriptLibrary, SessionRewardParams,
    TurnRewardParams,
};
use duca::ActionKind::{self, AskClose, OverPromise, PitchFeature};
use proptest::prelude::*;

#[test]
fn session_examples() {
    let p = SessionRewardParams::default();
    assert_eq!(session_reward(&with_actions(&[PitchFeature, AskClose], true), &p).unwrap(), 5.0);
    assert_eq!(session_reward(&with_actions(&[OverPromise, OverPromise], false), &p).unwrap(), -2.0);
    assert_eq!(session_reward(&with_actions(&[OverPromise, AskClose], true), &p).unwrap(), 4.0);
    let mut open = with_actions(&[PitchFeature], false);
    open.terminal = false;
    assert!(session_reward(&open, &p).is_err());
}

#[test]
fn gate_and_length_examples() {
    let p = TurnRewardParams::default();
    let b = fuse_gate(0.5, 0.5, 0.9, 1.0, &p);
    assert!(!b.gate_valid);
    assert_eq!(b.r_turn, -2.0);
    assert_eq!(length_reward::<f64>(30, &p), 1.0);
}

fn tokens() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]).prop_map(String::from), 1..12)
}

proptest! {
    #[test]
    fn gate_dichotomy(intra in 0.0f64..1.0, inter in 0.0f64..1.0, sim in 0.0f64..1.0, len in 0usize..80) {
        let p = TurnRewardParams::default();
        let r_len = length_reward::<f64>(len, &p);
        let b = fuse_gate(intra, inter, sim, r_len, &p);
        prop_assert_eq!(b.rep, intra.max(inter));
        prop_assert_eq!(b.r_turn, if b.gate_valid { r_len } else { p.r_penalty });
    }

    #[test]
    fn length_peak_is_unique(a in 0usize..100, b in 0usize..100) {
        let p = TurnRewardParams::default();
        let target = p.l_target as i64;
        let (da, db) = ((a as i64 - target).abs(), (b as i64 - target).abs());
        let (ra, rb) = (length_reward::<f64>(a, &p), length_reward::<f64>(b, &p));
        prop_assert!(ra <= 1.0);
        prop_assert_eq!(ra == 1.0, da == 0);
        if da < db {
            prop_assert!(ra > rb);
        } else if da == db {
            prop_assert_eq!(ra, rb);
        }
    }

    #[test]
    fn similarity_is_bounded_and_exact_on_library(u in tokens(), lib in prop::collection::vec(tokens(), 1..5), pick in any::<prop::sample::Index>()) {
        let s: f64 = script_similarity(&u, &lib).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
        let member = lib[pick.index(lib.len())].clone();
        let one: f64 = script_similarity(&member, &lib).unwrap();
        prop_assert!((one - 1.0).abs() < 1e-12);
        let lib = ScriptLibrary::new(lib).unwrap();
        prop_assert_eq!(lib.similarity::<f64, _>(&u).unwrap(), s);
    }

    #[test]
    fn session_reward_bounds(actions in prop::collection::vec(0usize..ActionKind::COUNT, 1..=12), converted in any::<bool>()) {
        let kinds: Vec<ActionKind> = actions.iter().map(|&i| ActionKind::from_index(i).unwrap()).collect();
        let p = SessionRewardParams::default();
        let r = session_reward(&with_actions(&kinds, converted), &p).unwrap();
        prop_assert!(r >= -p.beta * 12.0 && r <= p.alpha);
    }
}
