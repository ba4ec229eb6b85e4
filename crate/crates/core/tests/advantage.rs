mod common;

use common::trajectory;
use duca::advantage::{
    duca_advantages, gae, naive_advantages, naive_raw_advantages, normalize, summed_rewards, GaeParams, HianParams,
    ZeroHeads,
};
use duca::scalar::{mean, population_std};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-8;

/// `A_t = sum_l (gamma lambda)^l delta_{t+l}` evaluated term by term.
fn gae_series(r: &[f64], v: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    let value = |t: usize| if t < n { v[t] } else { 0.0 };
    let delta: Vec<f64> = (0..n).map(|t| r[t] + gamma * value(t + 1) - v[t]).collect();
    (0..n)
        .map(|t| (t..n).map(|k| (gamma * lambda).powi((k - t) as i32) * delta[k]).sum())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn normalized_batches_are_standardized(xs in prop::collection::vec(-1e3f64..1e3, 2..512)) {
        let sigma = population_std(&xs);
        prop_assume!(sigma > 1e-6);
        let z = normalize(&xs, EPS);
        prop_assert!(mean(&z).abs() < 1e-9);
        prop_assert!((population_std(&z) - sigma / (sigma + EPS)).abs() < 1e-9);
    }

    #[test]
    fn recursion_matches_series(
        rv in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..=6),
        gamma in 0.0f64..=1.0,
        lambda in 0.0f64..=1.0,
    ) {
        let (r, v): (Vec<f64>, Vec<f64>) = rv.into_iter().unzip();
        let a = gae(&r, &v, gamma, lambda).unwrap();
        for (x, y) in a.iter().zip(gae_series(&r, &v, gamma, lambda)) {
            prop_assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn terminal_reward_reaches_every_turn(
        eps in prop::collection::vec((prop::collection::vec(-2.0f64..1.0, 1..12), -12.0f64..5.0), 1..8)
    ) {
        let batch: Vec<_> = eps.iter().map(|(r, s)| trajectory(r, *s)).collect();
        let set = duca_advantages::<f64, _>(&batch, &ZeroHeads, &GaeParams::default(), &HianParams::default()).unwrap();
        let mut k = 0;
        for traj in &batch {
            for _ in &traj.turns {
                prop_assert_eq!(set.a_session[k], traj.session_reward);
                k += 1;
            }
        }
    }

    #[test]
    fn session_scale_keeps_ranking(
        eps in prop::collection::vec((prop::collection::vec(-2.0f64..1.0, 1..8), -3.0f64..5.0), 2..10),
        scale in 0.1f64..100.0,
    ) {
        let batch: Vec<_> = eps.iter().map(|(r, s)| trajectory(r, *s)).collect();
        let scaled: Vec<_> = eps.iter().map(|(r, s)| trajectory(r, *s * scale)).collect();
        let params = (GaeParams::default(), HianParams::default());
        let a = duca_advantages::<f64, _>(&batch, &ZeroHeads, &params.0, &params.1).unwrap();
        let b = duca_advantages::<f64, _>(&scaled, &ZeroHeads, &params.0, &params.1).unwrap();
        // Normalized values differ only through eps / sigma.
        let sigma = population_std(&a.a_session).min(population_std(&b.a_session));
        prop_assume!(sigma > 1e-6);
        let tol = 4.0 * EPS / sigma;
        for (x, y) in a.a_session_hat.iter().zip(&b.a_session_hat) {
            prop_assert!((x - y).abs() <= tol * (1.0 + x.abs()), "{x} {y} {tol}");
        }
        let n = a.a_total.len();
        for i in 0..n {
            for j in 0..n {
                if a.a_total[i] - a.a_total[j] > 2.0 * tol * (1.0 + a.a_total[i].abs().max(a.a_total[j].abs())) {
                    prop_assert!(b.a_total[i] > b.a_total[j]);
                }
            }
        }
    }
}

#[test]
fn naive_suppresses_a_weak_dense_stream() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let batch: Vec<_> = (0..2000)
        .map(|_| {
            let r = [if rng.gen::<bool>() { 0.1 } else { -0.1 }];
            trajectory(&r, if rng.gen::<bool>() { 5.0 } else { -5.0 })
        })
        .collect();
    let gae_params = GaeParams::default();
    let set = duca_advantages::<f64, _>(&batch, &ZeroHeads, &gae_params, &HianParams::default()).unwrap();
    let ratio = population_std(&set.a_session) / population_std(&set.a_turn);
    assert!((ratio - 50.0).abs() < 5.0, "ratio {ratio}");

    // Turn-signal scale: spread of the turn stream after each route's normalization.
    let full: Vec<f64> = naive_raw_advantages(&batch, &ZeroHeads, &gae_params, summed_rewards).unwrap();
    let turn_raw: Vec<f64> = naive_raw_advantages(&batch, &ZeroHeads, &gae_params, |t| t.turn_rewards()).unwrap();
    let naive_scale = population_std(&turn_raw) / (population_std(&full) + EPS);
    let duca_scale = population_std(&set.a_turn_hat);
    assert!(naive_scale / duca_scale <= 0.05, "{}", naive_scale / duca_scale);

    let naive: Vec<f64> = naive_advantages(&batch, &ZeroHeads, &gae_params, EPS).unwrap();
    assert!((population_std(&naive) - 1.0).abs() < 1e-6);
}

#[test]
fn two_episode_examples() {
    let batch = vec![trajectory(&[0.0], 0.0), trajectory(&[0.0], 4.0)];
    let set = duca_advantages::<f64, _>(&batch, &ZeroHeads, &GaeParams::default(), &HianParams::default()).unwrap();
    for (x, y) in set.a_total.iter().zip([-1.0, 1.0]) {
        assert!((x - y).abs() < 1e-8);
    }
    let batch = vec![trajectory(&[1.0], 0.0), trajectory(&[0.0], 4.0)];
    let naive: Vec<f64> = naive_advantages(&batch, &ZeroHeads, &GaeParams::default(), EPS).unwrap();
    for (x, y) in naive.iter().zip([-1.0, 1.0]) {
        assert!((x - y).abs() < 1e-8);
    }
    let set = duca_advantages::<f64, _>(&batch, &ZeroHeads, &GaeParams::default(), &HianParams::default()).unwrap();
    for (x, y) in set.a_total.iter().zip([0.0, 0.0]) {
        assert!((x - y).abs() < 1e-7, "{:?}", set.a_total);
    }
}
