use duca::advantage::duca_advantages;
use duca::metrics::compute_report;
use duca::trainer::{with_workers, write_curves_csv};
use duca::{Experiment, ExperimentConfig, Method, PolicyModel, PpoParams};

fn small(seed: u64, steps: usize) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        ppo: PpoParams { episodes_per_step: 16, max_steps: steps, ..Default::default() },
        ..Default::default()
    }
}

fn curves(exp: &Experiment, method: Method) -> Vec<u8> {
    let out = exp.train::<f64>(method).unwrap();
    let mut buf = Vec::new();
    write_curves_csv(&mut buf, &out.records).unwrap();
    buf
}

#[test]
fn zero_steps_leave_the_model_alone() {
    let exp = Experiment::new(small(1, 0)).unwrap();
    let out = exp.train::<f64>(Method::Duca).unwrap();
    assert!(out.records.is_empty());
    assert!(out.last_batch.is_empty());
    assert_eq!(out.model, exp.initial_model::<f64>());
}

#[test]
fn zero_learning_rate_is_a_no_op() {
    let mut cfg = small(2, 3);
    cfg.ppo.learning_rate = 0.0;
    cfg.hidden_layer = true;
    let exp = Experiment::new(cfg).unwrap();
    let out = exp.train::<f64>(Method::Duca).unwrap();
    assert_eq!(out.records.len(), 3);
    assert_eq!(out.model, exp.initial_model::<f64>());
}

#[test]
fn results_do_not_depend_on_worker_count() {
    for method in Method::ALL {
        let exp = Experiment::new(small(3, 3)).unwrap();
        let one = with_workers(1, || curves(&exp, method));
        let four = with_workers(4, || curves(&exp, method));
        assert_eq!(one, four, "{method}");
        assert_eq!(one, curves(&exp, method));
    }
}

#[test]
fn terminal_credit_is_uniform_at_step_zero() {
    let exp = Experiment::new(small(4, 1)).unwrap();
    let model = exp.initial_model::<f64>();
    let batch = exp.collect_batch(&model, Method::Duca, 0).unwrap();
    let c = &exp.config;
    let set = duca_advantages::<f64, _>(&batch, &model, &c.gae, &c.hian).unwrap();
    let mut k = 0;
    for traj in &batch {
        let slice = &set.a_session[k..k + traj.len()];
        assert!(slice.iter().all(|&a| a == traj.session_reward), "{slice:?}");
        k += traj.len();
    }
}

#[test]
fn single_turn_batches_have_one_turn() {
    let exp = Experiment::new(small(5, 1)).unwrap();
    let batch = exp.collect_batch(&exp.initial_model::<f64>(), Method::SingleTurn, 0).unwrap();
    assert_eq!(batch.len(), 16);
    assert!(batch.iter().all(|t| t.len() == 1 && t.terminal));
}

#[test]
fn evaluation_is_deterministic_and_handles_zero_episodes() {
    let exp = Experiment::new(small(6, 2)).unwrap();
    let out = exp.train::<f64>(Method::Duca).unwrap();
    let (empty, trajs) = exp.evaluate(&out.model, 0, 9).unwrap();
    assert!(empty.is_empty() && trajs.is_empty());
    let a = exp.evaluate(&out.model, 40, 9).unwrap();
    let b = exp.evaluate(&out.model, 40, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.0.episodes, 40);
}

#[test]
fn checkpoint_resume_is_exact() {
    let exp = Experiment::new(small(7, 2)).unwrap();
    let out = exp.train::<f64>(Method::NaiveSum).unwrap();
    let mut buf = Vec::new();
    out.model.save(&mut buf).unwrap();
    let loaded = PolicyModel::load(&buf[..]).unwrap();
    assert_eq!(loaded, out.model);
    assert_eq!(exp.evaluate(&loaded, 24, 1).unwrap(), exp.evaluate(&out.model, 24, 1).unwrap());
    assert_eq!(
        exp.collect_batch(&loaded, Method::Duca, 5).unwrap(),
        exp.collect_batch(&out.model, Method::Duca, 5).unwrap()
    );
}

#[test]
fn recorded_cvr_matches_the_report() {
    let exp = Experiment::new(small(8, 3)).unwrap();
    for method in [Method::Duca, Method::GroupNorm] {
        let out = exp.train::<f64>(method).unwrap();
        let report = compute_report(&out.last_batch).unwrap();
        assert!((out.records.last().unwrap().cvr - report.cvr).abs() < 1e-12);
    }
}

#[test]
fn single_precision_runs() {
    let exp = Experiment::new(small(9, 2)).unwrap();
    let out = exp.train::<f32>(Method::Duca).unwrap();
    assert_eq!(out.records.len(), 2);
    assert!(out.model.all_finite());
}
