//! Training loops for the dual-horizon method and its baselines.
//!
//! Each step collects a batch of sampled dialogues with the current policy
//! (frozen as `theta_old`), turns it into per-turn advantages according to
//! the selected [`Method`], and runs `epochs_per_batch` full-batch gradient
//! steps on the clipped PPO loss plus both value-head regressions.
//!
//! Rollouts fan out over rayon workers. Every episode owns a seed derived
//! from the run seed and its global index, and results are gathered in index
//! order, so the worker count never changes the output.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advantage::{
    discounted_returns, duca_advantages, episode_advantages, naive_advantages, naive_raw_advantages,
    normalize, summed_rewards, AdvantageError,
};
use crate::config::{ConfigError, ExperimentConfig};
use crate::env::{ActionKind, EnvError, EnvironmentSpec, Persona, SimRng, Simulator};
use crate::metrics::{compute_report, median, EvalReport, MetricsError};
use crate::policy::{PolicyError, PolicyModel, PpoSample};
use crate::rewards::{session_reward, turn_reward, RewardError, ScriptLibrary};
use crate::scalar::{mean, population_std, Scalar};
use crate::trajectory::{TurnRecord, Trajectory};

const EVAL_STREAM: u64 = 0x4556_414c_5f53_4545;
const INIT_STREAM: u64 = 0x494e_4954_5f53_4545;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Advantage(#[from] AdvantageError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("parameters became non-finite at step {0}")]
    Diverged(usize),
    #[error("unknown method {0:?} (expected duca, naive-sum, group-norm or single-turn)")]
    UnknownMethod(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoParams {
    pub epsilon_clip: f64,
    pub kl_coef: f64,
    pub learning_rate: f64,
    pub epochs_per_batch: usize,
    pub episodes_per_step: usize,
    pub max_steps: usize,
}

impl Default for PpoParams {
    fn default() -> Self {
        Self {
            epsilon_clip: 0.2,
            kl_coef: 0.05,
            learning_rate: 0.05,
            epochs_per_batch: 4,
            episodes_per_step: 64,
            max_steps: 70,
        }
    }
}

impl PpoParams {
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        if !(self.epsilon_clip > 0.0 && self.epsilon_clip < 1.0) {
            return Err(("epsilon_clip", format!("must lie in (0, 1), got {}", self.epsilon_clip)));
        }
        if !(self.kl_coef >= 0.0 && self.kl_coef.is_finite()) {
            return Err(("kl_coef", format!("must be >= 0, got {}", self.kl_coef)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(("learning_rate", format!("must be >= 0, got {}", self.learning_rate)));
        }
        if self.epochs_per_batch == 0 {
            return Err(("epochs_per_batch", "must be positive".into()));
        }
        if self.episodes_per_step == 0 {
            return Err(("episodes_per_step", "must be positive".into()));
        }
        Ok(())
    }
}

/// Advantage recipe used by a training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Dual-horizon GAE with horizon-independent normalization.
    Duca,
    /// One GAE over summed rewards, one normalization.
    NaiveSum,
    /// Critic-free: episode return standardized within persona groups.
    GroupNorm,
    /// Dialogues cut to one turn, summed reward, one normalization.
    SingleTurn,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Duca, Method::NaiveSum, Method::GroupNorm, Method::SingleTurn];

    pub fn name(self) -> &'static str {
        match self {
            Method::Duca => "duca",
            Method::NaiveSum => "naive-sum",
            Method::GroupNorm => "group-norm",
            Method::SingleTurn => "single-turn",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        match key.as_str() {
            "duca" => Ok(Method::Duca),
            "naivesum" | "naive" => Ok(Method::NaiveSum),
            "groupnorm" | "grpo" => Ok(Method::GroupNorm),
            "singleturn" => Ok(Method::SingleTurn),
            _ => Err(TrainError::UnknownMethod(s.to_owned())),
        }
    }
}

/// One row of the training curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStepRecord {
    pub step: usize,
    pub cvr: f64,
    pub compliance: f64,
    pub avg_turns: f64,
    /// Share of sampled turns that replay the previous utterance.
    pub repeat_script_rate: f64,
    pub mean_r_turn: f64,
    pub mean_a_total_abs: f64,
    pub policy_loss: f64,
    pub v_turn_loss: f64,
    pub v_session_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput<T> {
    pub records: Vec<TrainStepRecord>,
    pub model: PolicyModel<T>,
    /// Dialogues collected in the final step.
    pub last_batch: Vec<Trajectory>,
}

/// How actions are picked during a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    Sample,
    Greedy,
}

/// SplitMix64 finaliser.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of episode `index` in the stream rooted at `base`: the hashed base
/// xor the index.
pub fn episode_seed(base: u64, index: u64) -> u64 {
    splitmix64(base) ^ index
}

/// Runs `f` on a dedicated pool of `workers` threads (`0` = rayon default).
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    if workers == 0 {
        return f();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool")
        .install(f)
}

/// Simulator, scripts and config bound together.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub simulator: Simulator,
    pub scripts: ScriptLibrary,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let spec = match &config.persona_library_path {
            Some(p) => EnvironmentSpec::load(p)?,
            None => EnvironmentSpec::bundled(),
        };
        let scripts = match &config.script_library_path {
            Some(p) => ScriptLibrary::load(p)?,
            None => ScriptLibrary::bundled(),
        };
        let simulator = Simulator::new(spec, config.t_max);
        Ok(Self { config, simulator, scripts })
    }

    pub fn personas(&self) -> &[Persona] {
        &self.simulator.spec.personas
    }

    /// Personas are cycled through the library from a seed-dependent offset.
    pub fn persona_for(&self, stream: u64, index: u64) -> &Persona {
        let n = self.personas().len() as u64;
        &self.personas()[((splitmix64(stream) % n + index % n) % n) as usize]
    }

    pub fn initial_model<T: Scalar>(&self) -> PolicyModel<T> {
        let c = &self.config;
        let actions = ActionKind::COUNT;
        if c.hidden_layer {
            let mut rng = SimRng::seed_from_u64(splitmix64(c.seed ^ INIT_STREAM));
            PolicyModel::with_hidden(c.feature_dim, actions, &mut rng)
        } else {
            PolicyModel::linear(c.feature_dim, actions)
        }
    }

    pub fn rollout<T: Scalar>(
        &self,
        policy: &PolicyModel<T>,
        persona: &Persona,
        seed: u64,
        selection: Selection,
    ) -> Result<Trajectory, TrainError> {
        self.rollout_on(&self.simulator, policy, persona, seed, selection)
    }

    /// Plays one dialogue to the end. Policy sampling, utterance jitter and
    /// user reactions all draw from a single stream seeded with `seed`.
    pub fn rollout_on<T: Scalar>(
        &self,
        sim: &Simulator,
        policy: &PolicyModel<T>,
        persona: &Persona,
        seed: u64,
        selection: Selection,
    ) -> Result<Trajectory, TrainError> {
        let mut rng = SimRng::seed_from_u64(seed);
        let mut state = sim.reset(persona, seed);
        let mut said: Vec<Vec<String>> = Vec::new();
        let mut turns = Vec::new();
        let converted = loop {
            let x: Vec<T> = state.history_features.iter().map(|&v| T::lit(v)).collect();
            let (index, log_prob) = match selection {
                Selection::Sample => policy.sample_action(&x, &mut rng)?,
                Selection::Greedy => policy.greedy_action(&x)?,
            };
            let kind = ActionKind::from_index(index).expect("policy has one logit per action kind");
            let action = sim.render_action(kind, said.last(), &mut rng);
            let reward = turn_reward(&action.utterance, &said, &self.scripts, &self.config.turn_reward)?;
            let outcome = sim.step(&state, &action, persona, &mut rng)?;
            turns.push(TurnRecord {
                turn_index: state.turn_index,
                intent: state.user_intent,
                features: state.history_features.clone(),
                action: kind,
                utterance: action.utterance.clone(),
                log_prob: log_prob.to_f64_lossy(),
                user_utterance: outcome.user_utterance,
                user_attitude: outcome.user_attitude,
                reward,
            });
            said.push(action.utterance);
            if outcome.terminal {
                break outcome.converted;
            }
            state = outcome.next_state;
        };
        let mut trajectory = Trajectory {
            persona_id: persona.id,
            seed,
            turns,
            terminal: true,
            converted,
            session_reward: 0.0,
        };
        trajectory.session_reward = session_reward(&trajectory, &self.config.session_reward)?;
        Ok(trajectory)
    }

    /// The `episodes_per_step` sampled dialogues of training step `step`.
    pub fn collect_batch<T: Scalar>(
        &self,
        model: &PolicyModel<T>,
        method: Method,
        step: usize,
    ) -> Result<Vec<Trajectory>, TrainError> {
        let per_step = self.config.ppo.episodes_per_step as u64;
        let sim = match method {
            Method::SingleTurn => self.simulator.truncated(1),
            _ => self.simulator.clone(),
        };
        (0..per_step)
            .into_par_iter()
            .map(|i| {
                let index = step as u64 * per_step + i;
                let persona = self.persona_for(self.config.seed, index);
                let seed = episode_seed(self.config.seed, index);
                self.rollout_on(&sim, model, persona, seed, Selection::Sample)
            })
            .collect()
    }

    pub fn train<T: Scalar>(&self, method: Method) -> Result<TrainOutput<T>, TrainError> {
        let reference = self.initial_model::<T>();
        let mut model = reference.clone();
        let mut records = Vec::with_capacity(self.config.ppo.max_steps);
        let mut last_batch = Vec::new();
        for step in 0..self.config.ppo.max_steps {
            let batch = self.collect_batch(&model, method, step)?;
            records.push(self.update(&mut model, &reference, &batch, method, step)?);
            if !model.all_finite() {
                return Err(TrainError::Diverged(step));
            }
            last_batch = batch;
        }
        Ok(TrainOutput { records, model, last_batch })
    }

    fn update<T: Scalar>(
        &self,
        model: &mut PolicyModel<T>,
        reference: &PolicyModel<T>,
        batch: &[Trajectory],
        method: Method,
        step: usize,
    ) -> Result<TrainStepRecord, TrainError> {
        let c = &self.config;
        let advantages = method_advantages(method, batch, model, c)?;
        let (targets_turn, targets_session) = value_targets::<T>(method, batch, c);

        let mut samples = Vec::with_capacity(advantages.len());
        let mut ref_log_probs = Vec::with_capacity(advantages.len());
        for turn in batch.iter().flat_map(|t| &t.turns) {
            let features: Vec<T> = turn.features.iter().map(|&v| T::lit(v)).collect();
            ref_log_probs.push(reference.log_prob(&features, turn.action.index())?);
            samples.push(PpoSample {
                features,
                action: turn.action.index(),
                old_log_prob: T::lit(turn.log_prob),
            });
        }
        let features: Vec<Vec<T>> = samples.iter().map(|s| s.features.clone()).collect();

        let lr = T::lit(c.ppo.learning_rate);
        let (mut policy_loss, mut v_turn_loss, mut v_session_loss) = (0.0, 0.0, 0.0);
        for _ in 0..c.ppo.epochs_per_batch {
            let (loss, mut grads) = model.ppo_loss_and_grad(&samples, &advantages, &ref_log_probs, &c.ppo)?;
            let ((lt, ls), value_grads) = model.value_loss_and_grad(&features, &targets_turn, &targets_session)?;
            grads.add_assign(&value_grads);
            model.apply_gradients(&grads, lr);
            policy_loss += loss.loss.to_f64_lossy();
            v_turn_loss += lt.to_f64_lossy();
            v_session_loss += ls.to_f64_lossy();
        }
        let epochs = c.ppo.epochs_per_batch as f64;

        let report = compute_report(batch)?;
        let r_turn: Vec<f64> = batch.iter().flat_map(|t| t.turn_rewards()).collect();
        let abs_adv: Vec<f64> = advantages.iter().map(|a| a.abs().to_f64_lossy()).collect();
        Ok(TrainStepRecord {
            step,
            cvr: report.cvr,
            compliance: report.compliance,
            avg_turns: report.avg_turn,
            repeat_script_rate: report.repeat_script_rate,
            mean_r_turn: mean(&r_turn),
            mean_a_total_abs: mean(&abs_adv),
            policy_loss: policy_loss / epochs,
            v_turn_loss: v_turn_loss / epochs,
            v_session_loss: v_session_loss / epochs,
        })
    }

    /// Greedy rollouts over a held-out seed range, full horizon.
    pub fn evaluate<T: Scalar>(
        &self,
        model: &PolicyModel<T>,
        episodes: usize,
        seed: u64,
    ) -> Result<(EvalReport, Vec<Trajectory>), TrainError> {
        if episodes == 0 {
            return Ok((EvalReport::empty(), Vec::new()));
        }
        let stream = splitmix64(seed.wrapping_add(EVAL_STREAM));
        let trajectories: Vec<Trajectory> = (0..episodes as u64)
            .into_par_iter()
            .map(|i| {
                let persona = self.persona_for(stream, i);
                self.rollout(model, persona, episode_seed(stream, i), Selection::Greedy)
            })
            .collect::<Result<_, _>>()?;
        Ok((compute_report(&trajectories)?, trajectories))
    }

    /// Policy-gradient norms carried by the turn-level signal alone at the
    /// initial policy, under scalarized normalization versus
    /// horizon-independent normalization.
    ///
    /// The session stream is zeroed and gradients re-derived. The scalarized
    /// route keeps the scale it fitted on the full summed stream; the
    /// dual-horizon route standardizes the turn stream by its own spread.
    pub fn turn_gradient_probe<T: Scalar>(&self) -> Result<GradientProbe, TrainError> {
        let c = &self.config;
        let model = self.initial_model::<T>();
        let batch = self.collect_batch(&model, Method::Duca, 0)?;
        let eps = T::lit(c.hian.epsilon_norm);

        let mut a_turn = Vec::new();
        let mut a_session = Vec::new();
        for traj in &batch {
            let (t, s) = episode_advantages::<T, _>(traj, &model, &c.gae);
            a_turn.extend(t);
            a_session.extend(s);
        }
        let w_turn = T::lit(c.hian.w_turn);
        let duca: Vec<T> = normalize(&a_turn, eps).into_iter().map(|a| w_turn * a).collect();

        let full: Vec<T> = naive_raw_advantages(&batch, &model, &c.gae, summed_rewards)?;
        let turn_only: Vec<T> = naive_raw_advantages(&batch, &model, &c.gae, Trajectory::turn_rewards)?;
        let scale = population_std(&full) + eps;
        let mu = mean(&turn_only);
        let naive: Vec<T> = turn_only.iter().map(|&a| (a - mu) / scale).collect();

        let mut samples = Vec::new();
        for turn in batch.iter().flat_map(|t| &t.turns) {
            let features: Vec<T> = turn.features.iter().map(|&v| T::lit(v)).collect();
            samples.push(PpoSample { features, action: turn.action.index(), old_log_prob: T::lit(turn.log_prob) });
        }
        let refs: Vec<T> = samples.iter().map(|s| s.old_log_prob).collect();
        let no_kl = PpoParams { kl_coef: 0.0, ..c.ppo.clone() };
        let (_, g_duca) = model.ppo_loss_and_grad(&samples, &duca, &refs, &no_kl)?;
        let (_, g_naive) = model.ppo_loss_and_grad(&samples, &naive, &refs, &no_kl)?;
        let duca_norm = g_duca.policy_norm().to_f64_lossy();
        let naive_norm = g_naive.policy_norm().to_f64_lossy();
        Ok(GradientProbe {
            naive_norm,
            duca_norm,
            ratio: naive_norm / duca_norm,
            sigma_turn: population_std(&a_turn).to_f64_lossy(),
            sigma_session: population_std(&a_session).to_f64_lossy(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientProbe {
    pub naive_norm: f64,
    pub duca_norm: f64,
    /// `naive_norm / duca_norm`.
    pub ratio: f64,
    pub sigma_turn: f64,
    pub sigma_session: f64,
}

/// Convenience wrapper: validate, build the experiment, train.
pub fn train<T: Scalar>(config: &ExperimentConfig, method: Method) -> Result<TrainOutput<T>, TrainError> {
    Experiment::new(config.clone())?.train(method)
}

pub fn evaluate<T: Scalar>(
    model: &PolicyModel<T>,
    config: &ExperimentConfig,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport, TrainError> {
    Ok(Experiment::new(config.clone())?.evaluate(model, episodes, seed)?.0)
}

/// Per-turn `A_total` for `batch` under `method`, flattened in trajectory order.
pub fn method_advantages<T: Scalar>(
    method: Method,
    batch: &[Trajectory],
    model: &PolicyModel<T>,
    config: &ExperimentConfig,
) -> Result<Vec<T>, TrainError> {
    Ok(match method {
        Method::Duca => duca_advantages(batch, model, &config.gae, &config.hian)?.a_total,
        Method::NaiveSum | Method::SingleTurn => {
            naive_advantages(batch, model, &config.gae, config.hian.epsilon_norm)?
        }
        Method::GroupNorm => group_advantages(batch, config.hian.epsilon_norm)?,
    })
}

/// Undiscounted episode return standardized within its persona group and
/// broadcast to every turn of the episode.
pub fn group_advantages<T: Scalar>(batch: &[Trajectory], epsilon_norm: f64) -> Result<Vec<T>, AdvantageError> {
    if batch.is_empty() {
        return Err(AdvantageError::Empty);
    }
    let returns: Vec<T> = batch
        .iter()
        .map(|t| T::lit(t.turn_rewards().iter().sum::<f64>() + t.session_reward))
        .collect();
    let mut out = Vec::new();
    for (traj, &ret) in batch.iter().zip(&returns) {
        let group: Vec<T> = batch
            .iter()
            .zip(&returns)
            .filter(|(o, _)| o.persona_id == traj.persona_id)
            .map(|(_, &r)| r)
            .collect();
        let a = (ret - mean(&group)) / (population_std(&group) + T::lit(epsilon_norm));
        out.extend(std::iter::repeat_n(a, traj.len()));
    }
    Ok(out)
}

/// Regression targets `(turn head, session head)`. Scalarized methods fit
/// the session head to the summed stream, since that head is their critic.
fn value_targets<T: Scalar>(method: Method, batch: &[Trajectory], c: &ExperimentConfig) -> (Vec<T>, Vec<T>) {
    let lit = |xs: Vec<f64>| xs.into_iter().map(T::lit).collect::<Vec<T>>();
    let mut turn = Vec::new();
    let mut session = Vec::new();
    for traj in batch {
        turn.extend(discounted_returns(&lit(traj.turn_rewards()), T::lit(c.gae.gamma_turn)));
        let stream = match method {
            Method::NaiveSum | Method::SingleTurn => summed_rewards(traj),
            Method::Duca | Method::GroupNorm => traj.session_rewards(),
        };
        session.extend(discounted_returns(&lit(stream), T::lit(c.gae.gamma_session)));
    }
    (turn, session)
}

pub fn write_curves_csv<W: Write>(out: W, records: &[TrainStepRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record([
            "step", "cvr", "compliance", "avg_turns", "repeat_script_rate", "mean_r_turn", "mean_a_total_abs", "policy_loss",
            "v_turn_loss", "v_session_loss",
        ])?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One (method, seed) run of an ablation sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub method: Method,
    pub seed: u64,
    pub records: Vec<TrainStepRecord>,
    /// Held-out greedy evaluation of the final policy.
    pub eval: EvalReport,
}

/// Per-method medians over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: String,
    pub seeds: usize,
    pub cvr: f64,
    pub compliance: f64,
    pub avg_turn: f64,
    pub intra_r: f64,
    pub inter_r: f64,
    pub repeat_action_rate: f64,
    pub filler_rate: f64,
    pub repeat_script_rate: f64,
    pub positive_transfer_rate: f64,
    pub final_train_cvr: f64,
    pub final_train_repeat_script_rate: f64,
}

/// Trains every method on every seed (in parallel) and evaluates each final
/// policy on `eval_episodes` held-out dialogues.
pub fn ablate(
    base: &ExperimentConfig,
    methods: &[Method],
    seeds: &[u64],
    eval_episodes: usize,
) -> Result<Vec<AblationRun>, TrainError> {
    let jobs: Vec<(Method, u64)> = methods.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    jobs.into_par_iter()
        .map(|(method, seed)| {
            let config = ExperimentConfig { seed, ..base.clone() };
            let exp = Experiment::new(config)?;
            let out = exp.train::<f64>(method)?;
            let (eval, _) = exp.evaluate(&out.model, eval_episodes, seed)?;
            Ok(AblationRun { method, seed, records: out.records, eval })
        })
        .collect()
}

pub fn summarize(runs: &[AblationRun], methods: &[Method]) -> Vec<AblationRow> {
    methods
        .iter()
        .map(|&m| {
            let rs: Vec<&AblationRun> = runs.iter().filter(|r| r.method == m).collect();
            let med = |f: &dyn Fn(&AblationRun) -> f64| median(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            AblationRow {
                method: m.name().to_owned(),
                seeds: rs.len(),
                cvr: med(&|r| r.eval.cvr),
                compliance: med(&|r| r.eval.compliance),
                avg_turn: med(&|r| r.eval.avg_turn),
                intra_r: med(&|r| r.eval.intra_r),
                inter_r: med(&|r| r.eval.inter_r),
                repeat_action_rate: med(&|r| r.eval.repeat_action_rate),
                filler_rate: med(&|r| r.eval.filler_rate),
                repeat_script_rate: med(&|r| r.eval.repeat_script_rate),
                positive_transfer_rate: med(&|r| r.eval.positive_transfer_rate),
                final_train_cvr: med(&|r| r.records.last().map_or(f64::NAN, |x| x.cvr)),
                final_train_repeat_script_rate: med(&|r| r.records.last().map_or(f64::NAN, |x| x.repeat_script_rate)),
            }
        })
        .collect()
}

pub fn write_ablation_csv<W: Write>(out: W, rows: &[AblationRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per (method, seed) with the held-out evaluation metrics.
pub fn write_runs_csv<W: Write>(out: W, runs: &[AblationRun]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method", "seed", "episodes", "cvr", "compliance", "avg_turn", "intra_r", "inter_r",
        "repeat_action_rate", "filler_rate", "repeat_script_rate", "overpromise_rate", "positive_transfer_rate",
    ])?;
    for r in runs {
        let e = &r.eval;
        w.write_record([
            r.method.name().to_owned(),
            r.seed.to_string(),
            e.episodes.to_string(),
            e.cvr.to_string(),
            e.compliance.to_string(),
            e.avg_turn.to_string(),
            e.intra_r.to_string(),
            e.inter_r.to_string(),
            e.repeat_action_rate.to_string(),
            e.filler_rate.to_string(),
            e.repeat_script_rate.to_string(),
            e.overpromise_rate.to_string(),
            e.positive_transfer_rate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
