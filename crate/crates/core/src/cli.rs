//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 invalid
//! configuration or arguments.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, ExperimentConfig};
use crate::gradcheck;
use crate::metrics::compute_report;
use crate::policy::PolicyModel;
use crate::trainer::{self, Experiment, Method, TrainError};
use crate::trajectory::{read_jsonl, write_jsonl};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INVALID: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "duca", version, about = "Dual-horizon credit assignment for dialogue policies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one method and write its curves CSV and checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint greedily on held-out dialogues
    Eval(EvalArgs),
    /// Finite-difference check of the hand-written gradients
    Gradcheck(GradcheckArgs),
    /// Train every method over a seed list and write a comparison table
    Ablate(AblateArgs),
    /// Recompute metrics from a JSONL dialogue dump
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment config (TOML); defaults apply when omitted
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. --set ppo.learning_rate=0.1 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (overrides output_dir from the config)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Rollout worker threads (0 = all cores); results do not depend on it
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// duca, naive-sum, group-norm or single-turn
    #[arg(long, short = 'm', default_value = "duca")]
    pub method: String,
    /// Seeds to train (comma separated); the config seed when omitted
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Also write the final batch of training dialogues as JSONL
    #[arg(long)]
    pub dump: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Policy checkpoint written by `train`
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Number of held-out dialogues
    #[arg(long, default_value_t = 600)]
    pub episodes: usize,
    /// Seed of the held-out stream; the config seed when omitted
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the evaluated dialogues as JSONL
    #[arg(long)]
    pub dump: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of random models
    #[arg(long, default_value_t = 100)]
    pub models: usize,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    /// Seeds (comma separated)
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub seeds: Vec<u64>,
    /// Methods to compare (comma separated)
    #[arg(long, value_delimiter = ',', default_value = "duca,naive-sum,group-norm,single-turn")]
    pub methods: Vec<String>,
    /// Held-out evaluation dialogues per run
    #[arg(long, default_value_t = 600)]
    pub episodes: usize,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// JSONL dump written by `train --dump` or `eval --dump`
    #[arg(long)]
    pub dump: PathBuf,
    /// Write the report here instead of stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Invalid(e.into())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::UnknownMethod(_) => Failure::Invalid(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            EXIT_INVALID
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig, Failure> {
    let mut config = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for o in &args.overrides {
        config.apply_override(o)?;
    }
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let base = load_config(&a.common)?;
    let method: Method = a.method.parse()?;
    let seeds = if a.seeds.is_empty() { vec![base.seed] } else { a.seeds.clone() };
    for seed in seeds {
        let config = ExperimentConfig { seed, ..base.clone() };
        let exp = Experiment::new(config)?;
        let out = trainer::with_workers(a.common.workers, || exp.train::<f64>(method))?;
        let dir = base.output_dir.join(format!("{method}_seed{seed}"));
        let mut w = create(&dir.join("curves.csv"))?;
        trainer::write_curves_csv(&mut w, &out.records).context("writing curves")?;
        w.flush().context("writing curves")?;
        let mut w = create(&dir.join("policy.json"))?;
        out.model.save(&mut w).map_err(anyhow::Error::from)?;
        w.flush().context("writing checkpoint")?;
        if a.dump {
            let mut w = create(&dir.join("last_batch.jsonl"))?;
            write_jsonl(&mut w, &out.last_batch).context("writing dump")?;
            w.flush().context("writing dump")?;
        }
        if let Some(last) = out.records.last() {
            println!(
                "{method} seed {seed}: {} steps, final batch cvr {:.4} compliance {:.2} avg_turns {:.2} -> {}",
                out.records.len(),
                last.cvr,
                last.compliance,
                last.avg_turns,
                dir.display()
            );
        } else {
            println!("{method} seed {seed}: 0 steps -> {}", dir.display());
        }
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let config = load_config(&a.common)?;
    let file = File::open(&a.checkpoint).with_context(|| format!("opening {}", a.checkpoint.display()))?;
    let model = PolicyModel::<f64>::load(BufReader::new(file)).map_err(anyhow::Error::from)?;
    if model.feature_dim != config.feature_dim {
        return Err(Failure::Invalid(anyhow::anyhow!(
            "checkpoint expects {} features, config has {}",
            model.feature_dim,
            config.feature_dim
        )));
    }
    let seed = a.seed.unwrap_or(config.seed);
    let exp = Experiment::new(config.clone())?;
    let (report, dialogues) = trainer::with_workers(a.common.workers, || exp.evaluate(&model, a.episodes, seed))?;
    let dir = &config.output_dir;
    write_json(&dir.join("eval_report.json"), &report)?;
    if a.dump {
        let mut w = create(&dir.join("eval.jsonl"))?;
        write_jsonl(&mut w, &dialogues).context("writing dump")?;
        w.flush().context("writing dump")?;
    }
    println!("{}", serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?);
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    let worst = gradcheck::run_suite(a.seed, a.models).map_err(anyhow::Error::from)?;
    let mut overall: f64 = 0.0;
    for (block, err) in &worst {
        println!("{block:<24} max rel err {err:.3e}");
        overall = overall.max(*err);
    }
    println!("overall max rel err {overall:.3e} over {} models", a.models);
    if overall >= gradcheck::TOLERANCE {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "gradient check failed: {overall:.3e} >= {:.0e}",
            gradcheck::TOLERANCE
        )));
    }
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<(), Failure> {
    let config = load_config(&a.common)?;
    let methods = a.methods.iter().map(|m| m.parse()).collect::<Result<Vec<Method>, _>>()?;
    config.validate()?;
    let runs = trainer::with_workers(a.common.workers, || trainer::ablate(&config, &methods, &a.seeds, a.episodes))?;
    let dir = &config.output_dir;
    for run in &runs {
        let mut w = create(&dir.join("curves").join(format!("{}_seed{}.csv", run.method, run.seed)))?;
        trainer::write_curves_csv(&mut w, &run.records).context("writing curves")?;
        w.flush().context("writing curves")?;
    }
    let mut w = create(&dir.join("runs.csv"))?;
    trainer::write_runs_csv(&mut w, &runs).context("writing runs")?;
    w.flush().context("writing runs")?;

    let rows = trainer::summarize(&runs, &methods);
    let mut w = create(&dir.join("ablation.csv"))?;
    trainer::write_ablation_csv(&mut w, &rows).context("writing table")?;
    w.flush().context("writing table")?;

    println!("{:<12} {:>8} {:>11} {:>9} {:>8}", "method", "cvr", "compliance", "avg_turn", "repeat");
    for r in &rows {
        println!(
            "{:<12} {:>8.4} {:>11.2} {:>9.2} {:>8.4}",
            r.method, r.cvr, r.compliance, r.avg_turn, r.repeat_action_rate
        );
    }
    println!("-> {}", dir.display());
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<(), Failure> {
    let file = File::open(&a.dump).with_context(|| format!("opening {}", a.dump.display()))?;
    let dialogues = read_jsonl(BufReader::new(file))?;
    let report = compute_report(&dialogues).map_err(|e| Failure::Invalid(e.into()))?;
    match &a.out {
        Some(p) => write_json(p, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?),
    }
    Ok(())
}
