//! One validated experiment record, loaded from TOML.
//!
//! Every key is optional; missing keys take the defaults below. Unknown keys
//! are rejected.
//!
//! | key | default |
//! |-----|---------|
//! | `turn_reward.delta1` | 0.4 |
//! | `turn_reward.delta2` | 0.85 |
//! | `turn_reward.l_target` | 30 |
//! | `turn_reward.sigma_len` | 10.0 |
//! | `turn_reward.r_penalty` | -2.0 |
//! | `session_reward.alpha` / `beta` | 5.0 / 1.0 |
//! | `gae.gamma_turn` / `lambda_turn` | 0.99 / 0.95 |
//! | `gae.gamma_session` / `lambda_session` | 1.0 / 1.0 |
//! | `hian.w_turn` / `w_session` / `epsilon_norm` | 1.0 / 1.0 / 1e-8 |
//! | `ppo.epsilon_clip` / `kl_coef` / `learning_rate` | 0.2 / 0.05 / 0.05 |
//! | `ppo.epochs_per_batch` / `episodes_per_step` / `max_steps` | 4 / 64 / 70 |
//! | `t_max` | 12 |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::advantage::{GaeParams, HianParams};
use crate::env::FEATURE_DIM;
use crate::rewards::{SessionRewardParams, TurnRewardParams};
use crate::trainer::PpoParams;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown key: {0}")]
    UnknownKey(String),
    #[error("invalid value for {key}: {reason}")]
    Validation { key: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub t_max: usize,
    pub feature_dim: usize,
    /// Use the one-hidden-layer tanh policy instead of linear-softmax.
    pub hidden_layer: bool,
    /// Persona library and transition table; the bundled file when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub persona_library_path: Option<PathBuf>,
    /// Script library, one script per line; the bundled file when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub script_library_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub turn_reward: TurnRewardParams,
    pub session_reward: SessionRewardParams,
    pub gae: GaeParams,
    pub hian: HianParams,
    pub ppo: PpoParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            t_max: 12,
            feature_dim: FEATURE_DIM,
            hidden_layer: false,
            persona_library_path: None,
            script_library_path: None,
            output_dir: PathBuf::from("runs"),
            turn_reward: TurnRewardParams::default(),
            session_reward: SessionRewardParams::default(),
            gae: GaeParams::default(),
            hian: HianParams::default(),
            ppo: PpoParams::default(),
        }
    }
}

fn classify(e: toml::de::Error) -> ConfigError {
    let msg = e.message().to_owned();
    if msg.contains("unknown field") {
        ConfigError::UnknownKey(msg)
    } else {
        ConfigError::Parse(e.to_string())
    }
}

fn invalid(prefix: &str, (key, reason): (&str, String)) -> ConfigError {
    let key = if prefix.is_empty() { key.to_owned() } else { format!("{prefix}.{key}") };
    ConfigError::Validation { key, reason }
}

impl ExperimentConfig {
    /// Parses and validates. Relative library paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config: Self = toml::from_str(text).map_err(classify)?;
        if let Some(dir) = base_dir {
            for p in [&mut config.persona_library_path, &mut config.script_library_path].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        config.output_dir = expand_env(&config.output_dir);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text, path.parent())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let top = |key: &str, reason: String| ConfigError::Validation { key: key.into(), reason };
        if self.schema_version != SCHEMA_VERSION {
            return Err(top("schema_version", format!("expected {SCHEMA_VERSION}, got {}", self.schema_version)));
        }
        if self.t_max == 0 {
            return Err(top("t_max", "must be positive".into()));
        }
        if self.feature_dim != FEATURE_DIM {
            return Err(top("feature_dim", format!("the simulator emits {FEATURE_DIM} features, got {}", self.feature_dim)));
        }
        if self.seed > i64::MAX as u64 {
            return Err(top("seed", "must fit in a signed 64-bit integer".into()));
        }
        self.turn_reward.check().map_err(|e| invalid("turn_reward", e))?;
        self.session_reward.check().map_err(|e| invalid("session_reward", e))?;
        self.gae.check().map_err(|e| invalid("gae", e))?;
        self.hian.check().map_err(|e| invalid("hian", e))?;
        self.ppo.check().map_err(|e| invalid("ppo", e))?;
        for (key, p) in [
            ("persona_library_path", &self.persona_library_path),
            ("script_library_path", &self.script_library_path),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(top(key, format!("{} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    /// Applies `key=value` where `key` is a dotted path such as
    /// `ppo.learning_rate`, then re-validates.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Parse(format!("override {assignment:?} is not key=value")))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value = parse_scalar(raw);

        let mut table: toml::Table = toml::from_str(&self.to_toml()).expect("config round-trips");
        let path: Vec<&str> = key.split('.').collect();
        let optional_paths = ["persona_library_path", "script_library_path"];
        let (last, parents) = path.split_last().expect("split yields one item");
        let mut cursor = &mut table;
        for part in parents {
            cursor = match cursor.get_mut(*part) {
                Some(toml::Value::Table(t)) => t,
                _ => return Err(ConfigError::UnknownKey(key.to_owned())),
            };
        }
        match cursor.get(*last) {
            Some(toml::Value::Table(_)) => return Err(ConfigError::UnknownKey(key.to_owned())),
            Some(_) => {}
            None if parents.is_empty() && optional_paths.contains(last) => {}
            None => return Err(ConfigError::UnknownKey(key.to_owned())),
        }
        cursor.insert((*last).to_owned(), value);
        let text = toml::to_string(&table).expect("table serializes");
        *self = Self::parse(&text, None).map_err(|e| match e {
            ConfigError::Parse(m) => ConfigError::Validation { key: key.to_owned(), reason: m },
            other => other,
        })?;
        Ok(())
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Probe {
        v: toml::Value,
    }
    match toml::from_str::<Probe>(&format!("v = {raw}")) {
        Ok(p) => p.v,
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

/// Expands `$VAR` and `${VAR}`; unset variables expand to nothing.
fn expand_env(path: &Path) -> PathBuf {
    let s = path.to_string_lossy();
    if !s.contains('$') {
        return path.to_path_buf();
    }
    let mut out = String::new();
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        if c != '$' {
            out.push(c);
            continue;
        }
        let braced = chars.peek() == Some(&'{');
        if braced {
            chars.next();
        }
        let mut name = String::new();
        while let Some(&n) = chars.peek() {
            if braced && n == '}' {
                chars.next();
                break;
            }
            if !braced && !(n.is_ascii_alphanumeric() || n == '_') {
                break;
            }
            name.push(n);
            chars.next();
        }
        out.push_str(&std::env::var(&name).unwrap_or_default());
    }
    PathBuf::from(out)
}
