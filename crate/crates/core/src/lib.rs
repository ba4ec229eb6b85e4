//! Dual-horizon credit assignment for multi-turn dialogue policies.
//!
//! Turn-level rewards (repetition, length, script similarity) and a terminal
//! session reward (conversion, compliance) get their own value heads, their
//! own GAE and their own batch normalization before they are fused into one
//! advantage for a clipped PPO update. A scripted persona simulator stands in
//! for the customer.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`.

pub mod advantage;
pub mod cli;
pub mod config;
pub mod env;
pub mod gradcheck;
pub mod metrics;
pub mod policy;
pub mod rewards;
pub mod scalar;
pub mod trainer;
pub mod trajectory;

pub use config::{ConfigError, ExperimentConfig};
pub use env::{ActionKind, EnvironmentSpec, Intent, Persona, Simulator};
pub use metrics::EvalReport;
pub use scalar::Scalar;
pub use trainer::{Experiment, Method, PpoParams, TrainError};
pub use trajectory::{TurnRecord, Trajectory};

pub type PolicyModel = policy::PolicyModel<f64>;
pub type PolicyModelF32 = policy::PolicyModel<f32>;
pub type AdvantageSet = advantage::AdvantageSet<f64>;
pub type RewardBreakdown = rewards::RewardBreakdown<f64>;
pub type GradientRecord = policy::GradientRecord<f64>;
