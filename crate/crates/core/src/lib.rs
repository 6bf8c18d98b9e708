//! Learned population-based black-box optimization.
//!
//! The crate is organized around one inner loop and one outer loop:
//!
//! * [`problems`] defines the task distribution: seeded instances of synthetic
//!   objective families on the normalized domain `[-1, 1]^d`.
//! * [`env`] runs one optimization episode of any [`Optimizer`] against one
//!   [`Task`] and records what the outer loop needs.
//! * [`policy`] is the learned optimizer: a coordinate-wise two-layer LSTM with
//!   a stochastic output layer fed by fitness ranks.
//! * [`meta_loss`] turns episode outcomes into the expected running time of
//!   the restart algorithm, the quantity minimized during meta-training.
//! * [`meta_ga`] is the seed-list genetic algorithm that trains the policy.
//! * [`baselines`] provides random search and CMA-ES behind the same interface.
//! * [`bench`] computes ECDF curves, ERT tables and optimizer comparisons.

pub mod baselines;
pub mod bench;
pub mod env;
pub mod error;
pub mod meta_ga;
pub mod meta_loss;
pub mod policy;
pub mod problems;
pub mod seed;

pub use baselines::{CmaEs, CmaState, RandomSearch};
pub use bench::{ComparisonReport, EcdfCurve, ErtRow, NamedOptimizer, TargetSet};
pub use env::{
    run_episode, ActionBatch, EpisodeConfig, Observation, Optimizer, OptimizerFactory, RolloutRecord,
};
pub use error::{Error, Result};
pub use meta_ga::{GaConfig, Genome, TrainHistory};
pub use meta_loss::ErtStats;
pub use policy::{LearnedOptimizer, PolicyConfig, PolicyParams, PolicyState};
pub use problems::{FunctionFamily, InstanceConfig, Split, Task, TaskSuite};

/// Version stamped into every JSON artifact written by this crate.
pub const FORMAT_VERSION: u32 = 1;
