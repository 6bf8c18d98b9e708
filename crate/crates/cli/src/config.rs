//! Run configuration: a TOML file overlaid by command-line flags.

use std::path::{Path, PathBuf};

use lpbo_core::baselines::cma_default_lambda;
use lpbo_core::bench::TargetSet;
use lpbo_core::env::EpisodeConfig;
use lpbo_core::meta_ga::GaConfig;
use lpbo_core::problems::{make_suite, FunctionFamily, TaskSuite};
use lpbo_core::PolicyConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSpec {
    pub families: Vec<FunctionFamily>,
    pub dimension: usize,
    pub instances: usize,
    pub split: [f64; 3],
    /// Defaults to the master seed.
    pub seed: Option<u64>,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        SuiteSpec {
            families: vec![FunctionFamily::LinearSlope],
            dimension: 2,
            instances: 1000,
            split: [0.1, 0.1, 0.8],
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSpec {
    pub lambda: usize,
    /// Defaults to `100 * dimension`.
    pub fe_max: Option<usize>,
    pub tolerance: f64,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        EpisodeSpec {
            lambda: 10,
            fe_max: None,
            tolerance: EpisodeConfig::DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetChoice {
    /// Five per decade from 1e2 to the tolerance's default 1e-3.
    Standard,
    /// Only the success tolerance.
    Tolerance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmaLambda {
    /// `4 + floor(3 ln d)`
    Default,
    /// The learned policy's population size.
    Policy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSpec {
    pub targets: TargetChoice,
    pub cma_lambda: CmaLambda,
    pub runs_per_task: Option<usize>,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            targets: TargetChoice::Standard,
            cma_lambda: CmaLambda::Default,
            runs_per_task: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub master_seed: u64,
    pub runs_per_task: usize,
    pub checkpoint_every: usize,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub suite: SuiteSpec,
    pub policy: PolicyConfig,
    pub ga: GaConfig,
    pub episode: EpisodeSpec,
    pub bench: BenchSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            master_seed: 0,
            runs_per_task: 5,
            checkpoint_every: 10,
            out: None,
            workers: None,
            suite: SuiteSpec::default(),
            policy: PolicyConfig::default(),
            ga: GaConfig::default(),
            episode: EpisodeSpec::default(),
            bench: BenchSpec::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path`; `None` yields the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config file {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config file {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: lpbo_core::Error| CliError::Config(e.to_string());
        if self.suite.families.is_empty() {
            return Err(CliError::Config("suite.families: list is empty".into()));
        }
        if self.suite.dimension == 0 {
            return Err(CliError::Config("suite.dimension: must be positive".into()));
        }
        if self.suite.instances < 3 {
            return Err(CliError::Config(
                "suite.instances: at least 3 are required".into(),
            ));
        }
        lpbo_core::problems::split_sizes(self.suite.instances, self.suite.split)
            .map_err(|e| CliError::Config(format!("suite.split: {e}")))?;
        if self.runs_per_task == 0 {
            return Err(CliError::Config("runs_per_task: must be positive".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(CliError::Config("checkpoint_every: must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(CliError::Config("workers: must be positive".into()));
        }
        self.policy
            .validate()
            .map_err(|e| CliError::Config(format!("policy: {e}")))?;
        self.ga
            .validate()
            .map_err(|e| CliError::Config(format!("ga: {e}")))?;
        self.episode_config()
            .validate()
            .map_err(|e| CliError::Config(format!("episode: {e}")))?;
        self.targets().map_err(cfg)?;
        Ok(())
    }

    pub fn suite_seed(&self) -> u64 {
        self.suite.seed.unwrap_or(self.master_seed)
    }

    pub fn make_suite(&self) -> Result<TaskSuite, CliError> {
        Ok(make_suite(
            &self.suite.families,
            self.suite.dimension,
            self.suite.instances,
            self.suite.split,
            self.suite_seed(),
        )?)
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            lambda: self.episode.lambda,
            fe_max: self.episode.fe_max.unwrap_or(100 * self.suite.dimension),
            tolerance: self.episode.tolerance,
            episode_seed: 0,
        }
    }

    pub fn bench_runs(&self) -> usize {
        self.bench.runs_per_task.unwrap_or(self.runs_per_task)
    }

    pub fn targets(&self) -> Result<TargetSet, lpbo_core::Error> {
        match self.bench.targets {
            TargetChoice::Tolerance => TargetSet::single(self.episode.tolerance),
            TargetChoice::Standard => {
                let mut p: Vec<f64> = TargetSet::standard()
                    .precisions()
                    .iter()
                    .copied()
                    .filter(|t| *t > self.episode.tolerance)
                    .collect();
                p.push(self.episode.tolerance);
                TargetSet::new(p)
            }
        }
    }

    pub fn cma_lambda(&self) -> usize {
        match self.bench.cma_lambda {
            CmaLambda::Default => cma_default_lambda(self.suite.dimension),
            CmaLambda::Policy => self.episode.lambda,
        }
    }

    /// SHA-256 of the configuration with machine-local fields (`out`, `workers`) cleared.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out = None;
        canonical.workers = None;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
