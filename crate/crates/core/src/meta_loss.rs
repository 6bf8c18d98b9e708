//! Expected running time of the restart algorithm and the meta-objective.
//!
//! Restarting a stochastic optimizer until its first success costs
//! `N * fe_max + FE_succ` evaluations, with `N` the number of failed runs. `N`
//! is geometric (negative binomial with `r = 1`), so
//!
//! ```text
//! E[FE] = (1 - p_s) / p_s * fe_max + E[FE_succ]
//! ```
//!
//! Both unknowns are replaced by their empirical estimates over a batch of runs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{run_episode, EpisodeConfig, OptimizerFactory, RolloutRecord};
use crate::error::{invalid, Result};
use crate::problems::Task;
use crate::seed::{self, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErtStats {
    pub n_runs: usize,
    pub n_success: usize,
    pub p_hat: f64,
    pub e_fe_succ_hat: Option<f64>,
    pub fe_max: usize,
    pub expected_fe: f64,
}

/// Mean number of failed runs before the first success.
pub fn expected_restarts(p_s: f64) -> Result<f64> {
    if !(p_s > 0.0 && p_s <= 1.0) {
        return Err(invalid(format!("success probability {p_s} outside (0, 1]")));
    }
    Ok((1.0 - p_s) / p_s)
}

pub fn expected_fe(p_hat: f64, e_fe_succ_hat: f64, fe_max: usize) -> Result<f64> {
    if e_fe_succ_hat.is_nan() || e_fe_succ_hat < 0.0 {
        return Err(invalid("expected successful-run cost must be non-negative"));
    }
    Ok(expected_restarts(p_hat)? * fe_max as f64 + e_fe_succ_hat)
}

/// Value used when no run succeeded.
///
/// Pretends half a success was observed (`p = 1 / (2 n)`), charges a full
/// budget for the successful run, and adds `fe_max * mean_gap_ratio` so that
/// policies which all fail are still ordered by how far they closed the gap.
/// Always larger than any value reachable with at least one success.
pub fn zero_success_fallback(n_runs: usize, fe_max: usize, mean_gap_ratio: f64) -> f64 {
    let p = 1.0 / (2.0 * n_runs as f64);
    let fe = fe_max as f64;
    (1.0 - p) / p * fe + fe + fe * mean_gap_ratio.clamp(0.0, 1.0)
}

/// The part of a run the estimators need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOutcome {
    pub first_hit: Option<usize>,
    pub gap_ratio: f64,
}

impl RunOutcome {
    pub fn from_record(record: &RolloutRecord) -> Self {
        RunOutcome {
            first_hit: record.evals_to_success,
            gap_ratio: record.gap_ratio(),
        }
    }
}

pub fn estimate_outcomes(outcomes: &[RunOutcome], fe_max: usize) -> Result<ErtStats> {
    if outcomes.is_empty() {
        return Err(invalid("cannot estimate from an empty list of runs"));
    }
    if fe_max == 0 {
        return Err(invalid("fe_max must be positive"));
    }
    let n_runs = outcomes.len();
    let hits: Vec<usize> = outcomes.iter().filter_map(|o| o.first_hit).collect();
    if let Some(h) = hits.iter().find(|&&h| h > fe_max) {
        return Err(invalid(format!(
            "first hit at {h} evaluations exceeds fe_max {fe_max}"
        )));
    }
    let n_success = hits.len();
    let p_hat = n_success as f64 / n_runs as f64;
    let (e_fe_succ_hat, expected) = if n_success == 0 {
        let mean_ratio = outcomes.iter().map(|o| o.gap_ratio).sum::<f64>() / n_runs as f64;
        (None, zero_success_fallback(n_runs, fe_max, mean_ratio))
    } else {
        let e = hits.iter().sum::<usize>() as f64 / n_success as f64;
        (Some(e), expected_fe(p_hat, e, fe_max)?)
    };
    Ok(ErtStats {
        n_runs,
        n_success,
        p_hat,
        e_fe_succ_hat,
        fe_max,
        expected_fe: expected,
    })
}

pub fn estimate(records: &[RolloutRecord], fe_max: usize) -> Result<ErtStats> {
    if let Some(r) = records.iter().find(|r| r.evals_used > fe_max) {
        return Err(invalid(format!(
            "record used {} evaluations, more than fe_max {fe_max}",
            r.evals_used
        )));
    }
    let outcomes: Vec<RunOutcome> = records.iter().map(RunOutcome::from_record).collect();
    estimate_outcomes(&outcomes, fe_max)
}

/// Seed of run `run` on `task` under meta-level seed `meta_seed`.
///
/// Keyed by the task's instance seed rather than its position, so results do
/// not depend on task order.
pub fn episode_seed(meta_seed: u64, task: &Task, run: usize) -> u64 {
    seed::derive(
        meta_seed,
        &[stream::EPISODE, task.config.instance_seed, run as u64],
    )
}

/// Runs `runs_per_task` episodes on every task, concurrently. Result is indexed
/// `[task][run]` and independent of scheduling.
pub fn run_task_episodes(
    factory: &dyn OptimizerFactory,
    tasks: &[Task],
    runs_per_task: usize,
    episode_config: &EpisodeConfig,
    seed: u64,
) -> Result<Vec<Vec<RolloutRecord>>> {
    if runs_per_task == 0 {
        return Err(invalid("runs_per_task must be positive"));
    }
    episode_config.validate()?;
    let flat: Vec<RolloutRecord> = (0..tasks.len() * runs_per_task)
        .into_par_iter()
        .map(|k| {
            let task = &tasks[k / runs_per_task];
            let run = k % runs_per_task;
            let cfg = episode_config.with_seed(episode_seed(seed, task, run));
            let mut optimizer = factory.create();
            run_episode(&mut optimizer, task, &cfg)
        })
        .collect::<Result<_>>()?;
    let mut it = flat.into_iter();
    Ok((0..tasks.len())
        .map(|_| it.by_ref().take(runs_per_task).collect())
        .collect())
}

/// Per-task statistics behind [`meta_fitness`].
pub fn meta_fitness_components(
    factory: &dyn OptimizerFactory,
    tasks: &[Task],
    runs_per_task: usize,
    episode_config: &EpisodeConfig,
    seed: u64,
) -> Result<Vec<ErtStats>> {
    if tasks.is_empty() {
        return Err(invalid("meta_fitness needs at least one task"));
    }
    run_task_episodes(factory, tasks, runs_per_task, episode_config, seed)?
        .iter()
        .map(|records| estimate(records, episode_config.fe_max))
        .collect()
}

/// Mean expected running time over `tasks` (lower is better).
pub fn meta_fitness(
    factory: &dyn OptimizerFactory,
    tasks: &[Task],
    runs_per_task: usize,
    episode_config: &EpisodeConfig,
    seed: u64,
) -> Result<f64> {
    let stats = meta_fitness_components(factory, tasks, runs_per_task, episode_config, seed)?;
    Ok(mean_expected_fe(&stats))
}

pub fn mean_expected_fe(stats: &[ErtStats]) -> f64 {
    stats.iter().map(|s| s.expected_fe).sum::<f64>() / stats.len() as f64
}
