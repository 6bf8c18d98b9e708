//! ECDF curves, ERT tables and optimizer comparisons.
//!
//! One run per `(task, run)` pair is enough for every target: the first-hit
//! time of a target is read off the run's best-gap trajectory.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::env::{EpisodeConfig, OptimizerFactory, RolloutRecord};
use crate::error::{invalid, Result};
use crate::meta_loss::{estimate_outcomes, run_task_episodes, ErtStats, RunOutcome};
use crate::problems::{Split, Task, TaskSuite};

/// Gap-to-optimum thresholds, strictly decreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSet {
    precisions: Vec<f64>,
}

impl TargetSet {
    pub fn new(precisions: Vec<f64>) -> Result<Self> {
        if precisions.is_empty() {
            return Err(invalid("target set is empty"));
        }
        if precisions.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(invalid("targets must be positive and finite"));
        }
        if precisions.windows(2).any(|w| w[1] >= w[0]) {
            return Err(invalid("targets must be strictly decreasing"));
        }
        Ok(TargetSet { precisions })
    }

    /// Five targets per decade from `1e2` down to `1e-3`.
    pub fn standard() -> Self {
        let precisions = (0..=25)
            .map(|k| 10f64.powf(2.0 - k as f64 / 5.0))
            .collect::<Vec<_>>();
        let mut t = TargetSet { precisions };
        // pin the endpoints exactly
        t.precisions[0] = 1e2;
        t.precisions[25] = 1e-3;
        t
    }

    pub fn single(tolerance: f64) -> Result<Self> {
        TargetSet::new(vec![tolerance])
    }

    pub fn precisions(&self) -> &[f64] {
        &self.precisions
    }

    pub fn len(&self) -> usize {
        self.precisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.precisions.is_empty()
    }
}

/// Fraction of `(task, target, run)` triples solved within a budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcdfCurve {
    /// Every generation boundary seen in the runs, increasing.
    pub budgets: Vec<usize>,
    pub fraction_solved: Vec<f64>,
    pub n_pairs: usize,
    pub fe_max: usize,
}

impl EcdfCurve {
    /// Builds the curve from runs indexed `[task][run]`.
    pub fn from_records(records: &[Vec<RolloutRecord>], targets: &TargetSet, fe_max: usize) -> Self {
        let mut budgets: Vec<usize> = records
            .iter()
            .flatten()
            .flat_map(|r| r.generation_evals.iter().copied())
            .collect();
        budgets.sort_unstable();
        budgets.dedup();

        let mut hits: Vec<usize> = records
            .iter()
            .flatten()
            .flat_map(|r| targets.precisions().iter().filter_map(|&t| r.first_hit(t)))
            .collect();
        hits.sort_unstable();
        let n_pairs = records.iter().map(Vec::len).sum::<usize>() * targets.len();
        let fraction_solved = budgets
            .iter()
            .map(|&b| hits.partition_point(|&h| h <= b) as f64 / n_pairs as f64)
            .collect();
        EcdfCurve {
            budgets,
            fraction_solved,
            n_pairs,
            fe_max,
        }
    }

    /// Step-function value at `budget`.
    pub fn fraction_at(&self, budget: usize) -> f64 {
        let k = self.budgets.partition_point(|&b| b <= budget);
        if k == 0 {
            0.0
        } else {
            self.fraction_solved[k - 1]
        }
    }

    pub fn final_fraction(&self) -> f64 {
        self.fraction_solved.last().copied().unwrap_or(0.0)
    }

    /// Area under the curve against `ln(budget)` on `[1, fe_max]`, by the
    /// trapezoid rule over every integer budget, divided by `ln(fe_max)`.
    pub fn auc(&self) -> f64 {
        auc_of(|b| self.fraction_at(b), self.fe_max)
    }
}

/// Normalized trapezoidal area of `fraction` over log-budget.
pub fn auc_of(fraction: impl Fn(usize) -> f64, fe_max: usize) -> f64 {
    if fe_max <= 1 {
        return fraction(1);
    }
    let mut area = 0.0;
    let mut prev = fraction(1);
    for b in 1..fe_max {
        let next = fraction(b + 1);
        area += 0.5 * (prev + next) * (((b + 1) as f64).ln() - (b as f64).ln());
        prev = next;
    }
    area / (fe_max as f64).ln()
}

pub fn run_ecdf(
    factory: &dyn OptimizerFactory,
    tasks: &[Task],
    targets: &TargetSet,
    episode: &EpisodeConfig,
    runs_per_task: usize,
    seed: u64,
) -> Result<EcdfCurve> {
    if tasks.is_empty() {
        return Err(invalid("no tasks to benchmark"));
    }
    let records = run_task_episodes(factory, tasks, runs_per_task, episode, seed)?;
    Ok(EcdfCurve::from_records(&records, targets, episode.fe_max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErtRow {
    pub task_id: String,
    pub target: f64,
    pub stats: ErtStats,
}

/// One row per `(task, target)`, treating the target as the success criterion.
pub fn ert_from_records(
    tasks: &[Task],
    records: &[Vec<RolloutRecord>],
    targets: &TargetSet,
    fe_max: usize,
) -> Result<Vec<ErtRow>> {
    let mut rows = Vec::with_capacity(tasks.len() * targets.len());
    for (task, runs) in tasks.iter().zip(records) {
        for &target in targets.precisions() {
            let outcomes: Vec<RunOutcome> = runs
                .iter()
                .map(|r| RunOutcome {
                    first_hit: r.first_hit(target),
                    gap_ratio: r.gap_ratio(),
                })
                .collect();
            rows.push(ErtRow {
                task_id: task.task_id.clone(),
                target,
                stats: estimate_outcomes(&outcomes, fe_max)?,
            });
        }
    }
    Ok(rows)
}

pub fn ert_table(
    factory: &dyn OptimizerFactory,
    tasks: &[Task],
    targets: &TargetSet,
    episode: &EpisodeConfig,
    runs_per_task: usize,
    seed: u64,
) -> Result<Vec<ErtRow>> {
    if tasks.is_empty() {
        return Err(invalid("no tasks to benchmark"));
    }
    let records = run_task_episodes(factory, tasks, runs_per_task, episode, seed)?;
    ert_from_records(tasks, &records, targets, episode.fe_max)
}

/// An optimizer entered into a comparison.
pub struct NamedOptimizer<'a> {
    pub name: String,
    pub factory: &'a dyn OptimizerFactory,
    /// Population size; `None` uses the episode configuration's.
    pub lambda: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerResult {
    pub name: String,
    pub lambda: usize,
    pub ecdf: EcdfCurve,
    pub auc: f64,
    pub final_fraction: f64,
    pub ert: Vec<ErtRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub results: Vec<OptimizerResult>,
}

impl ComparisonReport {
    pub fn get(&self, name: &str) -> Option<&OptimizerResult> {
        self.results.iter().find(|r| r.name == name)
    }
}

/// Benchmarks every optimizer on the test split of `suite` with shared episode seeds.
pub fn compare(
    optimizers: &[NamedOptimizer<'_>],
    suite: &TaskSuite,
    targets: &TargetSet,
    episode: &EpisodeConfig,
    runs_per_task: usize,
    seed: u64,
) -> Result<ComparisonReport> {
    compare_on(
        optimizers,
        &suite.split(Split::Test),
        targets,
        episode,
        runs_per_task,
        seed,
    )
}

/// [`compare`] on an explicit task list.
pub fn compare_on(
    optimizers: &[NamedOptimizer<'_>],
    tasks: &[Task],
    targets: &TargetSet,
    episode: &EpisodeConfig,
    runs_per_task: usize,
    seed: u64,
) -> Result<ComparisonReport> {
    if optimizers.len() < 2 {
        return Err(invalid("a comparison needs at least two optimizers"));
    }
    if tasks.is_empty() {
        return Err(invalid("no tasks to benchmark"));
    }
    let results = optimizers
        .iter()
        .map(|opt| {
            let lambda = opt.lambda.unwrap_or(episode.lambda);
            let cfg = EpisodeConfig { lambda, ..*episode };
            let records = run_task_episodes(opt.factory, tasks, runs_per_task, &cfg, seed)?;
            let ecdf = EcdfCurve::from_records(&records, targets, cfg.fe_max);
            Ok(OptimizerResult {
                name: opt.name.clone(),
                lambda,
                auc: ecdf.auc(),
                final_fraction: ecdf.final_fraction(),
                ert: ert_from_records(tasks, &records, targets, cfg.fe_max)?,
                ecdf,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ComparisonReport { results })
}

/// `optimizer,budget,fraction_solved,n_pairs`
pub fn write_ecdf_csv<'a, W: Write>(
    out: W,
    curves: impl IntoIterator<Item = (&'a str, &'a EcdfCurve)>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["optimizer", "budget", "fraction_solved", "n_pairs"])?;
    for (name, curve) in curves {
        for (b, f) in curve.budgets.iter().zip(&curve.fraction_solved) {
            w.write_record([
                name.to_string(),
                b.to_string(),
                f.to_string(),
                curve.n_pairs.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `optimizer,task_id,target,n_runs,n_success,p_hat,e_fe_succ_hat,expected_fe`
pub fn write_ert_csv<'a, W: Write>(
    out: W,
    tables: impl IntoIterator<Item = (&'a str, &'a [ErtRow])>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "optimizer",
        "task_id",
        "target",
        "n_runs",
        "n_success",
        "p_hat",
        "e_fe_succ_hat",
        "expected_fe",
    ])?;
    for (name, rows) in tables {
        for row in rows {
            let s = &row.stats;
            w.write_record([
                name.to_string(),
                row.task_id.clone(),
                row.target.to_string(),
                s.n_runs.to_string(),
                s.n_success.to_string(),
                s.p_hat.to_string(),
                s.e_fe_succ_hat.map(|v| v.to_string()).unwrap_or_default(),
                s.expected_fe.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `optimizer,lambda,auc,final_fraction`
pub fn write_summary_csv<W: Write>(out: W, report: &ComparisonReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["optimizer", "lambda", "auc", "final_fraction"])?;
    for r in &report.results {
        w.write_record([
            r.name.clone(),
            r.lambda.to_string(),
            r.auc.to_string(),
            r.final_fraction.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
