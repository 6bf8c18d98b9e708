//! The optimization episode: one optimizer, one task, a fixed evaluation budget.
//!
//! The environment is a POMDP whose hidden state is the task. At each step the
//! optimizer emits a batch of `lambda` points, the environment clamps them into
//! `[-1, 1]^d`, evaluates them and hands back only the points and their raw
//! objective values. The optimum value and task identity never leave the
//! environment; they are used solely to score the episode.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::problems::Task;

/// `lambda x d` batch of points, row-major (one row per individual).
#[derive(Debug, Clone, PartialEq)]
pub struct ActionBatch {
    lambda: usize,
    dim: usize,
    data: Vec<f64>,
}

impl ActionBatch {
    pub fn new(lambda: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != lambda * dim {
            return Err(Error::Shape(format!(
                "batch data has {} entries, expected {lambda} x {dim}",
                data.len()
            )));
        }
        Ok(ActionBatch { lambda, dim, data })
    }

    pub fn filled(lambda: usize, dim: usize, value: f64) -> Self {
        ActionBatch {
            lambda,
            dim,
            data: vec![value; lambda * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("ragged rows".into()));
        }
        ActionBatch::new(rows.len(), dim, rows.concat())
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.lambda)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    fn clamp_to_domain(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(-1.0, 1.0);
        }
    }
}

/// What the optimizer sees before choosing generation `generation`.
///
/// Empty exactly at generation 0; afterwards it carries the previous batch
/// (as evaluated, i.e. after clamping) and its objective values.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub prev_points: Option<ActionBatch>,
    pub prev_fitness: Vec<f64>,
    pub generation: usize,
}

impl Observation {
    pub fn initial() -> Self {
        Observation {
            prev_points: None,
            prev_fitness: Vec::new(),
            generation: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.prev_points.is_none()
    }
}

/// Packages the evaluated batch into the observation for `generation`.
pub fn next_observation(
    prev_action: Option<&ActionBatch>,
    fitness: &[f64],
    generation: usize,
) -> Observation {
    match prev_action {
        None => Observation::initial(),
        Some(points) => Observation {
            prev_points: Some(points.clone()),
            prev_fitness: fitness.to_vec(),
            generation,
        },
    }
}

/// Per-step reward: improvement of the best gap to the optimum.
pub fn reward(prev_best_gap: f64, new_best_gap: f64) -> f64 {
    prev_best_gap - new_best_gap
}

/// A population-based black-box optimizer driven by [`run_episode`].
pub trait Optimizer: Send {
    /// Starts a fresh episode with `lambda` points per generation in `dim`
    /// dimensions. All randomness of the episode must derive from `seed`.
    fn reset(&mut self, lambda: usize, dim: usize, seed: u64);

    /// Proposes the next batch of `lambda` points.
    fn act(&mut self, obs: &Observation) -> Result<ActionBatch>;
}

impl<O: Optimizer + ?Sized> Optimizer for Box<O> {
    fn reset(&mut self, lambda: usize, dim: usize, seed: u64) {
        (**self).reset(lambda, dim, seed)
    }

    fn act(&mut self, obs: &Observation) -> Result<ActionBatch> {
        (**self).act(obs)
    }
}

/// Creates independent optimizer instances, one per concurrently running episode.
pub trait OptimizerFactory: Sync {
    fn create(&self) -> Box<dyn Optimizer>;
}

impl<F> OptimizerFactory for F
where
    F: Fn() -> Box<dyn Optimizer> + Sync,
{
    fn create(&self) -> Box<dyn Optimizer> {
        self()
    }
}

impl<T: OptimizerFactory + Send + ?Sized> OptimizerFactory for Arc<T> {
    fn create(&self) -> Box<dyn Optimizer> {
        (**self).create()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub lambda: usize,
    pub fe_max: usize,
    pub tolerance: f64,
    pub episode_seed: u64,
}

impl EpisodeConfig {
    pub const DEFAULT_TOLERANCE: f64 = 1e-3;

    /// Budget of `100 * dim` evaluations and the default tolerance.
    pub fn for_dimension(dim: usize, lambda: usize) -> Self {
        EpisodeConfig {
            lambda,
            fe_max: 100 * dim,
            tolerance: Self::DEFAULT_TOLERANCE,
            episode_seed: 0,
        }
    }

    pub fn with_seed(self, episode_seed: u64) -> Self {
        EpisodeConfig { episode_seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda == 0 {
            return Err(invalid("lambda must be positive"));
        }
        if self.fe_max < self.lambda {
            return Err(invalid(format!(
                "fe_max ({}) must be at least lambda ({})",
                self.fe_max, self.lambda
            )));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(invalid("tolerance must be a positive finite number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub evals_used: usize,
    pub success: bool,
    /// Evaluations spent when the first generation within tolerance finished.
    pub evals_to_success: Option<usize>,
    pub best_gap: f64,
    /// Best gap after each generation; non-increasing.
    pub best_gap_trajectory: Vec<f64>,
    /// Cumulative evaluations after each generation.
    pub generation_evals: Vec<usize>,
    pub rewards: Vec<f64>,
    pub episode_seed: u64,
    pub tolerance: f64,
}

impl RolloutRecord {
    /// Best gap after the first generation.
    pub fn initial_gap(&self) -> f64 {
        self.best_gap_trajectory.first().copied().unwrap_or(f64::INFINITY)
    }

    /// Evaluations used when the best gap first dropped to `target` or below.
    pub fn first_hit(&self, target: f64) -> Option<usize> {
        // trajectory is non-increasing
        let g = self.best_gap_trajectory.partition_point(|&gap| gap > target);
        self.generation_evals.get(g).copied()
    }

    /// `best_gap / initial_gap` clipped to `[0, 1]`; 0 when the first generation was exact.
    pub fn gap_ratio(&self) -> f64 {
        let initial = self.initial_gap();
        if initial <= 0.0 {
            0.0
        } else {
            (self.best_gap / initial).clamp(0.0, 1.0)
        }
    }
}

/// Population snapshots of one episode, for external plotting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeTrace {
    pub dim: usize,
    /// `(generation, point_index, point, fitness)`
    pub rows: Vec<(usize, usize, Vec<f64>, f64)>,
}

impl EpisodeTrace {
    /// CSV with columns `generation,point_index,x_0..x_{d-1},fitness`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["generation".to_string(), "point_index".to_string()];
        header.extend((0..self.dim).map(|j| format!("x_{j}")));
        header.push("fitness".into());
        w.write_record(&header)?;
        for (g, i, x, f) in &self.rows {
            let mut rec = vec![g.to_string(), i.to_string()];
            rec.extend(x.iter().map(|v| v.to_string()));
            rec.push(f.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs one episode until the evaluation budget is exhausted.
pub fn run_episode(
    optimizer: &mut dyn Optimizer,
    task: &Task,
    config: &EpisodeConfig,
) -> Result<RolloutRecord> {
    run(optimizer, task, config, None)
}

/// [`run_episode`] that also records every evaluated point.
pub fn run_episode_traced(
    optimizer: &mut dyn Optimizer,
    task: &Task,
    config: &EpisodeConfig,
    trace: &mut EpisodeTrace,
) -> Result<RolloutRecord> {
    trace.dim = task.dimension;
    trace.rows.clear();
    run(optimizer, task, config, Some(trace))
}

fn run(
    optimizer: &mut dyn Optimizer,
    task: &Task,
    config: &EpisodeConfig,
    mut trace: Option<&mut EpisodeTrace>,
) -> Result<RolloutRecord> {
    config.validate()?;
    let lambda = config.lambda;
    let dim = task.dimension;
    let f_star = task.optimum_value();
    optimizer.reset(lambda, dim, config.episode_seed);

    let mut obs = Observation::initial();
    let mut evals_used = 0;
    let mut best_gap = f64::INFINITY;
    let mut evals_to_success = None;
    let n_generations = config.fe_max.div_ceil(lambda);
    let mut trajectory = Vec::with_capacity(n_generations);
    let mut generation_evals = Vec::with_capacity(n_generations);
    let mut rewards = Vec::with_capacity(n_generations);

    let mut generation = 0;
    while evals_used < config.fe_max {
        let mut action = optimizer.act(&obs)?;
        if action.lambda() != lambda || action.dim() != dim {
            return Err(Error::Protocol {
                generation,
                reason: format!(
                    "action has shape {}x{}, expected {lambda}x{dim}",
                    action.lambda(),
                    action.dim()
                ),
            });
        }
        if let Some(pos) = action.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::Protocol {
                generation,
                reason: format!("non-finite coordinate at flat index {pos}"),
            });
        }
        action.clamp_to_domain();

        let n_eval = lambda.min(config.fe_max - evals_used);
        let fitness: Vec<f64> = action
            .rows()
            .take(n_eval)
            .map(|x| task.evaluate_unchecked(x))
            .collect();
        evals_used += n_eval;

        let prev_best = if generation == 0 { None } else { Some(best_gap) };
        for &f in &fitness {
            best_gap = best_gap.min((f - f_star).max(0.0));
        }
        rewards.push(prev_best.map_or(0.0, |p| reward(p, best_gap)));
        trajectory.push(best_gap);
        generation_evals.push(evals_used);
        if evals_to_success.is_none() && best_gap <= config.tolerance {
            evals_to_success = Some(evals_used);
        }
        if let Some(trace) = trace.as_deref_mut() {
            for (i, (x, f)) in action.rows().zip(&fitness).enumerate() {
                trace.rows.push((generation, i, x.to_vec(), *f));
            }
        }

        generation += 1;
        if evals_used < config.fe_max {
            obs = next_observation(Some(&action), &fitness, generation);
        }
    }

    Ok(RolloutRecord {
        evals_used,
        success: evals_to_success.is_some(),
        evals_to_success,
        best_gap,
        best_gap_trajectory: trajectory,
        generation_evals,
        rewards,
        episode_seed: config.episode_seed,
        tolerance: config.tolerance,
    })
}
