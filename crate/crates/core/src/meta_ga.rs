//! Seed-list genetic algorithm over policy parameters.
//!
//! A genome never stores parameters. It stores the seed of the initial draw and
//! the ordered list of Gaussian mutations (seed and strength) applied since,
//! which is enough to rebuild the parameter vector bit for bit.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{EpisodeConfig, Optimizer};
use crate::error::{invalid, Error, Result};
use crate::meta_loss::meta_fitness;
use crate::policy::{init_flat, LearnedOptimizer, PolicyConfig, PolicyParams};
use crate::problems::{Split, Task, TaskSuite};
use crate::seed::{self, stream};
use crate::FORMAT_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mutation {
    pub seed: u64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genome {
    pub init_seed: u64,
    pub mutations: Vec<Mutation>,
}

impl Genome {
    pub fn new(init_seed: u64) -> Self {
        Genome {
            init_seed,
            mutations: Vec::new(),
        }
    }

    pub fn mutated(&self, seed: u64, sigma: f64) -> Genome {
        let mut child = self.clone();
        child.mutations.push(Mutation { seed, sigma });
        child
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population_size: usize,
    pub n_elites: usize,
    pub n_parents: usize,
    pub sigma0: f64,
    pub sigma_decay: f64,
    pub sigma_min: f64,
    pub generations: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 512,
            n_elites: 5,
            n_parents: 20,
            sigma0: 0.3,
            sigma_decay: 0.95,
            sigma_min: 0.01,
            generations: 200,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size == 0 || self.n_elites == 0 || self.n_parents == 0 {
            return Err(invalid(
                "population_size, n_elites and n_parents must be positive",
            ));
        }
        if !(self.n_elites <= self.n_parents && self.n_parents <= self.population_size) {
            return Err(invalid(format!(
                "need n_elites ({}) <= n_parents ({}) <= population_size ({})",
                self.n_elites, self.n_parents, self.population_size
            )));
        }
        if !(self.sigma0 > 0.0 && self.sigma_min > 0.0) {
            return Err(invalid("sigma0 and sigma_min must be positive"));
        }
        if !(self.sigma_decay > 0.0 && self.sigma_decay <= 1.0) {
            return Err(invalid("sigma_decay must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Parameters of `genome`: the initial draw plus every recorded mutation, in order.
pub fn decode(genome: &Genome, policy_config: PolicyConfig) -> Result<PolicyParams> {
    PolicyParams::unflatten(policy_config, &decode_flat(genome, policy_config)?)
}

pub fn decode_flat(genome: &Genome, policy_config: PolicyConfig) -> Result<Vec<f64>> {
    let mut theta = init_flat(policy_config, genome.init_seed)?;
    for m in &genome.mutations {
        let mut rng = seed::rng(m.seed, &[]);
        for v in theta.iter_mut() {
            let eps: f64 = rng.sample(StandardNormal);
            *v += m.sigma * eps;
        }
    }
    Ok(theta)
}

/// `max(sigma0 * decay^generation, sigma_min)`.
pub fn sigma_schedule(generation: usize, config: &GaConfig) -> f64 {
    let exp = i32::try_from(generation).unwrap_or(i32::MAX);
    (config.sigma0 * config.sigma_decay.powi(exp)).max(config.sigma_min)
}

/// Truncation selection with elitism: the `n_elites` best survive unchanged,
/// every other slot is a mutated copy of a parent drawn uniformly from the
/// `n_parents` best. Lower fitness is better; ties keep index order.
pub fn evolve_step(
    population: &[Genome],
    fitnesses: &[f64],
    generation: usize,
    config: &GaConfig,
    seed: u64,
) -> Result<Vec<Genome>> {
    config.validate()?;
    if population.len() != fitnesses.len() {
        return Err(Error::Shape(format!(
            "{} genomes but {} fitness values",
            population.len(),
            fitnesses.len()
        )));
    }
    if population.len() < config.n_parents {
        return Err(invalid("population smaller than n_parents"));
    }
    if let Some(pos) = fitnesses.iter().position(|f| !f.is_finite()) {
        return Err(Error::NonFinite(format!("fitness of genome {pos}")));
    }
    let mut order: Vec<usize> = (0..population.len()).collect();
    order.sort_by(|&a, &b| fitnesses[a].total_cmp(&fitnesses[b]).then(a.cmp(&b)));

    let sigma = sigma_schedule(generation, config);
    let mut rng = seed::rng(seed, &[]);
    let mut next: Vec<Genome> = order[..config.n_elites]
        .iter()
        .map(|&i| population[i].clone())
        .collect();
    while next.len() < config.population_size {
        let parent = &population[order[rng.random_range(0..config.n_parents)]];
        next.push(parent.mutated(rng.random(), sigma));
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub train_best: f64,
    pub train_mean: f64,
    /// Validation meta-loss of this round's best genome; absent without validation tasks.
    pub val_best: Option<f64>,
    pub sigma: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub entries: Vec<GenerationStats>,
}

impl TrainHistory {
    /// CSV with columns `generation,train_best,train_mean,val_best,sigma`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["generation", "train_best", "train_mean", "val_best", "sigma"])?;
        for e in &self.entries {
            w.write_record([
                e.generation.to_string(),
                e.train_best.to_string(),
                e.train_mean.to_string(),
                e.val_best.map(|v| v.to_string()).unwrap_or_default(),
                e.sigma.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Settings of one training run besides the GA and policy configurations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub episode: EpisodeConfig,
    pub runs_per_task: usize,
    pub master_seed: u64,
    /// Reuse one episode-seed block in every generation instead of a fresh one.
    pub fixed_episode_seeds: bool,
}

/// Handed to the observer after every evaluation round.
#[derive(Debug)]
pub struct GenerationReport<'a> {
    pub stats: &'a GenerationStats,
    pub population: &'a [Genome],
    pub fitnesses: &'a [f64],
    pub best: &'a Genome,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub best: Genome,
    pub best_fitness: f64,
    pub history: TrainHistory,
    pub population: Vec<Genome>,
    pub fitnesses: Vec<f64>,
}

/// Factory building a [`LearnedOptimizer`] around `params`.
pub fn learned_factory(params: PolicyParams) -> impl Fn() -> Box<dyn Optimizer> + Sync + Send {
    let params = Arc::new(params);
    move || Box::new(LearnedOptimizer::new(params.clone())) as Box<dyn Optimizer>
}

/// Meta-loss of `genome` on `tasks`.
pub fn genome_fitness(
    genome: &Genome,
    policy_config: PolicyConfig,
    tasks: &[Task],
    runs_per_task: usize,
    episode: &EpisodeConfig,
    seed: u64,
) -> Result<f64> {
    let factory = learned_factory(decode(genome, policy_config)?);
    meta_fitness(&factory, tasks, runs_per_task, episode, seed)
}

/// Runs `ga.generations` rounds of evaluate-then-evolve followed by one final
/// evaluation round, and returns the best genome of that final round.
///
/// History row `g` describes the evaluation of population `g`; `sigma` is the
/// mutation strength used to breed population `g + 1`.
pub fn train(
    ga: &GaConfig,
    policy_config: PolicyConfig,
    suite: &TaskSuite,
    settings: &TrainSettings,
    observer: &mut dyn FnMut(&GenerationReport<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    ga.validate()?;
    policy_config.validate()?;
    settings.episode.validate()?;
    let train_tasks = suite.split(Split::Train);
    let val_tasks = suite.split(Split::Validation);
    if train_tasks.is_empty() {
        return Err(invalid("the suite has no training tasks"));
    }
    let master = settings.master_seed;
    let mut population: Vec<Genome> = (0..ga.population_size)
        .map(|i| Genome::new(seed::derive(master, &[stream::GA_INIT, i as u64])))
        .collect();
    let val_seed = seed::derive(master, &[stream::GA_VALID]);
    let start = Instant::now();
    let mut history = TrainHistory::default();

    for generation in 0..=ga.generations {
        let episode_seed = if settings.fixed_episode_seeds {
            seed::derive(master, &[stream::GA_TRAIN])
        } else {
            seed::derive(master, &[stream::GA_TRAIN, generation as u64])
        };
        let fitnesses: Vec<f64> = population
            .par_iter()
            .map(|g| {
                genome_fitness(
                    g,
                    policy_config,
                    &train_tasks,
                    settings.runs_per_task,
                    &settings.episode,
                    episode_seed,
                )
            })
            .collect::<Result<_>>()?;
        let best_idx = argmin(&fitnesses);
        let val_best = if val_tasks.is_empty() {
            None
        } else {
            Some(genome_fitness(
                &population[best_idx],
                policy_config,
                &val_tasks,
                settings.runs_per_task,
                &settings.episode,
                val_seed,
            )?)
        };
        let stats = GenerationStats {
            generation,
            train_best: fitnesses[best_idx],
            train_mean: fitnesses.iter().sum::<f64>() / fitnesses.len() as f64,
            val_best,
            sigma: sigma_schedule(generation, ga),
        };
        observer(&GenerationReport {
            stats: &stats,
            population: &population,
            fitnesses: &fitnesses,
            best: &population[best_idx],
            elapsed_secs: start.elapsed().as_secs_f64(),
        })?;
        history.entries.push(stats);

        if generation == ga.generations {
            return Ok(TrainOutcome {
                best: population[best_idx].clone(),
                best_fitness: fitnesses[best_idx],
                history,
                population,
                fitnesses,
            });
        }
        let evolve_seed = seed::derive(master, &[stream::GA_EVOLVE, generation as u64]);
        population = evolve_step(&population, &fitnesses, generation, ga, evolve_seed)?;
    }
    unreachable!("loop returns on its last iteration")
}

fn argmin(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("non-empty")
}

/// Training snapshot written every few generations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainCheckpoint {
    pub format_version: u32,
    pub ga_config: GaConfig,
    pub policy_config: PolicyConfig,
    pub generation: usize,
    pub population: Vec<Genome>,
    pub best: Genome,
    pub history: TrainHistory,
}

/// A single trained genome with the configuration needed to decode it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenomeFile {
    pub format_version: u32,
    pub policy_config: PolicyConfig,
    pub genome: Genome,
}

impl GenomeFile {
    pub fn new(policy_config: PolicyConfig, genome: Genome) -> Self {
        GenomeFile {
            format_version: FORMAT_VERSION,
            policy_config,
            genome,
        }
    }
}
