//! Shared fixtures for the benchmarks.

use lpbo_core::env::Observation;
use lpbo_core::policy::{act, init_params};
use lpbo_core::{EpisodeConfig, FunctionFamily, PolicyConfig, PolicyParams, PolicyState, Task};

pub fn task(family: FunctionFamily, dim: usize) -> Task {
    Task::generate(format!("bench-{}", family.name()), family, dim, 7).expect("valid task")
}

pub fn policy(config: PolicyConfig) -> PolicyParams {
    init_params(config, 3).expect("valid config")
}

pub fn episode(dim: usize, lambda: usize) -> EpisodeConfig {
    EpisodeConfig::for_dimension(dim, lambda).with_seed(11)
}

/// A state and observation one generation into an episode.
pub fn warm_state(params: &PolicyParams, task: &Task, lambda: usize) -> (PolicyState, Observation) {
    let mut state = PolicyState::new(&params.config, lambda, task.dimension);
    let batch = act(params, &mut state, &Observation::initial(), 0).expect("act");
    let fitness = batch.rows().map(|x| task.evaluate_unchecked(x)).collect();
    let obs = Observation {
        prev_points: Some(batch),
        prev_fitness: fitness,
        generation: 1,
    };
    (state, obs)
}
