//! Reference optimizers behind the [`Optimizer`] interface.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::env::{ActionBatch, Observation, Optimizer};
use crate::error::{invalid, Error, Result};
use crate::seed::{self, stream};

/// `lambda x dim` i.i.d. uniform points on `[-1, 1]`, keyed by `(seed, generation)`.
pub fn random_search_act(lambda: usize, dim: usize, seed: u64, generation: usize) -> ActionBatch {
    let mut rng = seed::rng(seed, &[stream::RANDOM_SEARCH, generation as u64]);
    let data = (0..lambda * dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
    ActionBatch::new(lambda, dim, data).expect("shape by construction")
}

/// Batch random search.
#[derive(Debug, Clone, Default)]
pub struct RandomSearch {
    lambda: usize,
    dim: usize,
    seed: u64,
}

impl RandomSearch {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Optimizer for RandomSearch {
    fn reset(&mut self, lambda: usize, dim: usize, seed: u64) {
        *self = RandomSearch { lambda, dim, seed };
    }

    fn act(&mut self, obs: &Observation) -> Result<ActionBatch> {
        Ok(random_search_act(
            self.lambda,
            self.dim,
            self.seed,
            obs.generation,
        ))
    }
}

/// Default population size `4 + floor(3 ln d)`.
pub fn cma_default_lambda(dim: usize) -> usize {
    4 + (3.0 * (dim.max(1) as f64).ln()).floor() as usize
}

/// Initial step size in normalized coordinates.
pub const CMA_INITIAL_STEP: f64 = 0.3;

/// Strategy parameters derived from `(d, lambda)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaParams {
    pub lambda: usize,
    pub mu: usize,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
}

impl CmaParams {
    pub fn new(dim: usize, lambda: usize) -> Self {
        let n = dim as f64;
        let mu = (lambda / 2).max(1);
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .map(|w| w.max(0.0))
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = if total > 0.0 {
            raw.iter().map(|w| w / total).collect()
        } else {
            vec![1.0 / mu as f64; mu]
        };
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        CmaParams {
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu: c_mu.max(0.0),
            chi_n,
        }
    }
}

/// State of a (mu/mu_w, lambda)-CMA-ES.
#[derive(Debug, Clone, PartialEq)]
pub struct CmaState {
    pub mean: DVector<f64>,
    pub step_size: f64,
    pub covariance: DMatrix<f64>,
    pub p_sigma: DVector<f64>,
    pub p_c: DVector<f64>,
    pub generation: usize,
    pub params: CmaParams,
    eigvecs: DMatrix<f64>,
    eigvals_sqrt: DVector<f64>,
}

/// Unclamped draws kept for the update.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCache {
    /// `y_k = B D z_k`, one per sample.
    pub steps: Vec<DVector<f64>>,
    /// `mean + step_size * y_k`, before clamping.
    pub points: Vec<DVector<f64>>,
}

impl CmaState {
    pub fn new(dim: usize, lambda: usize, mean: DVector<f64>, step_size: f64) -> Result<Self> {
        if dim == 0 || lambda == 0 {
            return Err(invalid("CMA-ES needs positive dimension and population"));
        }
        if mean.len() != dim {
            return Err(Error::Shape("initial mean has wrong length".into()));
        }
        if !(step_size > 0.0 && step_size.is_finite()) {
            return Err(invalid("step size must be positive and finite"));
        }
        Ok(CmaState {
            mean,
            step_size,
            covariance: DMatrix::identity(dim, dim),
            p_sigma: DVector::zeros(dim),
            p_c: DVector::zeros(dim),
            generation: 0,
            params: CmaParams::new(dim, lambda),
            eigvecs: DMatrix::identity(dim, dim),
            eigvals_sqrt: DVector::from_element(dim, 1.0),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Recomputes `C = B D^2 B^T`, flooring eigenvalues at `1e-14 * trace` if needed.
    fn refactor(&mut self) -> Result<()> {
        let c = &self.covariance;
        self.covariance = (c + c.transpose()) * 0.5;
        for attempt in 0..2 {
            let eig = SymmetricEigen::new(self.covariance.clone());
            let floor = 1e-14 * self.covariance.trace().abs().max(f64::MIN_POSITIVE);
            let ok = eig.eigenvalues.iter().all(|v| v.is_finite() && *v > 0.0);
            if ok {
                self.eigvecs = eig.eigenvectors;
                self.eigvals_sqrt = eig.eigenvalues.map(f64::sqrt);
                return Ok(());
            }
            if attempt == 0 {
                let floored = eig
                    .eigenvalues
                    .map(|v| if v.is_finite() { v.max(floor) } else { floor });
                let b = &eig.eigenvectors;
                self.covariance = b * DMatrix::from_diagonal(&floored) * b.transpose();
                self.covariance = (&self.covariance + self.covariance.transpose()) * 0.5;
            }
        }
        Err(Error::NonFinite(
            "covariance factorization failed after reconditioning".into(),
        ))
    }
}

/// Draws `lambda` samples `mean + step_size * C^{1/2} z` and clamps them to the domain.
pub fn cma_act(state: &CmaState, lambda: usize, seed: u64) -> (ActionBatch, SampleCache) {
    let dim = state.dim();
    let mut rng = seed::rng(seed, &[stream::CMA, state.generation as u64]);
    let mut steps = Vec::with_capacity(lambda);
    let mut points = Vec::with_capacity(lambda);
    let mut data = Vec::with_capacity(lambda * dim);
    for _ in 0..lambda {
        let z = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = &state.eigvecs * z.component_mul(&state.eigvals_sqrt);
        let x = &state.mean + &y * state.step_size;
        data.extend(x.iter().map(|v| v.clamp(-1.0, 1.0)));
        steps.push(y);
        points.push(x);
    }
    (
        ActionBatch::new(lambda, dim, data).expect("shape by construction"),
        SampleCache { steps, points },
    )
}

/// Weighted recombination, cumulative step-size adaptation, and rank-one plus
/// rank-mu covariance update. Ties in `fitness` keep index order.
pub fn cma_update(state: &mut CmaState, cache: &SampleCache, fitness: &[f64]) -> Result<()> {
    let p = state.params.clone();
    if cache.steps.len() != fitness.len() || fitness.len() != p.lambda {
        return Err(Error::Shape(format!(
            "{} samples, {} fitness values, lambda {}",
            cache.steps.len(),
            fitness.len(),
            p.lambda
        )));
    }
    if let Some(pos) = fitness.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("fitness[{pos}]")));
    }
    let n = state.dim() as f64;
    let mut order: Vec<usize> = (0..fitness.len()).collect();
    order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(&b)));

    let mut y_w = DVector::zeros(state.dim());
    for (w, &idx) in p.weights.iter().zip(&order) {
        y_w += &cache.steps[idx] * *w;
    }
    state.mean += &y_w * state.step_size;

    // C^{-1/2} y_w = B D^{-1} B^T y_w
    let inv_sqrt = state.eigvals_sqrt.map(|v| 1.0 / v);
    let c_inv_sqrt_yw = &state.eigvecs * (state.eigvecs.transpose() * &y_w).component_mul(&inv_sqrt);
    state.p_sigma = &state.p_sigma * (1.0 - p.c_sigma)
        + c_inv_sqrt_yw * (p.c_sigma * (2.0 - p.c_sigma) * p.mu_eff).sqrt();
    let ps_norm = state.p_sigma.norm();
    let gen = state.generation as i32 + 1;
    let h_sigma =
        ps_norm / (1.0 - (1.0 - p.c_sigma).powi(2 * gen)).sqrt() < (1.4 + 2.0 / (n + 1.0)) * p.chi_n;
    let h = if h_sigma { 1.0 } else { 0.0 };
    state.p_c = &state.p_c * (1.0 - p.c_c) + &y_w * (h * (p.c_c * (2.0 - p.c_c) * p.mu_eff).sqrt());

    let mut rank_mu = DMatrix::zeros(state.dim(), state.dim());
    for (w, &idx) in p.weights.iter().zip(&order) {
        let y = &cache.steps[idx];
        rank_mu += y * y.transpose() * *w;
    }
    let delta_h = (1.0 - h) * p.c_c * (2.0 - p.c_c);
    state.covariance = &state.covariance * (1.0 - p.c_1 - p.c_mu + p.c_1 * delta_h)
        + &state.p_c * state.p_c.transpose() * p.c_1
        + rank_mu * p.c_mu;

    state.step_size *= ((p.c_sigma / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).exp();
    state.generation += 1;
    state.refactor()
}

/// Fitness used for ranking: `f(clamp(x)) + gamma * |x - clamp(x)|^2`.
///
/// Without it a mean that leaves the domain sees identical clamped points and
/// stalls. `gamma` follows the spread of the generation's fitness so that the
/// penalty is comparable to real differences.
pub fn boundary_penalized(cache: &SampleCache, fitness: &[f64]) -> Vec<f64> {
    let (lo, hi) = fitness
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &f| {
            (lo.min(f), hi.max(f))
        });
    let spread = if hi > lo { hi - lo } else { 0.0 };
    let gamma = spread.max(1e-12 * (1.0 + hi.abs()));
    fitness
        .iter()
        .zip(&cache.points)
        .map(|(&f, x)| {
            let excess: f64 = x.iter().map(|v| (v - v.clamp(-1.0, 1.0)).powi(2)).sum();
            if excess > 0.0 {
                f + gamma * excess
            } else {
                f
            }
        })
        .collect()
}

/// CMA-ES as an episode optimizer. The population size comes from the episode.
#[derive(Debug, Clone)]
pub struct CmaEs {
    initial_step: f64,
    state: Option<CmaState>,
    cache: Option<SampleCache>,
    seed: u64,
}

impl Default for CmaEs {
    fn default() -> Self {
        CmaEs::new(CMA_INITIAL_STEP)
    }
}

impl CmaEs {
    pub fn new(initial_step: f64) -> Self {
        CmaEs {
            initial_step,
            state: None,
            cache: None,
            seed: 0,
        }
    }

    pub fn state(&self) -> Option<&CmaState> {
        self.state.as_ref()
    }
}

impl Optimizer for CmaEs {
    fn reset(&mut self, lambda: usize, dim: usize, seed: u64) {
        self.state = CmaState::new(dim, lambda, DVector::zeros(dim), self.initial_step).ok();
        self.cache = None;
        self.seed = seed;
    }

    fn act(&mut self, obs: &Observation) -> Result<ActionBatch> {
        let state = self
            .state
            .as_mut()
            .ok_or_else(|| invalid("CMA-ES used before reset"))?;
        if let Some(cache) = self.cache.take() {
            if !obs.is_empty() {
                let ranked = boundary_penalized(&cache, &obs.prev_fitness);
                cma_update(state, &cache, &ranked)?;
            }
        }
        let (batch, cache) = cma_act(state, state.params.lambda, self.seed);
        self.cache = Some(cache);
        Ok(batch)
    }
}
