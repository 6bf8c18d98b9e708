//! The learned optimizer: a coordinate-wise recurrent policy.
//!
//! One small network is shared by every `(individual, dimension)` pair. Each
//! pair owns its own recurrent memory and, at every generation, reads two
//! numbers: its previous coordinate value and the normalized fitness rank of
//! its individual. It emits one coordinate of the next population through a
//! Gaussian-weight output layer squashed by `tanh`.
//!
//! Only ranks reach the network, so the policy behaves identically on `f` and
//! on any strictly increasing transformation of `f`.
//!
//! Flat parameter layout (stable across versions):
//!
//! ```text
//! for each layer l in 0..num_layers:
//!     W_l   4H x (in_l + H), row-major, gate blocks [input, forget, output, candidate]
//!     b_l   4H, same block order
//! out_mean       H + 1   (last entry multiplies the constant 1)
//! out_log_sigma  H + 1
//! ```
//!
//! with `in_0 = 2` and `in_l = H` for deeper layers.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{ActionBatch, Observation, Optimizer};
use crate::error::{invalid, Error, Result};
use crate::seed::{self, stream};
use crate::FORMAT_VERSION;

pub const INPUT_SIZE: usize = 2;
pub const OUTPUT_SIZE: usize = 1;
/// Standard deviation of the initial parameter draw.
pub const INIT_STD: f64 = 0.5;
/// Added to every forget-gate bias after the random draw.
pub const FORGET_BIAS_OFFSET: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub hidden_size: usize,
    pub num_layers: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            hidden_size: 32,
            num_layers: 2,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_size == 0 || self.num_layers == 0 {
            return Err(invalid("hidden_size and num_layers must be positive"));
        }
        Ok(())
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            INPUT_SIZE
        } else {
            self.hidden_size
        }
    }

    /// Total number of scalars in [`PolicyParams`]. Independent of `lambda` and `d`.
    pub fn parameter_count(&self) -> usize {
        let h = self.hidden_size;
        let recurrent: usize = (0..self.num_layers)
            .map(|l| 4 * h * (self.layer_input(l) + h) + 4 * h)
            .sum();
        recurrent + 2 * (h + 1) * OUTPUT_SIZE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub input_size: usize,
    pub hidden_size: usize,
    /// `4H x (input_size + H)`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LstmLayer {
    /// One cell step for a single slot. `h` and `c` are updated in place.
    fn step(&self, input: &[f64], h: &mut [f64], c: &mut [f64], gates: &mut [f64]) {
        let hs = self.hidden_size;
        let cols = self.input_size + hs;
        for (r, g) in gates.iter_mut().enumerate() {
            let row = &self.weights[r * cols..(r + 1) * cols];
            let (wx, wh) = row.split_at(self.input_size);
            let mut acc = self.bias[r];
            for (w, x) in wx.iter().zip(input) {
                acc += w * x;
            }
            for (w, x) in wh.iter().zip(h.iter()) {
                acc += w * x;
            }
            *g = acc;
        }
        for k in 0..hs {
            let i = sigmoid(gates[k]);
            let f = sigmoid(gates[hs + k]);
            let o = sigmoid(gates[2 * hs + k]);
            let cand = gates[3 * hs + k].tanh();
            c[k] = f * c[k] + i * cand;
            h[k] = o * c[k].tanh();
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub config: PolicyConfig,
    pub layers: Vec<LstmLayer>,
    pub out_mean: Vec<f64>,
    pub out_log_sigma: Vec<f64>,
}

impl PolicyParams {
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.config.parameter_count());
        for layer in &self.layers {
            flat.extend_from_slice(&layer.weights);
            flat.extend_from_slice(&layer.bias);
        }
        flat.extend_from_slice(&self.out_mean);
        flat.extend_from_slice(&self.out_log_sigma);
        flat
    }

    pub fn unflatten(config: PolicyConfig, flat: &[f64]) -> Result<Self> {
        config.validate()?;
        let expected = config.parameter_count();
        if flat.len() != expected {
            return Err(Error::Shape(format!(
                "flat parameter vector has {} entries, expected {expected}",
                flat.len()
            )));
        }
        let h = config.hidden_size;
        let mut rest = flat;
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head.to_vec()
        };
        let layers = (0..config.num_layers)
            .map(|l| {
                let input_size = config.layer_input(l);
                LstmLayer {
                    input_size,
                    hidden_size: h,
                    weights: take(4 * h * (input_size + h)),
                    bias: take(4 * h),
                }
            })
            .collect();
        let out_mean = take(h + 1);
        let out_log_sigma = take(h + 1);
        Ok(PolicyParams {
            config,
            layers,
            out_mean,
            out_log_sigma,
        })
    }

    pub fn to_checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint {
            format_version: FORMAT_VERSION,
            policy_config: self.config,
            flat_params: self.flatten(),
        }
    }
}

/// Every scalar i.i.d. `N(0, 0.5)` from the seeded stream, then the forget-gate
/// biases shifted by [`FORGET_BIAS_OFFSET`].
pub fn init_params(config: PolicyConfig, seed: u64) -> Result<PolicyParams> {
    let flat = init_flat(config, seed)?;
    PolicyParams::unflatten(config, &flat)
}

/// Flat form of [`init_params`].
pub fn init_flat(config: PolicyConfig, seed: u64) -> Result<Vec<f64>> {
    config.validate()?;
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let mut rng = seed::rng(seed, &[]);
    let mut flat: Vec<f64> = (0..config.parameter_count())
        .map(|_| normal.sample(&mut rng))
        .collect();
    let h = config.hidden_size;
    let mut offset = 0;
    for l in 0..config.num_layers {
        offset += 4 * h * (config.layer_input(l) + h);
        for v in &mut flat[offset + h..offset + 2 * h] {
            *v += FORGET_BIAS_OFFSET;
        }
        offset += 4 * h;
    }
    Ok(flat)
}

/// JSON parameter checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub format_version: u32,
    pub policy_config: PolicyConfig,
    pub flat_params: Vec<f64>,
}

impl PolicyCheckpoint {
    pub fn into_params(self) -> Result<PolicyParams> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        PolicyParams::unflatten(self.policy_config, &self.flat_params)
    }
}

/// Recurrent memory for `lambda * dim` independent slots.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    lambda: usize,
    dim: usize,
    hidden_size: usize,
    num_layers: usize,
    /// Slot-major, then layer, then hidden unit.
    hidden: Vec<f64>,
    cell: Vec<f64>,
    pub prev_point: Option<ActionBatch>,
}

impl PolicyState {
    pub fn new(config: &PolicyConfig, lambda: usize, dim: usize) -> Self {
        let n = lambda * dim * config.num_layers * config.hidden_size;
        PolicyState {
            lambda,
            dim,
            hidden_size: config.hidden_size,
            num_layers: config.num_layers,
            hidden: vec![0.0; n],
            cell: vec![0.0; n],
            prev_point: None,
        }
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn slot_len(&self) -> usize {
        self.num_layers * self.hidden_size
    }

    /// Hidden vector of `layer` for slot `(i, j)`.
    pub fn hidden(&self, i: usize, j: usize, layer: usize) -> &[f64] {
        let start = (i * self.dim + j) * self.slot_len() + layer * self.hidden_size;
        &self.hidden[start..start + self.hidden_size]
    }

    pub fn hidden_values(&self) -> &[f64] {
        &self.hidden
    }

    pub fn reset(&mut self) {
        self.hidden.fill(0.0);
        self.cell.fill(0.0);
        self.prev_point = None;
    }

    /// Reorders slots: slot `(i, j)` of the result is slot `(rows[i], cols[j])` of `self`.
    pub fn permuted(&self, rows: &[usize], cols: &[usize]) -> PolicyState {
        let len = self.slot_len();
        let mut out = self.clone();
        for (i, &si) in rows.iter().enumerate() {
            for (j, &sj) in cols.iter().enumerate() {
                let dst = (i * self.dim + j) * len;
                let src = (si * self.dim + sj) * len;
                out.hidden[dst..dst + len].copy_from_slice(&self.hidden[src..src + len]);
                out.cell[dst..dst + len].copy_from_slice(&self.cell[src..src + len]);
            }
        }
        out.prev_point = self.prev_point.as_ref().map(|p| {
            let data = rows
                .iter()
                .flat_map(|&si| cols.iter().map(move |&sj| p.get(si, sj)))
                .collect();
            ActionBatch::new(rows.len(), cols.len(), data).expect("same shape")
        });
        out
    }
}

/// Ascending ranks (best = 0) scaled by `1 / (lambda - 1)`; ties keep index order.
pub fn rank_transform(fitness: &[f64]) -> Result<Vec<f64>> {
    if let Some(pos) = fitness.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("fitness[{pos}] = {}", fitness[pos])));
    }
    let n = fitness.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]).then(a.cmp(&b)));
    let scale = if n > 1 { 1.0 / (n - 1) as f64 } else { 0.0 };
    let mut ranks = vec![0.0; n];
    for (rank, &idx) in order.iter().enumerate() {
        ranks[idx] = rank as f64 * scale;
    }
    Ok(ranks)
}

/// Computes the next population and advances `state`.
///
/// At generation 0 the state is zeroed and every slot reads the input `(0, 0)`.
/// Afterwards slot `(i, j)` reads `(prev_points[i][j], rank[i])`. The output
/// weights are drawn afresh for every slot from a stream indexed by
/// `(step_seed, i, j)`, so results do not depend on evaluation order.
pub fn act(
    params: &PolicyParams,
    state: &mut PolicyState,
    obs: &Observation,
    step_seed: u64,
) -> Result<ActionBatch> {
    let cfg = params.config;
    if state.hidden_size != cfg.hidden_size || state.num_layers != cfg.num_layers {
        return Err(Error::Shape("policy state does not match parameters".into()));
    }
    let (lambda, dim) = (state.lambda, state.dim);
    let inputs: Option<(&ActionBatch, Vec<f64>)> = match &obs.prev_points {
        None => {
            state.reset();
            None
        }
        Some(points) => {
            if points.lambda() != lambda || points.dim() != dim || obs.prev_fitness.len() != lambda {
                return Err(Error::Shape(format!(
                    "observation is {}x{} with {} fitness values, policy state is {lambda}x{dim}",
                    points.lambda(),
                    points.dim(),
                    obs.prev_fitness.len()
                )));
            }
            Some((points, rank_transform(&obs.prev_fitness)?))
        }
    };

    let hs = cfg.hidden_size;
    let slot_len = state.slot_len();
    let mut gates = vec![0.0; 4 * hs];
    let mut layer_input = vec![0.0; hs.max(INPUT_SIZE)];
    let sigma: Vec<f64> = params.out_log_sigma.iter().map(|s| s.exp()).collect();
    let mut out = Vec::with_capacity(lambda * dim);

    for i in 0..lambda {
        for j in 0..dim {
            let slot = (i * dim + j) * slot_len;
            let (x_in, rank_in) = match &inputs {
                None => (0.0, 0.0),
                Some((points, ranks)) => (points.get(i, j), ranks[i]),
            };
            layer_input[0] = x_in;
            layer_input[1] = rank_in;
            let mut in_len = INPUT_SIZE;
            for (l, layer) in params.layers.iter().enumerate() {
                let range = slot + l * hs..slot + (l + 1) * hs;
                let h = &mut state.hidden[range.clone()];
                let c = &mut state.cell[range];
                layer.step(&layer_input[..in_len], h, c, &mut gates);
                layer_input[..hs].copy_from_slice(h);
                in_len = hs;
            }
            let top = &layer_input[..hs];
            let mut rng = seed::rng(step_seed, &[stream::POLICY_NOISE, i as u64, j as u64]);
            let mut pre = 0.0;
            for k in 0..=hs {
                let eps: f64 = rng.sample(StandardNormal);
                let w = params.out_mean[k] + sigma[k] * eps;
                let feature = if k < hs { top[k] } else { 1.0 };
                pre += w * feature;
            }
            out.push(pre.tanh());
        }
    }
    let batch = ActionBatch::new(lambda, dim, out)?;
    state.prev_point = Some(batch.clone());
    Ok(batch)
}

/// [`Optimizer`] adapter around shared policy parameters.
#[derive(Debug, Clone)]
pub struct LearnedOptimizer {
    params: Arc<PolicyParams>,
    state: PolicyState,
    seed: u64,
}

impl LearnedOptimizer {
    pub fn new(params: Arc<PolicyParams>) -> Self {
        let state = PolicyState::new(&params.config, 0, 0);
        LearnedOptimizer {
            params,
            state,
            seed: 0,
        }
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }
}

impl Optimizer for LearnedOptimizer {
    fn reset(&mut self, lambda: usize, dim: usize, seed: u64) {
        self.state = PolicyState::new(&self.params.config, lambda, dim);
        self.seed = seed;
    }

    fn act(&mut self, obs: &Observation) -> Result<ActionBatch> {
        let step_seed = seed::derive(self.seed, &[stream::POLICY_STEP, obs.generation as u64]);
        act(&self.params, &mut self.state, obs, step_seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Counts parameters gate by gate, independently of `parameter_count`.
    fn count_oracle(hidden: usize, layers: usize, input: usize, output: usize) -> usize {
        let mut total = 0;
        let mut fan_in = input;
        for _ in 0..layers {
            for _gate in ["input", "forget", "output", "candidate"] {
                total += hidden * fan_in; // input weights
                total += hidden * hidden; // recurrent weights
                total += hidden; // bias
            }
            fan_in = hidden;
        }
        total + output * (hidden + 1) + output * (hidden + 1)
    }

    #[test]
    fn parameter_count_matches_oracle() {
        let cfg = PolicyConfig::default();
        assert_eq!(cfg.parameter_count(), count_oracle(32, 2, 2, 1));
        assert_eq!(cfg.parameter_count(), 12_866);
        let small = PolicyConfig {
            hidden_size: 3,
            num_layers: 1,
        };
        assert_eq!(small.parameter_count(), count_oracle(3, 1, 2, 1));
        let params = init_params(cfg, 4).unwrap();
        assert_eq!(params.flatten().len(), count_oracle(32, 2, 2, 1));
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = PolicyConfig::default();
        assert_eq!(init_flat(cfg, 9).unwrap(), init_flat(cfg, 9).unwrap());
        assert_ne!(init_flat(cfg, 9).unwrap(), init_flat(cfg, 10).unwrap());
    }

    #[test]
    fn init_moments() {
        let cfg = PolicyConfig {
            hidden_size: 110,
            num_layers: 2,
        };
        let flat = init_flat(cfg, 1).unwrap();
        assert!(flat.len() >= 100_000);
        let n = flat.len() as f64;
        let mean = flat.iter().sum::<f64>() / n;
        let std = (flat.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((std - 0.5).abs() < 0.02, "std {std}");
    }

    #[test]
    fn forget_bias_offset_is_visible() {
        let cfg = PolicyConfig {
            hidden_size: 400,
            num_layers: 1,
        };
        let p = init_params(cfg, 2).unwrap();
        let h = cfg.hidden_size;
        let forget = &p.layers[0].bias[h..2 * h];
        let input = &p.layers[0].bias[..h];
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean(forget) - 1.0).abs() < 0.1);
        assert!(mean(input).abs() < 0.1);
    }

    #[test]
    fn flatten_round_trip() {
        let cfg = PolicyConfig::default();
        let p = init_params(cfg, 3).unwrap();
        let back = PolicyParams::unflatten(cfg, &p.flatten()).unwrap();
        assert_eq!(back, p);
        assert!(PolicyParams::unflatten(cfg, &[0.0; 5]).is_err());
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_transform(&[5.2, -1.0, 3.3]).unwrap(), vec![1.0, 0.0, 0.5]);
        assert_eq!(rank_transform(&[2.0, 2.0]).unwrap(), vec![0.0, 1.0]);
        assert!(rank_transform(&[1.0, f64::NAN]).is_err());
        let f = [0.5, 3.0, 1.5, 2.2];
        let cubed: Vec<f64> = f.iter().map(|v: &f64| v.powi(3)).collect();
        assert_eq!(rank_transform(&f).unwrap(), rank_transform(&cubed).unwrap());
    }

    fn observation(rng: &mut ChaCha8Rng, lambda: usize, dim: usize) -> Observation {
        let pts: Vec<f64> = (0..lambda * dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let fit: Vec<f64> = (0..lambda).map(|_| rng.random_range(-5.0..5.0)).collect();
        Observation {
            prev_points: Some(ActionBatch::new(lambda, dim, pts).unwrap()),
            prev_fitness: fit,
            generation: 1,
        }
    }

    #[test]
    fn generation_zero_is_deterministic() {
        let cfg = PolicyConfig::default();
        let p = init_params(cfg, 5).unwrap();
        let mut s1 = PolicyState::new(&cfg, 6, 3);
        let mut s2 = PolicyState::new(&cfg, 6, 3);
        let a = act(&p, &mut s1, &Observation::initial(), 77).unwrap();
        let b = act(&p, &mut s2, &Observation::initial(), 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(s1, s2);
    }

    #[test]
    fn outputs_are_bounded_and_state_is_bounded() {
        let cfg = PolicyConfig {
            hidden_size: 8,
            num_layers: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut count = 0;
        for trial in 0..200 {
            let p = init_params(cfg, trial).unwrap();
            let mut s = PolicyState::new(&cfg, 5, 10);
            act(&p, &mut s, &Observation::initial(), trial).unwrap();
            let a = act(&p, &mut s, &observation(&mut rng, 5, 10), trial + 1).unwrap();
            assert!(a.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
            assert!(s.hidden_values().iter().all(|v| (-1.0..=1.0).contains(v)));
            count += a.as_slice().len();
        }
        assert!(count >= 10_000);
    }

    #[test]
    fn degenerate_variance_ignores_step_seed() {
        let cfg = PolicyConfig::default();
        let mut p = init_params(cfg, 5).unwrap();
        p.out_log_sigma.fill(-30.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let obs = observation(&mut rng, 4, 2);
        let mut base = PolicyState::new(&cfg, 4, 2);
        act(&p, &mut base, &Observation::initial(), 0).unwrap();
        let a = act(&p, &mut base.clone(), &obs, 1).unwrap();
        let b = act(&p, &mut base.clone(), &obs, 2).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_params_center_the_output() {
        let cfg = PolicyConfig {
            hidden_size: 4,
            num_layers: 2,
        };
        let p = PolicyParams::unflatten(cfg, &vec![0.0; cfg.parameter_count()]).unwrap();
        let mut s = PolicyState::new(&cfg, 200, 5);
        let a = act(&p, &mut s, &Observation::initial(), 3).unwrap();
        let mean = a.as_slice().iter().sum::<f64>() / a.as_slice().len() as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let cfg = PolicyConfig::default();
        let p = init_params(cfg, 1).unwrap();
        let mut s = PolicyState::new(&cfg, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(act(&p, &mut s, &observation(&mut rng, 4, 2), 0).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = PolicyConfig::default();
        let p = init_params(cfg, 8).unwrap();
        let json = serde_json::to_string(&p.to_checkpoint()).unwrap();
        let back: PolicyCheckpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(back.into_params().unwrap(), p);
        let mut bad = p.to_checkpoint();
        bad.format_version = 99;
        assert!(matches!(bad.into_params(), Err(Error::FormatVersion { .. })));
    }
}
