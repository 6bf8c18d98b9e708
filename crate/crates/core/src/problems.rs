//! Task distribution: seeded instances of synthetic objective families.
//!
//! Every task is evaluated on the normalized box `[-1, 1]^d`. A point is mapped
//! affinely into the family's natural box, shifted and rotated by the instance
//! transformation, and the family's closed form is evaluated on the result:
//!
//! ```text
//! z = R (x_nat - shift_nat)        f(x) = base(z) + value_offset
//! ```
//!
//! Each `base` has its global minimum `0` at `z = 0`, so the optimum value of
//! every instance is its `value_offset` and the optimum location is `shift`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed::{self, stream};

/// Largest magnitude of a drawn shift coordinate (normalized units).
pub const SHIFT_BOUND: f64 = 0.8;
/// Range of the additive offset of the optimum value.
pub const OFFSET_BOUND: f64 = 100.0;

// Schwefel's minimizer of `-u sin(sqrt|u|)` on [-500, 500].
const SCHWEFEL_ARGMIN: f64 = 420.968_746_359_982;
const SCHWEFEL_PENALTY: f64 = 0.1;
const LUNACEK_MU0: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionFamily {
    Sphere,
    LinearSlope,
    Rastrigin,
    Schwefel,
    LunacekBiRastrigin,
    GriewankRosenbrock,
}

impl FunctionFamily {
    pub const ALL: [FunctionFamily; 6] = [
        FunctionFamily::Sphere,
        FunctionFamily::LinearSlope,
        FunctionFamily::Rastrigin,
        FunctionFamily::Schwefel,
        FunctionFamily::LunacekBiRastrigin,
        FunctionFamily::GriewankRosenbrock,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FunctionFamily::Sphere => "sphere",
            FunctionFamily::LinearSlope => "linear_slope",
            FunctionFamily::Rastrigin => "rastrigin",
            FunctionFamily::Schwefel => "schwefel",
            FunctionFamily::LunacekBiRastrigin => "lunacek_bi_rastrigin",
            FunctionFamily::GriewankRosenbrock => "griewank_rosenbrock",
        }
    }

    /// Half-width of the natural search box `[-w, w]^d`.
    pub fn half_width(self) -> f64 {
        match self {
            FunctionFamily::Schwefel => 500.0,
            _ => 5.0,
        }
    }

    /// Closed form in instance coordinates. Minimum value is `0` at `z = 0`.
    ///
    /// `corner` is only read by [`FunctionFamily::LinearSlope`]: the signs of
    /// the normalized optimum, which fix the slope direction.
    pub fn base_value(self, z: &[f64], corner: &[f64]) -> f64 {
        let d = z.len();
        match self {
            FunctionFamily::Sphere => z.iter().map(|v| v * v).sum(),
            FunctionFamily::LinearSlope => z
                .iter()
                .zip(corner)
                .enumerate()
                .map(|(i, (zi, ci))| -slope_coefficient(i, d, *ci) * zi)
                .sum(),
            FunctionFamily::Rastrigin => z.iter().map(|v| v * v - 10.0 * (2.0 * PI * v).cos() + 10.0).sum(),
            FunctionFamily::Schwefel => z
                .iter()
                .map(|v| {
                    let u = v + SCHWEFEL_ARGMIN;
                    let excess = (u.abs() - 500.0).max(0.0);
                    schwefel_term(SCHWEFEL_ARGMIN) - schwefel_term(u) + SCHWEFEL_PENALTY * excess * excess
                })
                .sum(),
            FunctionFamily::LunacekBiRastrigin => {
                let dn = d as f64;
                let s = 1.0 - 1.0 / (2.0 * (dn + 20.0).sqrt() - 8.2);
                let mu1 = -((LUNACEK_MU0 * LUNACEK_MU0 - 1.0) / s).sqrt();
                let mut first = 0.0;
                let mut second = 0.0;
                let mut ripple = 0.0;
                for v in z {
                    let xh = v + LUNACEK_MU0;
                    first += (xh - LUNACEK_MU0).powi(2);
                    second += (xh - mu1).powi(2);
                    ripple += 1.0 - (2.0 * PI * (xh - LUNACEK_MU0)).cos();
                }
                first.min(dn + s * second) + 10.0 * ripple
            }
            FunctionFamily::GriewankRosenbrock => {
                let scale = ((d as f64).sqrt() / 8.0).max(1.0);
                let shifted: Vec<f64> = z.iter().map(|v| scale * v + 1.0).collect();
                if d == 1 {
                    let s = (shifted[0] - 1.0).powi(2);
                    return 10.0 * (s / 4000.0 - s.cos()) + 10.0;
                }
                let total: f64 = shifted
                    .windows(2)
                    .map(|w| {
                        let s = 100.0 * (w[0] * w[0] - w[1]).powi(2) + (w[0] - 1.0).powi(2);
                        s / 4000.0 - s.cos()
                    })
                    .sum();
                10.0 * total / (d - 1) as f64 + 10.0
            }
        }
    }
}

fn schwefel_term(u: f64) -> f64 {
    u * u.abs().sqrt().sin()
}

/// Signed slope of coordinate `i`: magnitudes grow from 1 to 10 across dimensions.
fn slope_coefficient(i: usize, d: usize, corner: f64) -> f64 {
    let magnitude = if d > 1 {
        10f64.powf(i as f64 / (d - 1) as f64)
    } else {
        1.0
    };
    corner.signum() * magnitude
}

impl fmt::Display for FunctionFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FunctionFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        FunctionFamily::ALL
            .into_iter()
            .find(|f| f.name() == key)
            .ok_or_else(|| {
                let names: Vec<_> = FunctionFamily::ALL.iter().map(|f| f.name()).collect();
                invalid(format!(
                    "unknown function family `{s}` (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

/// Per-instance transformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceConfig {
    pub instance_seed: u64,
    /// Optimum location in normalized coordinates.
    pub shift: Vec<f64>,
    /// Row-major `d x d` orthogonal matrix.
    pub rotation: Vec<f64>,
    pub value_offset: f64,
}

impl InstanceConfig {
    /// Untransformed instance: zero shift, identity rotation, zero offset.
    pub fn identity(dimension: usize) -> Self {
        InstanceConfig {
            instance_seed: 0,
            shift: vec![0.0; dimension],
            rotation: identity_matrix(dimension),
            value_offset: 0.0,
        }
    }

    /// Draws shift, rotation and offset for `family` from `instance_seed`.
    pub fn generate(family: FunctionFamily, dimension: usize, instance_seed: u64) -> Self {
        let mut rng = seed::rng(instance_seed, &[stream::INSTANCE_SHIFT]);
        let shift: Vec<f64> = (0..dimension)
            .map(|_| {
                let v = rng.random_range(-SHIFT_BOUND..=SHIFT_BOUND);
                if family == FunctionFamily::LinearSlope {
                    if v < 0.0 {
                        -1.0
                    } else {
                        1.0
                    }
                } else {
                    v
                }
            })
            .collect();
        let rotation = if family == FunctionFamily::LinearSlope {
            identity_matrix(dimension)
        } else {
            random_orthogonal(
                dimension,
                seed::derive(instance_seed, &[stream::INSTANCE_ROTATION]),
            )
            .transpose()
            .as_slice()
            .to_vec()
        };
        let mut rng = seed::rng(instance_seed, &[stream::INSTANCE_OFFSET]);
        let value_offset = rng.random_range(-OFFSET_BOUND..=OFFSET_BOUND);
        InstanceConfig {
            instance_seed,
            shift,
            rotation,
            value_offset,
        }
    }
}

fn identity_matrix(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

/// Random orthogonal matrix from the QR factorization of a seeded Gaussian
/// matrix, with column signs fixed so that `diag(R) > 0`.
pub fn random_orthogonal(dimension: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = seed::rng(seed, &[]);
    let gauss = DMatrix::from_fn(dimension, dimension, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = gauss.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dimension {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// One objective-function instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub family: FunctionFamily,
    pub dimension: usize,
    pub config: InstanceConfig,
    pub optimum_value: f64,
}

impl Task {
    pub fn new(task_id: impl Into<String>, family: FunctionFamily, config: InstanceConfig) -> Result<Self> {
        let dimension = config.shift.len();
        if dimension == 0 {
            return Err(invalid("task dimension must be positive"));
        }
        if config.rotation.len() != dimension * dimension {
            return Err(Error::Shape(format!(
                "rotation has {} entries, expected {}",
                config.rotation.len(),
                dimension * dimension
            )));
        }
        Ok(Task {
            task_id: task_id.into(),
            family,
            dimension,
            optimum_value: config.value_offset,
            config,
        })
    }

    /// Instance generated from `instance_seed`.
    pub fn generate(
        task_id: impl Into<String>,
        family: FunctionFamily,
        dimension: usize,
        instance_seed: u64,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(invalid("task dimension must be positive"));
        }
        Task::new(
            task_id,
            family,
            InstanceConfig::generate(family, dimension, instance_seed),
        )
    }

    /// Objective value at `x`, which must lie in `[-1, 1]^d`.
    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dimension {
            return Err(Error::Shape(format!(
                "point has {} coordinates, task dimension is {}",
                x.len(),
                self.dimension
            )));
        }
        if let Some((index, &value)) = x.iter().enumerate().find(|(_, v)| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Domain { index, value });
        }
        Ok(self.evaluate_unchecked(x))
    }

    /// [`Task::evaluate`] without the domain check.
    pub fn evaluate_unchecked(&self, x: &[f64]) -> f64 {
        let d = self.dimension;
        let w = self.family.half_width();
        let diff: Vec<f64> = x
            .iter()
            .zip(&self.config.shift)
            .map(|(xi, si)| xi * w - si * w)
            .collect();
        let z: Vec<f64> = self
            .config
            .rotation
            .chunks_exact(d)
            .map(|row| row.iter().zip(&diff).map(|(r, v)| r * v).sum())
            .collect();
        self.family.base_value(&z, &self.config.shift) + self.config.value_offset
    }

    pub fn optimum_value(&self) -> f64 {
        self.optimum_value
    }

    /// Normalized coordinates of the global minimizer.
    pub fn optimum_location(&self) -> &[f64] {
        &self.config.shift
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(invalid(format!(
                "unknown split `{other}` (expected train, val or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSuite {
    pub tasks: Vec<Task>,
    pub splits: Vec<Split>,
}

impl TaskSuite {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Task, Split)> {
        self.tasks.iter().zip(self.splits.iter().copied())
    }

    pub fn split(&self, split: Split) -> Vec<Task> {
        self.iter()
            .filter(|(_, s)| *s == split)
            .map(|(t, _)| t.clone())
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.splits.iter().filter(|s| **s == split).count()
    }
}

/// Number of (train, validation, test) instances for `n` instances.
pub fn split_sizes(n: usize, ratio: [f64; 3]) -> Result<[usize; 3]> {
    if ratio.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(invalid("split fractions must be non-negative"));
    }
    if (ratio.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("split fractions {ratio:?} do not sum to 1")));
    }
    let train = ((n as f64) * ratio[0]).round() as usize;
    let val = (((n as f64) * ratio[1]).round() as usize).min(n - train.min(n));
    let train = train.min(n);
    Ok([train, val, n - train - val])
}

/// Generates `instances_per_family` instances of each family, split by index
/// blocks within each family: first train, then validation, then test.
pub fn make_suite(
    families: &[FunctionFamily],
    dimension: usize,
    instances_per_family: usize,
    split_ratio: [f64; 3],
    master_seed: u64,
) -> Result<TaskSuite> {
    if dimension == 0 {
        return Err(invalid("dimension must be positive"));
    }
    if families.is_empty() {
        return Err(invalid("family list is empty"));
    }
    if instances_per_family < 3 {
        return Err(invalid("at least 3 instances per family are required"));
    }
    let [n_train, n_val, _] = split_sizes(instances_per_family, split_ratio)?;

    let mut used = std::collections::HashSet::new();
    let mut tasks = Vec::with_capacity(families.len() * instances_per_family);
    let mut splits = Vec::with_capacity(tasks.capacity());
    for (fi, &family) in families.iter().enumerate() {
        for i in 0..instances_per_family {
            let mut instance_seed =
                seed::derive(master_seed, &[stream::SUITE, fi as u64, family as u64, i as u64]);
            while !used.insert(instance_seed) {
                instance_seed = seed::derive(instance_seed, &[stream::SUITE]);
            }
            let id = format!("{}-d{}-i{:04}", family.name(), dimension, i);
            tasks.push(Task::generate(id, family, dimension, instance_seed)?);
            splits.push(if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            });
        }
    }
    Ok(TaskSuite { tasks, splits })
}
