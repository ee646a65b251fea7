//! Seeded synthetic instances: uniform source masses, normal target masses and
//! a uniform cost matrix.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UotError};
use crate::problem::{CostMatrix, Measure, UotProblem};

/// Smallest raw target weight kept after clipping the normal draws, relative to the mean.
const TARGET_CLIP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n: usize,
    /// Total source mass α.
    pub alpha: f64,
    /// Total target mass β.
    pub beta: f64,
    pub tau: f64,
    /// Raw source weights are uniform on this interval before rescaling.
    pub a_range: (f64, f64),
    /// Raw target weights are normal with this mean and standard deviation.
    pub b_mean: f64,
    pub b_sigma: f64,
    pub cost_range: (f64, f64),
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n: 200,
            alpha: 4.0,
            beta: 5.0,
            tau: 55.0,
            a_range: (0.1, 1.0),
            b_mean: 1.0,
            b_sigma: 0.1,
            cost_range: (0.1, 1.0),
        }
    }
}

impl ExperimentConfig {
    /// Instance with both measures on the probability simplex.
    pub fn simplex(seed: u64, n: usize, tau: f64) -> Self {
        Self {
            seed,
            n,
            alpha: 1.0,
            beta: 1.0,
            tau,
            ..Self::default()
        }
    }
}

fn rescale(raw: Vec<f64>, total: f64) -> Vec<f64> {
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x * total / sum).collect()
}

pub fn generate_synthetic(config: &ExperimentConfig) -> Result<UotProblem> {
    if config.n == 0 {
        return Err(UotError::InvalidParameter("n must be at least 1".into()));
    }
    for (name, x) in [("alpha", config.alpha), ("beta", config.beta)] {
        if !(x.is_finite() && x > 0.0) {
            return Err(UotError::InvalidParameter(format!("{name} must be positive, got {x}")));
        }
    }
    let (a_lo, a_hi) = config.a_range;
    let (c_lo, c_hi) = config.cost_range;
    if !(a_lo > 0.0 && a_hi >= a_lo && c_lo >= 0.0 && c_hi >= c_lo) {
        return Err(UotError::InvalidParameter(
            "ranges must be ordered, with a positive lower bound for the source".into(),
        ));
    }
    if !(config.b_mean > 0.0 && config.b_sigma >= 0.0) {
        return Err(UotError::InvalidParameter("target mean must be positive".into()));
    }
    let n = config.n;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let a_raw: Vec<f64> = if a_hi > a_lo {
        let dist = Uniform::new(a_lo, a_hi).map_err(|e| UotError::InvalidParameter(e.to_string()))?;
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    } else {
        vec![a_lo; n]
    };
    let normal = Normal::new(config.b_mean, config.b_sigma)
        .map_err(|e| UotError::InvalidParameter(e.to_string()))?;
    let floor = TARGET_CLIP * config.b_mean;
    let b_raw: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng).max(floor)).collect();
    let cost = Array2::from_shape_fn((n, n), |_| {
        if c_hi > c_lo {
            rng.random_range(c_lo..c_hi)
        } else {
            c_lo
        }
    });
    UotProblem::new(
        CostMatrix::new(cost)?,
        Measure::new(rescale(a_raw, config.alpha))?,
        Measure::new(rescale(b_raw, config.beta))?,
        config.tau,
    )
}
