//! Simulation estimators and verification harnesses.
//!
//! Every replication draws from its own random streams (see [`crate::rng`]),
//! replications run in parallel and are collected in index order, and sums
//! use pairwise summation. Results are therefore bit-identical for any
//! thread count.

mod continuity;
mod coupled;
mod estimator;
mod lsm;
mod passage;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::chain::ChainError;
use crate::models::ModelError;
use crate::stopping::StoppingError;
use crate::timechange::TimeChangeError;

pub use continuity::{probe_continuity, ApproachDirection, ConvergenceReport, LevelSchedule};
pub use coupled::{
    verify_monotonicity_coupled, verify_monotonicity_diffusion, Counterexample, PairedReport,
};
pub use estimator::{estimate_value_timechanged, StoppingRule, ValueEstimate, VolStart};
pub use lsm::{ls_lower_bound_finite_t, BasisSpec};

/// Two-sided 99% normal quantile.
pub const Z_99: f64 = 2.575_829_303_548_900_4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error("invalid Monte Carlo configuration: {0}")]
    BadConfig(String),
    #[error("{fraction} of paths reached the horizon cap; truncation bias bound {bias_bound:e} exceeds the standard error")]
    TruncationDominates { fraction: f64, bias_bound: f64 },
    #[error("path {path} stops where the gain is negative ({gain})")]
    RuleStopsAtNegativeGain { path: usize, gain: f64 },
    #[error("regression at date {date}, state {state} is singular")]
    RegressionSingular { date: usize, state: usize },
    #[error("rule does not fit the model: {0}")]
    UnsupportedRule(String),
    #[error("generator is not skip-free: entry ({row}, {col}) is nonzero")]
    NotSkipFree { row: usize, col: usize },
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    TimeChange(#[from] TimeChangeError),
    #[error(transparent)]
    Stopping(#[from] StoppingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McConfig {
    pub n_paths: usize,
    /// Step of gridded simulations (diffusion volatility).
    pub dt: f64,
    /// Truncation time for perpetual problems, in original time.
    pub horizon_cap: f64,
    pub seed: u64,
    /// Mirror the Brownian increments of gridded simulations.
    pub antithetic: bool,
}

impl McConfig {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self {
            n_paths,
            dt: 1e-3,
            horizon_cap: 400.0,
            seed,
            antithetic: false,
        }
    }

    pub fn validate(&self) -> Result<(), McError> {
        if self.n_paths < 2 {
            return Err(McError::BadConfig(format!(
                "n_paths must be at least 2, got {}",
                self.n_paths
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(McError::BadConfig(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.horizon_cap > 0.0) {
            return Err(McError::BadConfig(format!(
                "horizon_cap must be positive, got {}",
                self.horizon_cap
            )));
        }
        Ok(())
    }
}

/// Sample mean with its standard error and a 99% normal interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
    pub ci99: [f64; 2],
}

impl Estimate {
    /// A deterministic value observed `n` times.
    pub fn exact(value: f64, n: usize) -> Self {
        Self {
            mean: value,
            stderr: 0.0,
            n,
            ci99: [value, value],
        }
    }

    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        assert!(n > 0, "estimate of an empty sample");
        if samples.iter().all(|&s| s == samples[0]) {
            return Self::exact(samples[0], n);
        }
        let mean = pairwise_sum(samples) / n as f64;
        let squares: Vec<f64> = samples.iter().map(|s| (s - mean).powi(2)).collect();
        let variance = if n > 1 {
            pairwise_sum(&squares) / (n - 1) as f64
        } else {
            0.0
        };
        let stderr = (variance / n as f64).sqrt();
        Self {
            mean,
            stderr,
            n,
            ci99: [mean - Z_99 * stderr, mean + Z_99 * stderr],
        }
    }

    /// Whether `value` lies within `k` standard errors of the mean.
    pub fn within(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.stderr
    }
}

/// Pairwise (cascade) summation; the result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Runs `f` for every replication index and returns the results in index order.
pub(crate) fn replicate<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}
