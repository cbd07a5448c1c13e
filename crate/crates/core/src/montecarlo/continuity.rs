//! Convergence of the time change as the initial volatility approaches a limit.
//!
//! Levels `y_n = y0 (1 ± ε_n)` with `ε_n = ε_1 ρ^{n−1}` are simulated with
//! the same driving noise, so the ordering of the `ξ` paths, and hence of
//! `Γ^n(t)`, is pathwise.

use serde::Serialize;

use super::{pairwise_sum, replicate, McConfig, McError};
use crate::models::{simulate_xi_with_increments, xi_system, DiffusionVolModel};
use crate::rng::{stream, Lane};
use crate::timechange::gamma_from_samples;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApproachDirection {
    /// `y_n ↓ y0`.
    FromAbove,
    /// `y_n ↑ y0`.
    FromBelow,
}

/// Relative offsets `ε_n = first · ratio^{n−1}`, `n = 1..=levels`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelSchedule {
    pub levels: usize,
    pub first: f64,
    pub ratio: f64,
    /// Required `max_paths |Γ^N − Γ^0| / Γ^0` at the closest level.
    pub tolerance: f64,
}

impl Default for LevelSchedule {
    fn default() -> Self {
        Self {
            levels: 5,
            first: 0.02,
            ratio: 0.2,
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub y0: f64,
    pub direction: ApproachDirection,
    pub t_probe: f64,
    pub levels: Vec<f64>,
    /// Path average of `Γ^n(t_probe)` per level.
    pub mean_gamma: Vec<f64>,
    pub mean_gamma_limit: f64,
    /// Per level, the largest `|Γ^n − Γ^0| / Γ^0` over paths.
    pub max_relative_gap: Vec<f64>,
    /// Paths on which `Γ^n(t_probe)` is not monotone in `n` towards `Γ^0`.
    pub monotonicity_violations: usize,
    pub tolerance: f64,
    pub converged: bool,
    pub paths: usize,
}

impl ConvergenceReport {
    pub fn passes(&self) -> bool {
        self.monotonicity_violations == 0 && self.converged
    }
}

pub fn probe_continuity(
    model: &DiffusionVolModel,
    y0: f64,
    direction: ApproachDirection,
    schedule: &LevelSchedule,
    t_probe: f64,
    cfg: &McConfig,
) -> Result<ConvergenceReport, McError> {
    cfg.validate()?;
    if !(y0 > 0.0) {
        return Err(McError::BadConfig(format!("y0 must be positive, got {y0}")));
    }
    if schedule.levels == 0
        || !(schedule.first >= 0.0 && schedule.first < 1.0)
        || !(schedule.ratio > 0.0)
    {
        return Err(McError::BadConfig(
            "level schedule needs levels >= 1, 0 <= first < 1, ratio > 0".into(),
        ));
    }
    if !(t_probe > 0.0) {
        return Err(McError::BadConfig(format!(
            "t_probe must be positive, got {t_probe}"
        )));
    }
    let sign = match direction {
        ApproachDirection::FromAbove => 1.0,
        ApproachDirection::FromBelow => -1.0,
    };
    let levels: Vec<f64> = (0..schedule.levels)
        .map(|n| y0 * (1.0 + sign * schedule.first * schedule.ratio.powi(n as i32)))
        .collect();
    let system = xi_system(model);
    let steps = ((t_probe / cfg.dt).round() as usize).max(1);
    let dt = t_probe / steps as f64;
    let per_path = replicate(cfg.n_paths, |i| -> Result<Vec<f64>, McError> {
        let mut rng = stream(cfg.seed, Lane::Volatility, i as u64);
        let normal = rand_distr::StandardNormal;
        let sd = dt.sqrt();
        let increments: Vec<f64> = (0..steps)
            .map(|_| sd * rand::Rng::sample::<f64, _>(&mut rng, normal))
            .collect();
        // index 0 is the limit level y0
        std::iter::once(y0)
            .chain(levels.iter().copied())
            .map(|y| {
                let xi = simulate_xi_with_increments(&system, y, dt, &increments)?;
                Ok(gamma_from_samples(&xi.values, dt)?.gamma(t_probe.min(steps as f64 * dt))?)
            })
            .collect()
    });
    let per_path = per_path.into_iter().collect::<Result<Vec<_>, _>>()?;

    let column = |k: usize| -> Vec<f64> { per_path.iter().map(|g| g[k]).collect() };
    let mean = |k: usize| pairwise_sum(&column(k)) / per_path.len() as f64;
    let mean_gamma: Vec<f64> = (1..=levels.len()).map(mean).collect();
    let max_relative_gap: Vec<f64> = (1..=levels.len())
        .map(|k| {
            per_path
                .iter()
                .map(|g| (g[k] - g[0]).abs() / g[0])
                .fold(0.0, f64::max)
        })
        .collect();
    // from above: Γ^1 ≤ Γ^2 ≤ … ≤ Γ^0; from below the reverse
    let monotonicity_violations = per_path
        .iter()
        .filter(|g| {
            let seq: Vec<f64> = g[1..]
                .iter()
                .chain(std::iter::once(&g[0]))
                .copied()
                .collect();
            seq.windows(2).any(|w| sign * (w[1] - w[0]) < 0.0)
        })
        .count();
    let converged = max_relative_gap
        .last()
        .is_some_and(|&gap| gap < schedule.tolerance);
    Ok(ConvergenceReport {
        y0,
        direction,
        t_probe,
        levels,
        mean_gamma,
        mean_gamma_limit: mean(0),
        max_relative_gap,
        monotonicity_violations,
        tolerance: schedule.tolerance,
        converged,
        paths: per_path.len(),
    })
}
