//! The additive time change `Γ(t) = ∫₀ᵗ vol(u)⁻² du` and its inverse `A`.
//!
//! Both representations are piecewise linear in `(t, Γ)`: exact for chain
//! paths (slope `y⁻²` on each segment) and trapezoidal for sampled diffusion
//! paths. Each segment stores the reciprocal slope so that `Γ` and `A` are
//! evaluated by one division or multiplication from the segment start.

use crate::chain::{ChainPath, VolStates};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimeChangeError {
    #[error("time {time} lies beyond the covered horizon {horizon}")]
    HorizonExceeded { time: f64, horizon: f64 },
    #[error("changed time {value} lies outside the covered range [0, {limit}]")]
    RangeExceeded { value: f64, limit: f64 },
    #[error("volatility sample {index} is not positive ({value})")]
    NonpositiveSample { index: usize, value: f64 },
    #[error("grid step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("at least two samples are needed")]
    TooFewSamples,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeChangeKind {
    ExactPiecewise,
    SampledGrid,
}

/// Evaluable monotone time change `Γ` with inverse `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeChangePath {
    kind: TimeChangeKind,
    knots: Vec<f64>,
    gamma: Vec<f64>,
    // dt/dΓ on [knots[k], knots[k+1])
    inverse_slope: Vec<f64>,
    horizon: f64,
    max_slope: f64,
}

/// Exact `Γ` of a chain path: slope `y_i⁻²` while the chain sits in state `i`.
pub fn gamma_from_chain(path: &ChainPath, states: &VolStates) -> TimeChangePath {
    let mut knots = Vec::with_capacity(path.jump_times().len());
    let mut gamma = Vec::with_capacity(knots.capacity());
    let mut inverse_slope = Vec::with_capacity(knots.capacity());
    let mut acc = 0.0;
    let mut max_slope: f64 = 0.0;
    for (start, end, s) in path.segments() {
        let y2 = states.get(s).powi(2);
        knots.push(start);
        gamma.push(acc);
        inverse_slope.push(y2);
        max_slope = max_slope.max(1.0 / y2);
        if end.is_finite() {
            acc += (end - start) / y2;
        }
    }
    TimeChangePath {
        kind: TimeChangeKind::ExactPiecewise,
        knots,
        gamma,
        inverse_slope,
        horizon: path.horizon(),
        max_slope,
    }
}

/// Trapezoidal `Γ` of a positive path sampled on a uniform grid of step `dt`.
pub fn gamma_from_samples(xi_values: &[f64], dt: f64) -> Result<TimeChangePath, TimeChangeError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(TimeChangeError::BadStep(dt));
    }
    if xi_values.len() < 2 {
        return Err(TimeChangeError::TooFewSamples);
    }
    if let Some((index, &value)) = xi_values.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(TimeChangeError::NonpositiveSample { index, value });
    }
    let n = xi_values.len() - 1;
    let inv_sq: Vec<f64> = xi_values.iter().map(|x| 1.0 / (x * x)).collect();
    let max_slope = inv_sq.iter().copied().fold(0.0, f64::max);
    let mut knots = Vec::with_capacity(n);
    let mut gamma = Vec::with_capacity(n);
    let mut inverse_slope = Vec::with_capacity(n);
    let mut acc = 0.0;
    for k in 0..n {
        let increment = 0.5 * dt * (inv_sq[k] + inv_sq[k + 1]);
        knots.push(k as f64 * dt);
        gamma.push(acc);
        inverse_slope.push(dt / increment);
        acc += increment;
    }
    Ok(TimeChangePath {
        kind: TimeChangeKind::SampledGrid,
        knots,
        gamma,
        inverse_slope,
        horizon: n as f64 * dt,
        max_slope,
    })
}

impl TimeChangePath {
    pub fn kind(&self) -> TimeChangeKind {
        self.kind
    }

    /// Last time at which `Γ` may be evaluated.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Largest value of `vol⁻²` seen on the path.
    pub fn max_slope(&self) -> f64 {
        self.max_slope
    }

    /// `Γ(horizon)`, the end of the range on which `A` is defined.
    pub fn range_end(&self) -> f64 {
        if self.horizon.is_infinite() {
            return f64::INFINITY;
        }
        let k = self.knots.len() - 1;
        self.gamma[k] + (self.horizon - self.knots[k]) / self.inverse_slope[k]
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.knots
    }

    /// `Γ(t)`.
    pub fn gamma(&self, t: f64) -> Result<f64, TimeChangeError> {
        if !(t >= 0.0 && t <= self.horizon) {
            return Err(TimeChangeError::HorizonExceeded {
                time: t,
                horizon: self.horizon,
            });
        }
        let k = self.knots.partition_point(|&s| s <= t) - 1;
        Ok(self.gamma[k] + (t - self.knots[k]) / self.inverse_slope[k])
    }

    /// `A(s) = Γ⁻¹(s)`.
    pub fn inverse(&self, s: f64) -> Result<f64, TimeChangeError> {
        let limit = self.range_end();
        if !(s >= 0.0 && s <= limit) {
            return Err(TimeChangeError::RangeExceeded { value: s, limit });
        }
        let k = self.gamma.partition_point(|&g| g <= s) - 1;
        let a = self.knots[k] + (s - self.gamma[k]) * self.inverse_slope[k];
        Ok(a.min(self.horizon))
    }

    /// Round-trip bound `|Γ(A(s)) − s|` guaranteed for this representation.
    pub fn round_trip_tolerance(&self, dt: f64) -> f64 {
        match self.kind {
            TimeChangeKind::ExactPiecewise => 0.0,
            TimeChangeKind::SampledGrid => dt * self.max_slope,
        }
    }
}

/// Outcome of the pointwise check `Γ_lower(t) ≥ Γ_upper(t)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub holds: bool,
    pub points_checked: usize,
    /// Largest `Γ_upper(t) − Γ_lower(t)`; zero or negative when the ordering holds.
    pub max_violation: f64,
    pub worst_time: Option<f64>,
}

/// Compares the time change of the lower-volatility path against the upper
/// one on `grid`. Violations are reported, not raised.
pub fn compare(
    lower_tc: &TimeChangePath,
    upper_tc: &TimeChangePath,
    grid: &[f64],
) -> Result<ComparisonReport, TimeChangeError> {
    let mut max_violation = f64::NEG_INFINITY;
    let mut worst_time = None;
    for &t in grid {
        let gap = upper_tc.gamma(t)? - lower_tc.gamma(t)?;
        if gap > max_violation {
            max_violation = gap;
            worst_time = Some(t);
        }
    }
    if grid.is_empty() {
        max_violation = 0.0;
    }
    Ok(ComparisonReport {
        holds: max_violation <= 0.0,
        points_checked: grid.len(),
        max_violation,
        worst_time,
    })
}
