//! Value functions and exercise thresholds for perpetual and finite-horizon
//! stopping problems under chain-modulated volatility.
//!
//! Solvers work on a uniform grid in `log x` and need `a(x) = x`. The
//! asset moves between neighbouring nodes at rates matching the local
//! Gaussian increment, the volatility state switches at the generator
//! rates, and `v = max(g, continuation)` is solved by policy iteration.

mod search;
mod solver;

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::chain::{ChainError, ChainModel};
use crate::models::DiffusionVolModel;
use solver::{Discretization, Workspace};

pub use search::{ordered_threshold_search, SearchMode, SearchOutcome};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StoppingError {
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("unsupported model: {0}")]
    UnsupportedModel(&'static str),
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error(
        "stopping boundary of state {state} lies within two cells of the grid edge (index {index})"
    )]
    GridTooCoarse { state: usize, index: usize },
    #[error("state {state} has an empty stopping set on the grid")]
    NoContact { state: usize },
    #[error("generator is not skip-free: entry ({row}, {col}) is nonzero")]
    NotSkipFree { row: usize, col: usize },
    #[error("gain declared {property} but fails at x = {x}")]
    GainPropertyViolated { property: &'static str, x: f64 },
    #[error("invalid grid: {0}")]
    BadGrid(String),
    #[error("invalid problem: {0}")]
    BadProblem(String),
    #[error("{count} states give {count}! orderings, above the exhaustive limit")]
    TooManyOrderings { count: usize },
}

/// Boundary value imposed at a grid edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeCondition {
    /// `v = g` (stop at the edge).
    Exercise,
    /// `v = c`.
    Value(f64),
}

/// Declared shape of a gain function, spot-checked on construction of a problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GainProperties {
    pub decreasing: bool,
    pub bounded_below: bool,
    pub continuous: bool,
    pub nonnegative: bool,
    pub bounded: bool,
}

#[derive(Clone)]
pub struct GainFunction {
    name: String,
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    properties: GainProperties,
    low_edge: EdgeCondition,
    high_edge: EdgeCondition,
    strike: Option<f64>,
}

impl fmt::Debug for GainFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GainFunction")
            .field("name", &self.name)
            .field("properties", &self.properties)
            .field("strike", &self.strike)
            .finish_non_exhaustive()
    }
}

impl GainFunction {
    /// `g(x) = max(0, K − x)`.
    pub fn put(strike: f64) -> Result<Self, StoppingError> {
        if !(strike > 0.0 && strike.is_finite()) {
            return Err(StoppingError::BadProblem(format!(
                "strike must be positive, got {strike}"
            )));
        }
        Ok(Self {
            name: "put".into(),
            eval: Arc::new(move |x| (strike - x).max(0.0)),
            properties: GainProperties {
                decreasing: true,
                bounded_below: true,
                continuous: true,
                nonnegative: true,
                bounded: true,
            },
            low_edge: EdgeCondition::Exercise,
            high_edge: EdgeCondition::Value(0.0),
            strike: Some(strike),
        })
    }

    /// `g(x) = c`. For `c < 0` the edges are held at 0, the value of never stopping.
    pub fn constant(c: f64) -> Self {
        let edge = if c < 0.0 {
            EdgeCondition::Value(0.0)
        } else {
            EdgeCondition::Exercise
        };
        Self {
            name: "constant".into(),
            eval: Arc::new(move |_| c),
            properties: GainProperties {
                decreasing: true,
                bounded_below: true,
                continuous: true,
                nonnegative: c >= 0.0,
                bounded: true,
            },
            low_edge: edge,
            high_edge: edge,
            strike: None,
        }
    }

    pub fn custom(
        name: impl Into<String>,
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
        properties: GainProperties,
        low_edge: EdgeCondition,
        high_edge: EdgeCondition,
    ) -> Self {
        Self {
            name: name.into(),
            eval: Arc::new(eval),
            properties,
            low_edge,
            high_edge,
            strike: None,
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn properties(&self) -> GainProperties {
        self.properties
    }

    pub fn strike(&self) -> Option<f64> {
        self.strike
    }

    pub fn low_edge(&self) -> EdgeCondition {
        self.low_edge
    }

    pub fn high_edge(&self) -> EdgeCondition {
        self.high_edge
    }

    /// Spot-checks the declared properties on `probe` (sorted increasingly).
    pub fn check_properties(&self, probe: &[f64]) -> Result<(), StoppingError> {
        let values: Vec<f64> = probe.iter().map(|&x| self.value(x)).collect();
        for (k, (&x, &g)) in probe.iter().zip(&values).enumerate() {
            if !g.is_finite() {
                return Err(StoppingError::GainPropertyViolated {
                    property: "finite",
                    x,
                });
            }
            if self.properties.nonnegative && g < 0.0 {
                return Err(StoppingError::GainPropertyViolated {
                    property: "nonnegative",
                    x,
                });
            }
            if self.properties.decreasing && k > 0 && values[k - 1] < g {
                return Err(StoppingError::GainPropertyViolated {
                    property: "decreasing",
                    x,
                });
            }
        }
        Ok(())
    }
}

/// Objective: `e^{−qτ} g(X_τ)` (plain) or `e^{−rτ} g(e^{rτ} X_τ)` (pricing).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemForm {
    Plain,
    Pricing,
}

#[derive(Debug, Clone)]
pub enum VolatilityModel {
    Chain(ChainModel),
    Diffusion(DiffusionVolModel),
}

impl VolatilityModel {
    pub fn chain(&self) -> Option<&ChainModel> {
        match self {
            Self::Chain(c) => Some(c),
            Self::Diffusion(_) => None,
        }
    }
}

impl From<ChainModel> for VolatilityModel {
    fn from(model: ChainModel) -> Self {
        Self::Chain(model)
    }
}

impl From<crate::chain::SkipFreeChainModel> for VolatilityModel {
    fn from(model: crate::chain::SkipFreeChainModel) -> Self {
        Self::Chain(model.into_inner())
    }
}

impl From<DiffusionVolModel> for VolatilityModel {
    fn from(model: DiffusionVolModel) -> Self {
        Self::Diffusion(model)
    }
}

#[derive(Debug, Clone)]
pub struct StoppingProblem {
    model: VolatilityModel,
    gain: GainFunction,
    rate: f64,
    horizon: f64,
    form: ProblemForm,
}

impl StoppingProblem {
    /// `horizon` may be `f64::INFINITY` for the perpetual problem.
    pub fn new(
        model: impl Into<VolatilityModel>,
        gain: GainFunction,
        rate: f64,
        horizon: f64,
        form: ProblemForm,
    ) -> Result<Self, StoppingError> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(StoppingError::BadProblem(format!(
                "rate must be positive, got {rate}"
            )));
        }
        if !(horizon >= 0.0) {
            return Err(StoppingError::BadProblem(format!(
                "horizon must be nonnegative, got {horizon}"
            )));
        }
        if form == ProblemForm::Pricing && !gain.properties.decreasing {
            return Err(StoppingError::BadProblem(
                "pricing form needs a decreasing gain".into(),
            ));
        }
        let centre = gain.strike.unwrap_or(1.0);
        gain.check_properties(&LogGrid::new(centre * 1e-3, centre * 1e3, 241)?.points)?;
        Ok(Self {
            model: model.into(),
            gain,
            rate,
            horizon,
            form,
        })
    }

    pub fn model(&self) -> &VolatilityModel {
        &self.model
    }

    pub fn gain(&self) -> &GainFunction {
        &self.gain
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn form(&self) -> ProblemForm {
        self.form
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self, StoppingError> {
        Self::new(
            self.model.clone(),
            self.gain.clone(),
            self.rate,
            horizon,
            self.form,
        )
    }

    /// Integrability of the discounted gain holds automatically for bounded gains.
    pub fn integrability_satisfied(&self) -> bool {
        self.gain.properties.bounded
    }

    /// Signed gains need the user's word that stopping at negative gain is never needed.
    pub fn needs_nonnegative_stopping_assertion(&self) -> bool {
        !self.gain.properties.nonnegative
    }
}

/// Uniformly spaced grid in `log x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogGrid {
    points: Vec<f64>,
    log_step: f64,
}

impl LogGrid {
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self, StoppingError> {
        if !(x_min > 0.0 && x_max > x_min && x_max.is_finite()) {
            return Err(StoppingError::BadGrid(format!(
                "need 0 < x_min < x_max, got [{x_min}, {x_max}]"
            )));
        }
        if n < 7 {
            return Err(StoppingError::BadGrid(format!(
                "need at least 7 points, got {n}"
            )));
        }
        let log_step = (x_max / x_min).ln() / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n)
            .map(|k| x_min * (k as f64 * log_step).exp())
            .collect();
        points[n - 1] = x_max;
        Ok(Self { points, log_step })
    }

    /// `n` points spanning `[K·10⁻³, K·10³]`.
    pub fn around_strike(strike: f64, n: usize) -> Result<Self, StoppingError> {
        Self::new(strike * 1e-3, strike * 1e3, n)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn log_step(&self) -> f64 {
        self.log_step
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iters: usize,
    /// Threshold contact tolerance; `None` means `10 · tol`.
    pub contact_tol: Option<f64>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 500,
            contact_tol: None,
        }
    }
}

impl SolverSettings {
    pub fn contact_tol(&self) -> f64 {
        self.contact_tol.unwrap_or(10.0 * self.tol)
    }
}

/// Values `v(x_j, y_i)` on a log grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueSurface {
    pub x: Vec<f64>,
    pub states: Vec<f64>,
    /// `values[i][j] = v(x_j, y_i)`.
    pub values: Vec<Vec<f64>>,
    pub gain: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub tol: f64,
}

impl ValueSurface {
    /// Surface from given values, for checks on externally produced data.
    pub fn from_values(
        x: Vec<f64>,
        states: Vec<f64>,
        values: Vec<Vec<f64>>,
        gain: Vec<f64>,
        tol: f64,
    ) -> Self {
        Self {
            x,
            states,
            values,
            gain,
            iterations: 0,
            residual: 0.0,
            tol,
        }
    }

    pub fn value(&self, state: usize, index: usize) -> f64 {
        self.values[state][index]
    }

    /// Linear interpolation in `log x` of the state-`i` values.
    pub fn interpolate(&self, state: usize, x: f64) -> Option<f64> {
        let xs = &self.x;
        if !(x >= xs[0] && x <= xs[xs.len() - 1]) {
            return None;
        }
        let k = xs.partition_point(|&p| p <= x).clamp(1, xs.len() - 1);
        let (x0, x1) = (xs[k - 1].ln(), xs[k].ln());
        let w = (x.ln() - x0) / (x1 - x0);
        let v = &self.values[state];
        Some(v[k - 1] + w * (v[k] - v[k - 1]))
    }

    /// Largest `g − v` over the surface; at most `tol` on a solved surface.
    pub fn max_obstacle_violation(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|row| row.iter().zip(&self.gain).map(|(v, g)| g - v))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn from_flat(
        disc: &Discretization,
        x: &[f64],
        states: &[f64],
        v: &[f64],
        iterations: usize,
        residual: f64,
        tol: f64,
    ) -> Self {
        let values = v.chunks(disc.n).map(<[f64]>::to_vec).collect();
        Self {
            x: x.to_vec(),
            states: states.to_vec(),
            values,
            gain: disc.gain.clone(),
            iterations,
            residual,
            tol,
        }
    }
}

/// Per-state exercise thresholds in asset units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdVector {
    pub levels: Vec<f64>,
    /// Grid index of each threshold.
    pub indices: Vec<usize>,
    pub contact_tol: f64,
}

impl ThresholdVector {
    /// True when `b` decreases in the state index, allowing ties within one grid cell.
    pub fn is_decreasing_within_cell(&self) -> bool {
        self.indices.windows(2).all(|w| w[1] <= w[0])
    }
}

fn chain_of(problem: &StoppingProblem) -> Result<&ChainModel, StoppingError> {
    problem.model.chain().ok_or(StoppingError::UnsupportedModel(
        "grid solvers need a chain volatility model",
    ))
}

fn check_stop_sets(stop: &[bool], n: usize) -> Result<(), StoppingError> {
    for (state, flags) in stop.chunks(n).enumerate() {
        let last = (1..n - 1).rev().find(|&j| flags[j]);
        let Some(last) = last else { continue };
        if (1..=last).any(|j| !flags[j]) {
            return Err(StoppingError::BadProblem(format!(
                "stopping set of state {state} is not down-connected"
            )));
        }
        if last <= 2 || last >= n - 3 {
            return Err(StoppingError::GridTooCoarse { state, index: last });
        }
    }
    Ok(())
}

/// Solves the perpetual problem `v = max(g, Cv)` on `grid`.
pub fn solve_value_iteration(
    problem: &StoppingProblem,
    grid: &LogGrid,
    settings: &SolverSettings,
) -> Result<ValueSurface, StoppingError> {
    if problem.horizon.is_finite() {
        return Err(StoppingError::BadProblem(
            "finite horizon: use finite_horizon_value".into(),
        ));
    }
    let chain = chain_of(problem)?;
    let disc = Discretization::new(problem, grid)?;
    let mut ws = Workspace::new(disc.m, disc.n);
    let mut stop = vec![false; disc.m * disc.n];
    let (v, iterations, residual) = disc.policy_iteration(
        &mut stop,
        0.0,
        None,
        settings.tol,
        settings.max_iters,
        &mut ws,
    )?;
    check_stop_sets(&stop, disc.n)?;
    Ok(ValueSurface::from_flat(
        &disc,
        grid.points(),
        chain.states().as_slice(),
        &v,
        iterations,
        residual,
        settings.tol,
    ))
}

/// Value at `t = 0` of the horizon-`T` problem by implicit backward induction
/// over `t_steps` steps, each step an obstacle problem.
pub fn finite_horizon_value(
    problem: &StoppingProblem,
    grid: &LogGrid,
    t_steps: usize,
    settings: &SolverSettings,
) -> Result<ValueSurface, StoppingError> {
    let horizon = problem.horizon;
    if !horizon.is_finite() {
        return Err(StoppingError::BadProblem(
            "perpetual problem: use solve_value_iteration".into(),
        ));
    }
    if t_steps == 0 {
        return Err(StoppingError::BadProblem("t_steps must be positive".into()));
    }
    let chain = chain_of(problem)?;
    let disc = Discretization::new(problem, grid)?;
    let (m, n) = (disc.m, disc.n);
    let mut v: Vec<f64> = (0..m).flat_map(|_| disc.gain.iter().copied()).collect();
    if horizon == 0.0 {
        return Ok(ValueSurface::from_flat(
            &disc,
            grid.points(),
            chain.states().as_slice(),
            &v,
            0,
            0.0,
            settings.tol,
        ));
    }
    let inv_dt = t_steps as f64 / horizon;
    let mut ws = Workspace::new(m, n);
    let mut stop: Vec<bool> = (0..m * n).map(|k| disc.gain[k % n] > 0.0).collect();
    let mut iterations = 0;
    let mut residual: f64 = 0.0;
    for _ in 0..t_steps {
        let (next, its, res) = disc.policy_iteration(
            &mut stop,
            inv_dt,
            Some(&v),
            settings.tol,
            settings.max_iters,
            &mut ws,
        )?;
        iterations += its;
        residual = residual.max(res);
        v = next;
    }
    Ok(ValueSurface::from_flat(
        &disc,
        grid.points(),
        chain.states().as_slice(),
        &v,
        iterations,
        residual,
        settings.tol,
    ))
}

/// `b[i]` is the largest grid level of the contact run starting at the low
/// edge: consecutive nodes with `g > 0` and `v − g ≤ contact_tol`.
pub fn extract_thresholds(
    surface: &ValueSurface,
    contact_tol: Option<f64>,
) -> Result<ThresholdVector, StoppingError> {
    let contact_tol = contact_tol.unwrap_or(10.0 * surface.tol);
    let n = surface.x.len();
    let mut levels = Vec::with_capacity(surface.values.len());
    let mut indices = Vec::with_capacity(surface.values.len());
    for (state, row) in surface.values.iter().enumerate() {
        let in_contact =
            |j: usize| surface.gain[j] > 0.0 && row[j] - surface.gain[j] <= contact_tol;
        if n < 3 || !in_contact(1) {
            return Err(StoppingError::NoContact { state });
        }
        let mut last = 1;
        while last + 1 < n - 1 && in_contact(last + 1) {
            last += 1;
        }
        levels.push(surface.x[last]);
        indices.push(last);
    }
    Ok(ThresholdVector {
        levels,
        indices,
        contact_tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub passes: bool,
    /// Largest `v[i][j] − v[i+1][j]`.
    pub max_violation: f64,
    /// `(state, grid index)` of the largest violation.
    pub worst: Option<(usize, usize)>,
    pub worst_x: Option<f64>,
    pub tol: f64,
    pub states_compared: usize,
}

/// Checks `v(x, y_i) ≤ v(x, y_{i+1})` at every grid point.
pub fn check_monotone_surface(surface: &ValueSurface, tol: f64) -> MonotonicityReport {
    let mut max_violation = 0.0;
    let mut worst = None;
    for (i, pair) in surface.values.windows(2).enumerate() {
        for (j, (lo, hi)) in pair[0].iter().zip(&pair[1]).enumerate() {
            let gap = lo - hi;
            if worst.is_none() || gap > max_violation {
                max_violation = gap;
                worst = Some((i, j));
            }
        }
    }
    MonotonicityReport {
        passes: max_violation <= tol,
        max_violation,
        worst,
        worst_x: worst.map(|(_, j)| surface.x[j]),
        tol,
        states_compared: surface.values.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{GeneratorMatrix, VolStates};

    fn one_state(sigma: f64) -> ChainModel {
        ChainModel::new(
            VolStates::new(vec![sigma]).unwrap(),
            GeneratorMatrix::zeros(1),
        )
        .unwrap()
    }

    #[test]
    fn put_gain_and_checks() {
        let g = GainFunction::put(1.0).unwrap();
        assert_eq!(g.value(0.25), 0.75);
        assert_eq!(g.value(3.0), 0.0);
        assert!(GainFunction::put(0.0).is_err());
        let bad = GainFunction::custom(
            "rising",
            |x| x,
            GainProperties {
                decreasing: true,
                bounded_below: true,
                continuous: true,
                nonnegative: true,
                bounded: false,
            },
            EdgeCondition::Exercise,
            EdgeCondition::Exercise,
        );
        assert!(matches!(
            StoppingProblem::new(one_state(0.2), bad, 0.05, f64::INFINITY, ProblemForm::Plain),
            Err(StoppingError::GainPropertyViolated {
                property: "decreasing",
                ..
            })
        ));
    }

    #[test]
    fn problem_invariants() {
        let g = GainFunction::put(1.0).unwrap();
        assert!(StoppingProblem::new(
            one_state(0.2),
            g.clone(),
            0.0,
            f64::INFINITY,
            ProblemForm::Pricing
        )
        .is_err());
        let p = StoppingProblem::new(one_state(0.2), g, 0.05, f64::INFINITY, ProblemForm::Pricing)
            .unwrap();
        assert!(p.integrability_satisfied());
        assert!(!p.needs_nonnegative_stopping_assertion());
    }

    #[test]
    fn grid_spans_requested_range() {
        let grid = LogGrid::around_strike(2.0, 101).unwrap();
        assert_eq!(grid.points()[0], 2e-3);
        assert_eq!(grid.points()[100], 2e3);
        assert!((grid.points()[50] - 2.0).abs() < 1e-12);
        assert!(LogGrid::new(1.0, 1.0, 10).is_err());
    }

    #[test]
    fn monotone_check_locates_injected_violation() {
        let x = vec![1.0, 2.0, 3.0];
        let mut values = vec![vec![0.1, 0.2, 0.3], vec![0.2, 0.3, 0.4]];
        let surface = ValueSurface::from_values(
            x.clone(),
            vec![0.1, 0.2],
            values.clone(),
            vec![0.0; 3],
            1e-10,
        );
        assert!(check_monotone_surface(&surface, 1e-9).passes);
        values[0][1] = 0.5;
        let surface =
            ValueSurface::from_values(x.clone(), vec![0.1, 0.2], values, vec![0.0; 3], 1e-10);
        let report = check_monotone_surface(&surface, 1e-9);
        assert!(!report.passes);
        assert_eq!(report.worst, Some((0, 1)));
        assert!((report.max_violation - 0.2).abs() < 1e-15);
        let single =
            ValueSurface::from_values(x, vec![0.1], vec![vec![1.0, 0.0, 0.0]], vec![0.0; 3], 1e-10);
        let report = check_monotone_surface(&single, 1e-9);
        assert!(report.passes && report.worst.is_none());
    }

    #[test]
    fn one_state_put_matches_closed_form() {
        let (sigma, r, k) = (0.2, 0.05, 1.0);
        let p = StoppingProblem::new(
            one_state(sigma),
            GainFunction::put(k).unwrap(),
            r,
            f64::INFINITY,
            ProblemForm::Pricing,
        )
        .unwrap();
        let grid = LogGrid::around_strike(k, 2000).unwrap();
        let surface = solve_value_iteration(&p, &grid, &SolverSettings::default()).unwrap();
        let b = extract_thresholds(&surface, None).unwrap();
        let b_star = 2.0 * r * k / (2.0 * r + sigma * sigma);
        assert!(
            (b.levels[0] / b_star - 1.0).abs() < 0.01,
            "{} vs {b_star}",
            b.levels[0]
        );
        assert!(surface.max_obstacle_violation() <= 1e-10);
    }
}
