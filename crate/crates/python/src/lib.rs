//! Python bindings for `volstop`.
//!
//! Models and problems are classes; solver and simulation results come back
//! as plain dicts built from their serialized form.

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;
use volstop::models::{validate_model, DiffusionVolModel as CoreDiffusion};
use volstop::montecarlo::{
    self, ApproachDirection, BasisSpec, LevelSchedule, McConfig, StoppingRule, VolStart,
};
use volstop::rng::{stream, Lane};
use volstop::stopping::{self, GainFunction, LogGrid, ProblemForm, SearchMode, SolverSettings};
use volstop::{GeneratorMatrix, VolStates};

create_exception!(volstop_py, VolstopError, PyValueError);
create_exception!(volstop_py, NoConvergenceError, VolstopError);

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    VolstopError::new_err(e.to_string())
}

fn stopping_err(e: stopping::StoppingError) -> PyErr {
    match e {
        stopping::StoppingError::NoConvergence { .. } => NoConvergenceError::new_err(e.to_string()),
        e => err(e),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Finite-state volatility chain: positive increasing `states` and generator rows.
#[pyclass(frozen)]
pub struct ChainModel {
    inner: volstop::ChainModel,
}

#[pymethods]
impl ChainModel {
    #[new]
    fn new(states: Vec<f64>, generator: Vec<Vec<f64>>) -> PyResult<Self> {
        let states = VolStates::new(states).map_err(err)?;
        let q = GeneratorMatrix::from_rows(&generator).map_err(err)?;
        Ok(Self {
            inner: volstop::ChainModel::new(states, q).map_err(err)?,
        })
    }

    #[getter]
    fn states(&self) -> Vec<f64> {
        self.inner.states().as_slice().to_vec()
    }

    #[getter]
    fn generator(&self) -> Vec<Vec<f64>> {
        self.inner.generator().to_rows()
    }

    #[getter]
    fn is_skip_free(&self) -> bool {
        self.inner.is_skip_free()
    }

    fn time_scaled_generator(&self) -> Vec<Vec<f64>> {
        volstop::time_scaled_generator(&self.inner).to_rows()
    }

    /// Coupled chain pair in changed time from ordered starts.
    #[pyo3(signature = (low, high, horizon, seed=0, index=0))]
    fn simulate_coupled<'py>(
        &self,
        py: Python<'py>,
        low: usize,
        high: usize,
        horizon: f64,
        seed: u64,
        index: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let model = volstop::SkipFreeChainModel::from_model(self.inner.clone()).map_err(err)?;
        let pair = volstop::simulate_coupled(
            &model,
            low,
            high,
            horizon,
            &mut stream(seed, Lane::Chain, index),
        )
        .map_err(err)?;
        let path = |p: &volstop::ChainPath| serde_json::json!({ "jump_times": p.jump_times(), "states": p.state_indices(), "horizon": p.horizon() });
        let meet = pair.meet_time.is_finite().then_some(pair.meet_time);
        to_py(
            py,
            &serde_json::json!({ "lower": path(&pair.lower), "upper": path(&pair.upper), "meet_time": meet }),
        )
    }

    fn __repr__(&self) -> String {
        format!(
            "ChainModel(states={:?}, generator={:?})",
            self.states(),
            self.generator()
        )
    }
}

/// Hull–White or Heston volatility diffusion.
#[pyclass(frozen)]
pub struct DiffusionModel {
    inner: CoreDiffusion,
}

#[pymethods]
impl DiffusionModel {
    #[staticmethod]
    #[pyo3(signature = (eta, kappa, delta=0.0))]
    fn hull_white(eta: f64, kappa: f64, delta: f64) -> PyResult<Self> {
        Ok(Self {
            inner: CoreDiffusion::hull_white(eta, kappa, delta).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (eta, kappa, lambda_, delta=0.0))]
    fn heston(eta: f64, kappa: f64, lambda_: f64, delta: f64) -> PyResult<Self> {
        Ok(Self {
            inner: CoreDiffusion::heston(eta, kappa, lambda_, delta).map_err(err)?,
        })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    #[getter]
    fn bessel_dimension(&self) -> Option<f64> {
        self.inner.bessel_dimension()
    }

    /// The `φ ≥ 2` report as a dict.
    fn validate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &validate_model(&self.inner))
    }

    /// Shared-noise continuity probe of the time change at `y0`.
    #[pyo3(signature = (y0, from_above=true, levels=5, first=0.02, ratio=0.2, tolerance=1e-3, t_probe=1.0, n_paths=1000, dt=1e-3, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn probe_continuity<'py>(
        &self,
        py: Python<'py>,
        y0: f64,
        from_above: bool,
        levels: usize,
        first: f64,
        ratio: f64,
        tolerance: f64,
        t_probe: f64,
        n_paths: usize,
        dt: f64,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let direction = if from_above {
            ApproachDirection::FromAbove
        } else {
            ApproachDirection::FromBelow
        };
        let schedule = LevelSchedule {
            levels,
            first,
            ratio,
            tolerance,
        };
        let cfg = McConfig {
            dt,
            ..McConfig::new(n_paths, seed)
        };
        let report = py
            .detach(|| {
                montecarlo::probe_continuity(&self.inner, y0, direction, &schedule, t_probe, &cfg)
            })
            .map_err(err)?;
        to_py(py, &report)
    }
}

/// Stopping problem with a put (`strike`) or constant (`value`) gain.
#[pyclass(frozen)]
pub struct Problem {
    inner: stopping::StoppingProblem,
}

#[pymethods]
impl Problem {
    #[new]
    #[pyo3(signature = (model, rate, strike=None, value=None, horizon=None, form="pricing"))]
    fn new(
        model: &Bound<'_, PyAny>,
        rate: f64,
        strike: Option<f64>,
        value: Option<f64>,
        horizon: Option<f64>,
        form: &str,
    ) -> PyResult<Self> {
        let gain = match (strike, value) {
            (Some(k), None) => GainFunction::put(k).map_err(err)?,
            (None, Some(c)) => GainFunction::constant(c),
            _ => {
                return Err(VolstopError::new_err(
                    "give exactly one of strike (put) or value (constant)",
                ))
            }
        };
        let form = match form {
            "pricing" => ProblemForm::Pricing,
            "plain" => ProblemForm::Plain,
            other => {
                return Err(VolstopError::new_err(format!(
                    "form must be 'pricing' or 'plain', got {other:?}"
                )))
            }
        };
        let horizon = horizon.unwrap_or(f64::INFINITY);
        let inner = if let Ok(chain) = model.cast::<ChainModel>() {
            stopping::StoppingProblem::new(chain.get().inner.clone(), gain, rate, horizon, form)
        } else if let Ok(diffusion) = model.cast::<DiffusionModel>() {
            stopping::StoppingProblem::new(diffusion.get().inner.clone(), gain, rate, horizon, form)
        } else {
            return Err(VolstopError::new_err(
                "model must be a ChainModel or DiffusionModel",
            ));
        };
        Ok(Self {
            inner: inner.map_err(err)?,
        })
    }

    #[getter]
    fn rate(&self) -> f64 {
        self.inner.rate()
    }

    #[getter]
    fn horizon(&self) -> Option<f64> {
        Some(self.inner.horizon()).filter(|h| h.is_finite())
    }

    /// Grid value surface; perpetual or finite horizon by the problem's horizon.
    #[pyo3(signature = (grid_points=2000, x_min=None, x_max=None, tol=1e-10, max_iters=500, time_steps=1000))]
    #[allow(clippy::too_many_arguments)]
    fn solve(
        &self,
        py: Python<'_>,
        grid_points: usize,
        x_min: Option<f64>,
        x_max: Option<f64>,
        tol: f64,
        max_iters: usize,
        time_steps: usize,
    ) -> PyResult<ValueSurface> {
        let grid = self.grid(grid_points, x_min, x_max)?;
        let settings = SolverSettings {
            tol,
            max_iters,
            contact_tol: None,
        };
        let surface = py
            .detach(|| {
                if self.inner.horizon().is_finite() {
                    stopping::finite_horizon_value(&self.inner, &grid, time_steps, &settings)
                } else {
                    stopping::solve_value_iteration(&self.inner, &grid, &settings)
                }
            })
            .map_err(stopping_err)?;
        Ok(ValueSurface { inner: surface })
    }

    /// Threshold search over orderings; `mode` is "monotone" or "exhaustive".
    #[pyo3(signature = (mode="monotone", grid_points=2000, tol=1e-10, max_iters=500))]
    fn threshold_search<'py>(
        &self,
        py: Python<'py>,
        mode: &str,
        grid_points: usize,
        tol: f64,
        max_iters: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mode = match mode {
            "monotone" => SearchMode::Monotone,
            "exhaustive" => SearchMode::Exhaustive,
            other => {
                return Err(VolstopError::new_err(format!(
                    "unknown search mode {other:?}"
                )))
            }
        };
        let grid = self.grid(grid_points, None, None)?;
        let settings = SolverSettings {
            tol,
            max_iters,
            contact_tol: None,
        };
        let outcome = py
            .detach(|| stopping::ordered_threshold_search(&self.inner, &grid, &settings, mode))
            .map_err(stopping_err)?;
        to_py(py, &outcome)
    }

    /// Time-changed Monte Carlo value of a threshold rule. `levels=None` stops
    /// at once; `start` is a state index (chain) or a volatility level (diffusion).
    #[pyo3(signature = (levels, x0, start, n_paths=10000, seed=0, dt=1e-3, horizon_cap=400.0, original_time=false))]
    #[allow(clippy::too_many_arguments)]
    fn estimate_value<'py>(
        &self,
        py: Python<'py>,
        levels: Option<Vec<f64>>,
        x0: f64,
        start: &Bound<'py, PyAny>,
        n_paths: usize,
        seed: u64,
        dt: f64,
        horizon_cap: f64,
        original_time: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let rule = match levels {
            None => StoppingRule::Immediate,
            Some(l) if original_time => StoppingRule::OriginalTime(l),
            Some(l) => StoppingRule::ChangedTime(l),
        };
        let start = self.start(start)?;
        let cfg = McConfig {
            dt,
            horizon_cap,
            ..McConfig::new(n_paths, seed)
        };
        let out = py
            .detach(|| montecarlo::estimate_value_timechanged(&self.inner, &rule, x0, start, &cfg))
            .map_err(err)?;
        to_py(py, &out)
    }

    /// Coupled runs from ordered starts (chain indices or diffusion levels).
    #[pyo3(signature = (levels, x0, low, high, n_paths=10000, seed=0, dt=1e-3, horizon_cap=400.0))]
    #[allow(clippy::too_many_arguments)]
    fn verify_coupled<'py>(
        &self,
        py: Python<'py>,
        levels: Vec<f64>,
        x0: f64,
        low: &Bound<'py, PyAny>,
        high: &Bound<'py, PyAny>,
        n_paths: usize,
        seed: u64,
        dt: f64,
        horizon_cap: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let rule = StoppingRule::ChangedTime(levels);
        let cfg = McConfig {
            dt,
            horizon_cap,
            ..McConfig::new(n_paths, seed)
        };
        let report = match (self.start(low)?, self.start(high)?) {
            (VolStart::Index(lo), VolStart::Index(hi)) => py.detach(|| {
                montecarlo::verify_monotonicity_coupled(&self.inner, x0, lo, hi, &rule, &cfg)
            }),
            (VolStart::Level(lo), VolStart::Level(hi)) => py.detach(|| {
                montecarlo::verify_monotonicity_diffusion(&self.inner, x0, lo, hi, &rule, &cfg)
            }),
            _ => {
                return Err(VolstopError::new_err(
                    "low and high must both be indices or both be levels",
                ))
            }
        }
        .map_err(err)?;
        to_py(py, &report)
    }

    /// Regression lower bound for the finite-horizon problem.
    #[pyo3(signature = (x0, start, exercise_dates=50, degree=3, n_paths=10000, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn lower_bound<'py>(
        &self,
        py: Python<'py>,
        x0: f64,
        start: &Bound<'py, PyAny>,
        exercise_dates: usize,
        degree: usize,
        n_paths: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let start = self.start(start)?;
        let cfg = McConfig::new(n_paths, seed);
        let out = py
            .detach(|| {
                montecarlo::ls_lower_bound_finite_t(
                    &self.inner,
                    x0,
                    start,
                    BasisSpec { degree },
                    exercise_dates,
                    &cfg,
                )
            })
            .map_err(err)?;
        to_py(py, &out)
    }
}

impl Problem {
    fn grid(&self, n: usize, x_min: Option<f64>, x_max: Option<f64>) -> PyResult<LogGrid> {
        let centre = self.inner.gain().strike().unwrap_or(1.0);
        LogGrid::new(
            x_min.unwrap_or(centre * 1e-3),
            x_max.unwrap_or(centre * 1e3),
            n,
        )
        .map_err(err)
    }

    fn start(&self, start: &Bound<'_, PyAny>) -> PyResult<VolStart> {
        match self.inner.model() {
            stopping::VolatilityModel::Chain(_) => Ok(VolStart::Index(start.extract()?)),
            stopping::VolatilityModel::Diffusion(_) => Ok(VolStart::Level(start.extract()?)),
        }
    }
}

/// Solved values `v(x_j, y_i)` on a log grid.
#[pyclass(frozen)]
pub struct ValueSurface {
    inner: stopping::ValueSurface,
}

#[pymethods]
impl ValueSurface {
    #[getter]
    fn x(&self) -> Vec<f64> {
        self.inner.x.clone()
    }

    #[getter]
    fn states(&self) -> Vec<f64> {
        self.inner.states.clone()
    }

    #[getter]
    fn values(&self) -> Vec<Vec<f64>> {
        self.inner.values.clone()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn residual(&self) -> f64 {
        self.inner.residual
    }

    /// Value in `state` at `x`, interpolated in `log x`.
    fn value_at(&self, state: usize, x: f64) -> PyResult<f64> {
        if state >= self.inner.states.len() {
            return Err(VolstopError::new_err(format!("state {state} out of range")));
        }
        self.inner
            .interpolate(state, x)
            .ok_or_else(|| VolstopError::new_err(format!("x = {x} is off the grid")))
    }

    #[pyo3(signature = (contact_tol=None))]
    fn thresholds<'py>(
        &self,
        py: Python<'py>,
        contact_tol: Option<f64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        to_py(
            py,
            &stopping::extract_thresholds(&self.inner, contact_tol).map_err(stopping_err)?,
        )
    }

    fn check_monotone<'py>(&self, py: Python<'py>, tol: f64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &stopping::check_monotone_surface(&self.inner, tol))
    }
}

/// `Γ(t)` at each of `times` for a chain path given by jump times and state indices.
#[pyfunction]
fn chain_time_change(
    states: Vec<f64>,
    jump_times: Vec<f64>,
    state_indices: Vec<usize>,
    horizon: f64,
    times: Vec<f64>,
) -> PyResult<Vec<f64>> {
    let states = VolStates::new(states).map_err(err)?;
    let path =
        volstop::ChainPath::from_segments(jump_times, state_indices, horizon).map_err(err)?;
    let tc = volstop::gamma_from_chain(&path, &states);
    times.iter().map(|&t| tc.gamma(t).map_err(err)).collect()
}

#[pymodule]
fn volstop_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}

/// Adds the classes, functions and exceptions to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ChainModel>()?;
    m.add_class::<DiffusionModel>()?;
    m.add_class::<Problem>()?;
    m.add_class::<ValueSurface>()?;
    m.add_function(wrap_pyfunction!(chain_time_change, m)?)?;
    m.add("VolstopError", m.py().get_type::<VolstopError>())?;
    m.add(
        "NoConvergenceError",
        m.py().get_type::<NoConvergenceError>(),
    )?;
    Ok(())
}
