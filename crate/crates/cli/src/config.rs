//! TOML run configuration.

use std::path::PathBuf;

use serde::Deserialize;
use volstop::montecarlo::{ApproachDirection, LevelSchedule, McConfig};
use volstop::stopping::{GainFunction, LogGrid, ProblemForm, SolverSettings, StoppingProblem};
use volstop::{ChainModel, DiffusionVolModel, GeneratorMatrix, VolStates};

use crate::failure::Failure;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub problem: ProblemSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub mc: McSection,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSection {
    Chain {
        states: Vec<f64>,
        generator: Vec<Vec<f64>>,
        #[serde(default)]
        start: usize,
    },
    HullWhite {
        eta: f64,
        kappa: f64,
        #[serde(default)]
        delta: f64,
        y0: f64,
    },
    Heston {
        eta: f64,
        kappa: f64,
        lambda: f64,
        #[serde(default)]
        delta: f64,
        y0: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainKind {
    Put,
    Constant,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub gain: GainKind,
    #[serde(default = "one")]
    pub strike: f64,
    /// Value of a constant gain.
    #[serde(default)]
    pub value: f64,
    pub rate: f64,
    /// Omitted for a perpetual problem.
    pub horizon: Option<f64>,
    #[serde(default = "pricing")]
    pub form: FormName,
    #[serde(default = "one")]
    pub x0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormName {
    Plain,
    Pricing,
}

fn one() -> f64 {
    1.0
}

fn pricing() -> FormName {
    FormName::Pricing
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub grid_points: usize,
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
    pub tol: f64,
    pub max_iters: usize,
    pub time_steps: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverSettings::default();
        Self {
            grid_points: 2000,
            x_min: None,
            x_max: None,
            tol: s.tol,
            max_iters: s.max_iters,
            time_steps: 1000,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSection {
    pub n_paths: usize,
    pub dt: f64,
    pub horizon_cap: f64,
    pub seed: u64,
    pub antithetic: bool,
    /// Paths written by `export-paths`.
    pub export_paths: usize,
    /// Time span covered by `export-paths`.
    pub export_horizon: f64,
    pub export_steps: usize,
}

impl Default for McSection {
    fn default() -> Self {
        let c = McConfig::new(10_000, 1);
        Self {
            n_paths: c.n_paths,
            dt: c.dt,
            horizon_cap: c.horizon_cap,
            seed: c.seed,
            antithetic: c.antithetic,
            export_paths: 10,
            export_horizon: 1.0,
            export_steps: 100,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    /// Lower and upper chain start indices for coupled runs.
    pub low: Option<usize>,
    pub high: Option<usize>,
    /// Upper starting level for diffusion runs.
    pub y0_upper: Option<f64>,
    /// Rule levels; the solver's thresholds when omitted (chain models).
    pub levels: Option<Vec<f64>>,
    pub directions: Vec<DirectionName>,
    pub levels_count: usize,
    pub first_offset: f64,
    pub ratio: f64,
    pub continuity_tol: f64,
    pub t_probe: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        let s = LevelSchedule::default();
        Self {
            low: None,
            high: None,
            y0_upper: None,
            levels: None,
            directions: vec![DirectionName::Down, DirectionName::Up],
            levels_count: s.levels,
            first_offset: s.first,
            ratio: s.ratio,
            continuity_tol: s.tolerance,
            t_probe: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionName {
    /// `y_n ↓ y0`.
    Down,
    /// `y_n ↑ y0`.
    Up,
}

impl From<DirectionName> for ApproachDirection {
    fn from(d: DirectionName) -> Self {
        match d {
            DirectionName::Down => ApproachDirection::FromAbove,
            DirectionName::Up => ApproachDirection::FromBelow,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

/// Volatility model after validation.
#[derive(Debug, Clone)]
pub enum Model {
    Chain { model: ChainModel, start: usize },
    Diffusion { model: DiffusionVolModel, y0: f64 },
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        toml::from_str(text).map_err(|e| Failure::input("BadConfig", e.to_string()))
    }

    pub fn build_model(&self) -> Result<Model, Failure> {
        match &self.model {
            ModelSection::Chain {
                states,
                generator,
                start,
            } => {
                let states = VolStates::new(states.clone())?;
                let q = GeneratorMatrix::from_rows(generator)?;
                let model = ChainModel::new(states, q)?;
                if *start >= model.len() {
                    return Err(volstop::ChainError::IndexOutOfRange {
                        index: *start,
                        len: model.len(),
                    }
                    .into());
                }
                Ok(Model::Chain {
                    model,
                    start: *start,
                })
            }
            ModelSection::HullWhite {
                eta,
                kappa,
                delta,
                y0,
            } => Self::diffusion(DiffusionVolModel::hull_white(*eta, *kappa, *delta)?, *y0),
            ModelSection::Heston {
                eta,
                kappa,
                lambda,
                delta,
                y0,
            } => Self::diffusion(
                DiffusionVolModel::heston(*eta, *kappa, *lambda, *delta)?,
                *y0,
            ),
        }
    }

    fn diffusion(model: DiffusionVolModel, y0: f64) -> Result<Model, Failure> {
        let report = volstop::models::validate_model(&model);
        if report.status == volstop::models::Validity::Invalid {
            return Err(Failure::input("InvalidModel", report.detail));
        }
        if !(y0 > 0.0) {
            return Err(Failure::input(
                "BadConfig",
                format!("y0 must be positive, got {y0}"),
            ));
        }
        Ok(Model::Diffusion { model, y0 })
    }

    pub fn build_problem(&self, model: &Model) -> Result<StoppingProblem, Failure> {
        let p = &self.problem;
        let gain = match p.gain {
            GainKind::Put => GainFunction::put(p.strike)?,
            GainKind::Constant => GainFunction::constant(p.value),
        };
        let form = match p.form {
            FormName::Plain => ProblemForm::Plain,
            FormName::Pricing => ProblemForm::Pricing,
        };
        let horizon = p.horizon.unwrap_or(f64::INFINITY);
        if !(p.x0 > 0.0) {
            return Err(Failure::input(
                "BadConfig",
                format!("x0 must be positive, got {}", p.x0),
            ));
        }
        Ok(match model {
            Model::Chain { model, .. } => {
                StoppingProblem::new(model.clone(), gain, p.rate, horizon, form)?
            }
            Model::Diffusion { model, .. } => {
                StoppingProblem::new(model.clone(), gain, p.rate, horizon, form)?
            }
        })
    }

    pub fn grid(&self) -> Result<LogGrid, Failure> {
        let s = &self.solver;
        let centre = match self.problem.gain {
            GainKind::Put => self.problem.strike,
            GainKind::Constant => self.problem.x0,
        };
        let lo = s.x_min.unwrap_or(centre * 1e-3);
        let hi = s.x_max.unwrap_or(centre * 1e3);
        Ok(LogGrid::new(lo, hi, s.grid_points)?)
    }

    pub fn settings(&self) -> SolverSettings {
        SolverSettings {
            tol: self.solver.tol,
            max_iters: self.solver.max_iters,
            contact_tol: None,
        }
    }

    pub fn mc(&self) -> Result<McConfig, Failure> {
        let m = &self.mc;
        let cfg = McConfig {
            n_paths: m.n_paths,
            dt: m.dt,
            horizon_cap: m.horizon_cap,
            seed: m.seed,
            antithetic: m.antithetic,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn schedule(&self) -> LevelSchedule {
        let v = &self.verify;
        LevelSchedule {
            levels: v.levels_count,
            first: v.first_offset,
            ratio: v.ratio,
            tolerance: v.continuity_tol,
        }
    }
}
