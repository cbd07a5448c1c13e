//! Subcommand bodies. Each returns whether its check passed plus a summary
//! line; artifacts go to the output directory.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use volstop::models::{
    correlate_drivers, sample_geometric_at, simulate_g_with_increments,
    simulate_xi_with_increments, validate_model, xi_system, AssetCoefficient, DiffusionVolModel,
    ValidityReport,
};
use volstop::montecarlo::{
    probe_continuity, verify_monotonicity_coupled, verify_monotonicity_diffusion, McConfig,
    StoppingRule,
};
use volstop::rng::{stream, Lane};
use volstop::stopping::{
    check_monotone_surface, extract_thresholds, finite_horizon_value, ordered_threshold_search,
    solve_value_iteration, LogGrid, SearchMode, SolverSettings, StoppingProblem, ValueSurface,
};
use volstop::{
    gamma_from_chain, gamma_from_samples, simulate_chain, simulate_coupled, time_scaled_generator,
    ChainError, ChainModel, ChainPath, SkipFreeChainModel,
};

use crate::config::{Model, RunConfig};
use crate::failure::Failure;
use crate::output::{ensure_dir, num, write_json, Csv};

pub const GIT_DESCRIBE: &str = env!("VOLSTOP_GIT_DESCRIBE");

#[derive(Debug)]
pub struct Outcome {
    pub passed: bool,
    pub summary: Value,
}

#[derive(Serialize)]
struct Provenance {
    version: &'static str,
    git_describe: &'static str,
}

const PROVENANCE: Provenance = Provenance {
    version: env!("CARGO_PKG_VERSION"),
    git_describe: GIT_DESCRIBE,
};

#[derive(Serialize)]
struct GridMeta {
    points: usize,
    x_min: f64,
    x_max: f64,
    log_step: f64,
}

impl GridMeta {
    fn of(grid: &LogGrid) -> Self {
        let p = grid.points();
        Self {
            points: p.len(),
            x_min: p[0],
            x_max: p[p.len() - 1],
            log_step: grid.log_step(),
        }
    }
}

fn solve(
    cfg: &RunConfig,
    problem: &StoppingProblem,
    grid: &LogGrid,
    settings: &SolverSettings,
) -> Result<ValueSurface, Failure> {
    Ok(if problem.horizon().is_finite() {
        finite_horizon_value(problem, grid, cfg.solver.time_steps, settings)?
    } else {
        solve_value_iteration(problem, grid, settings)?
    })
}

fn chain_of(model: &Model, what: &str) -> Result<(ChainModel, usize), Failure> {
    match model {
        Model::Chain { model, start } => Ok((model.clone(), *start)),
        Model::Diffusion { .. } => Err(Failure::input(
            "UnsupportedModel",
            format!("{what} needs a chain model"),
        )),
    }
}

fn diffusion_of(model: &Model, what: &str) -> Result<(DiffusionVolModel, f64), Failure> {
    match model {
        Model::Diffusion { model, y0 } => Ok((model.clone(), *y0)),
        Model::Chain { .. } => Err(Failure::input(
            "UnsupportedModel",
            format!("{what} needs a diffusion model"),
        )),
    }
}

pub fn price(cfg: &RunConfig, out: &Path) -> Result<Outcome, Failure> {
    let model = cfg.build_model()?;
    chain_of(&model, "price")?;
    let problem = cfg.build_problem(&model)?;
    let grid = cfg.grid()?;
    let settings = cfg.settings();
    let surface = solve(cfg, &problem, &grid, &settings)?;
    let thresholds = extract_thresholds(&surface, Some(settings.contact_tol()))?;

    ensure_dir(out)?;
    let mut csv = Csv::new(out.join("surface.csv"), &["x", "y_state", "v"])?;
    for (y, row) in surface.states.iter().zip(&surface.values) {
        for (x, v) in surface.x.iter().zip(row) {
            csv.row([num(*x), num(*y), num(*v)])?;
        }
    }
    csv.finish()?;
    let mut csv = Csv::new(out.join("thresholds.csv"), &["y_state", "b"])?;
    for (y, b) in surface.states.iter().zip(&thresholds.levels) {
        csv.row([num(*y), num(*b)])?;
    }
    csv.finish()?;

    let x0 = cfg.problem.x0;
    let values: Vec<Option<f64>> = (0..surface.states.len())
        .map(|i| surface.interpolate(i, x0))
        .collect();
    let metadata = json!({
        "command": "price",
        "provenance": PROVENANCE,
        "states": surface.states,
        "rate": problem.rate(),
        "horizon": cfg.problem.horizon,
        "form": problem.form(),
        "gain": problem.gain().name(),
        "strike": problem.gain().strike(),
        "grid": GridMeta::of(&grid),
        "solver": {
            "tol": settings.tol,
            "max_iters": settings.max_iters,
            "time_steps": cfg.problem.horizon.map(|_| cfg.solver.time_steps),
        },
        "iterations": surface.iterations,
        "residual": surface.residual,
        "max_obstacle_violation": surface.max_obstacle_violation(),
        "thresholds": thresholds,
        "x0": x0,
        "value_at_x0": values,
    });
    write_json(&out.join("metadata.json"), &metadata)?;
    Ok(Outcome {
        passed: true,
        summary: json!({
            "command": "price",
            "thresholds": thresholds.levels,
            "iterations": surface.iterations,
            "residual": surface.residual,
        }),
    })
}

fn write_report<T: Serialize>(
    out: &Path,
    check: &str,
    passed: bool,
    seed: Option<u64>,
    report: &T,
) -> Result<PathBuf, Failure> {
    ensure_dir(out)?;
    let path = out.join(format!("verify-{check}.json"));
    let body = json!({ "check": check, "passed": passed, "seed": seed, "provenance": PROVENANCE, "report": report });
    write_json(&path, &body)?;
    Ok(path)
}

fn verified(check: &str, passed: bool, path: PathBuf) -> Outcome {
    Outcome {
        passed,
        summary: json!({ "command": "verify", "check": check, "passed": passed, "report": path }),
    }
}

pub fn verify_monotone(cfg: &RunConfig, out: &Path) -> Result<Outcome, Failure> {
    let model = cfg.build_model()?;
    chain_of(&model, "verify monotone")?;
    let problem = cfg.build_problem(&model)?;
    let grid = cfg.grid()?;
    let settings = cfg.settings();
    let surface = solve(cfg, &problem, &grid, &settings)?;
    let report = check_monotone_surface(&surface, 10.0 * settings.tol);
    let thresholds = extract_thresholds(&surface, Some(settings.contact_tol()))?;
    let ordered = thresholds.is_decreasing_within_cell();
    let passed = report.passes && ordered;
    let body = json!({
        "surface": report,
        "thresholds": thresholds,
        "thresholds_decreasing": ordered,
        "iterations": surface.iterations,
        "residual": surface.residual,
        "grid": GridMeta::of(&grid),
    });
    let path = write_report(out, "monotone", passed, None, &body)?;
    Ok(verified("monotone", passed, path))
}

pub fn verify_coupling(cfg: &RunConfig, out: &Path) -> Result<Outcome, Failure> {
    let model = cfg.build_model()?;
    let mc = cfg.mc()?;
    let x0 = cfg.problem.x0;
    let v = &cfg.verify;
    let report = match &model {
        Model::Chain { model: chain, .. } => {
            SkipFreeChainModel::from_model(chain.clone())?;
            let problem = cfg.build_problem(&model)?;
            let levels = match &v.levels {
                Some(levels) => levels.clone(),
                None => {
                    let settings = cfg.settings();
                    let surface = solve(cfg, &problem, &cfg.grid()?, &settings)?;
                    extract_thresholds(&surface, Some(settings.contact_tol()))?.levels
                }
            };
            let (low, high) = (v.low.unwrap_or(0), v.high.unwrap_or(chain.len() - 1));
            verify_monotonicity_coupled(
                &problem,
                x0,
                low,
                high,
                &StoppingRule::ChangedTime(levels),
                &mc,
            )?
        }
        Model::Diffusion { y0, .. } => {
            let problem = cfg.build_problem(&model)?;
            let y_high = v.y0_upper.ok_or_else(|| {
                Failure::input("BadConfig", "diffusion coupling needs verify.y0_upper")
            })?;
            let Some(levels) = v.levels.clone() else {
                return Err(Failure::input(
                    "BadConfig",
                    "diffusion coupling needs verify.levels with one level",
                ));
            };
            verify_monotonicity_diffusion(
                &problem,
                x0,
                *y0,
                y_high,
                &StoppingRule::ChangedTime(levels),
                &mc,
            )?
        }
    };
    let passed = report.passes();
    let path = write_report(out, "coupling", passed, Some(mc.seed), &report)?;
    Ok(verified("coupling", passed, path))
}

pub fn verify_continuity(cfg: &RunConfig, out: &Path) -> Result<Outcome, Failure> {
    let model = cfg.build_model()?;
    let (diffusion, y0) = diffusion_of(&model, "verify continuity")?;
    let mc = cfg.mc()?;
    let schedule = cfg.schedule();
    let reports = cfg
        .verify
        .directions
        .iter()
        .map(|&d| probe_continuity(&diffusion, y0, d.into(), &schedule, cfg.verify.t_probe, &mc))
        .collect::<Result<Vec<_>, _>>()?;
    let passed = reports.iter().all(|r| r.passes());
    let path = write_report(out, "continuity", passed, Some(mc.seed), &reports)?;
    Ok(verified("continuity", passed, path))
}

pub fn verify_ordering(cfg: &RunConfig, out: &Path) -> Result<Outcome, Failure> {
    let model = cfg.build_model()?;
    chain_of(&model, "verify ordering")?;
    let problem = cfg.build_problem(&model)?;
    let grid = cfg.grid()?;
    let settings = cfg.settings();
    let monotone = ordered_threshold_search(&problem, &grid, &settings, SearchMode::Monotone)?;
    let exhaustive = ordered_threshold_search(&problem, &grid, &settings, SearchMode::Exhaustive)?;
    let max_index_gap = monotone
        .thresholds
        .indices
        .iter()
        .zip(&exhaustive.thresholds.indices)
        .map(|(a, b)| a.abs_diff(*b))
        .max()
        .unwrap_or(0);
    let decreasing = monotone.thresholds.is_decreasing_within_cell();
    let passed = max_index_gap <= 1 && decreasing;
    let body = json!({
        "monotone": monotone,
        "exhaustive": exhaustive,
        "max_index_gap": max_index_gap,
        "thresholds_decreasing": decreasing,
        "grid": GridMeta::of(&grid),
    });
    let path = write_report(out, "ordering", passed, None, &body)?;
    Ok(verified("ordering", passed, path))
}

const EXPORT_HEADER: [&str; 10] = [
    "path",
    "t",
    "G",
    "Z",
    "Z_upper",
    "Gamma",
    "Gamma_upper",
    "A",
    "X_tilde",
    "Y_tilde",
];

/// Rows per path on the original-time grid `t_k = k T / steps`, `Z` read on
/// the same grid in its own (changed) time.
fn export_times(cfg: &RunConfig) -> Result<Vec<f64>, Failure> {
    let (horizon, steps) = (cfg.mc.export_horizon, cfg.mc.export_steps);
    if !(horizon > 0.0 && horizon.is_finite()) || steps == 0 {
        return Err(Failure::input(
            "BadConfig",
            "export_horizon must be positive and export_steps at least 1",
        ));
    }
    Ok((0..=steps)
        .map(|k| horizon * k as f64 / steps as f64)
        .collect())
}

pub fn export_paths(cfg: &RunConfig, out: &Path) -> Result<Outcome, Failure> {
    let model = cfg.build_model()?;
    let mc = cfg.mc()?;
    let times = export_times(cfg)?;
    let mut csv = Csv::new(out.join("paths.csv"), &EXPORT_HEADER)?;
    match &model {
        Model::Chain {
            model: chain,
            start,
        } => export_chain(cfg, chain, *start, &mc, &times, &mut csv)?,
        Model::Diffusion {
            model: diffusion,
            y0,
        } => export_diffusion(cfg, diffusion, *y0, &mc, &times, &mut csv)?,
    }
    ensure_dir(out)?;
    let path = csv.finish()?;
    Ok(Outcome {
        passed: true,
        summary: json!({ "command": "export-paths", "paths": cfg.mc.export_paths, "seed": mc.seed, "file": path }),
    })
}

fn lookup(times: &[f64], values: &[f64], t: f64) -> f64 {
    values[times.partition_point(|&s| s < t)]
}

fn export_chain(
    cfg: &RunConfig,
    chain: &ChainModel,
    start: usize,
    mc: &McConfig,
    times: &[f64],
    csv: &mut Csv,
) -> Result<(), Failure> {
    let lower = cfg.verify.low.unwrap_or(start);
    let upper = cfg.verify.high.unwrap_or(lower);
    if lower > upper {
        return Err(ChainError::StartOrderViolated { lower, upper }.into());
    }
    let coupled = if lower < upper {
        Some(SkipFreeChainModel::from_model(chain.clone())?)
    } else {
        None
    };
    let scaled = time_scaled_generator(chain);
    let states = chain.states();
    let horizon = times[times.len() - 1];
    // Γ(s) ≥ s / y_max², so this changed-time window covers A on [0, horizon].
    let y_max = states.get(states.len() - 1);
    let window = horizon * y_max.powi(2).max(1.0) * (1.0 + 1e-9);
    for p in 0..cfg.mc.export_paths {
        let mut chain_rng = stream(mc.seed, Lane::Chain, p as u64);
        let (z, z_up): (ChainPath, ChainPath) = match &coupled {
            Some(model) => {
                let pair = simulate_coupled(model, lower, upper, window, &mut chain_rng)?;
                (pair.lower, pair.upper)
            }
            None => {
                let path = simulate_chain(&scaled, lower, window, &mut chain_rng)?;
                (path.clone(), path)
            }
        };
        let (tc, tc_up) = (
            gamma_from_chain(&z, states),
            gamma_from_chain(&z_up, states),
        );
        let a: Vec<f64> = times
            .iter()
            .map(|&t| tc.inverse(t))
            .collect::<Result<_, _>>()?;
        let mut sample_times: Vec<f64> = times.iter().chain(&a).copied().collect();
        sample_times.sort_by(f64::total_cmp);
        sample_times.dedup();
        let g = sample_geometric_at(
            cfg.problem.x0,
            &sample_times,
            &mut stream(mc.seed, Lane::Asset, p as u64),
        )?;
        for (&t, &a) in times.iter().zip(&a) {
            csv.row([
                p.to_string(),
                num(t),
                num(lookup(&sample_times, &g, t)),
                num(states.get(z.state_at(t)?)),
                num(states.get(z_up.state_at(t)?)),
                num(tc.gamma(t)?),
                num(tc_up.gamma(t)?),
                num(a),
                num(lookup(&sample_times, &g, a)),
                num(states.get(z.state_at(a)?)),
            ])?;
        }
    }
    Ok(())
}

/// Doublings of the changed-time window tried before giving up on covering `A`.
const MAX_WINDOW_DOUBLINGS: usize = 20;

fn export_diffusion(
    cfg: &RunConfig,
    model: &DiffusionVolModel,
    y0: f64,
    mc: &McConfig,
    times: &[f64],
    csv: &mut Csv,
) -> Result<(), Failure> {
    let y_up = cfg.verify.y0_upper.unwrap_or(y0);
    if !(y_up >= y0) {
        return Err(Failure::input(
            "BadConfig",
            format!("verify.y0_upper {y_up} is below y0 {y0}"),
        ));
    }
    let system = xi_system(model);
    let drivers = correlate_drivers(model.delta())?;
    let horizon = times[times.len() - 1];
    for p in 0..cfg.mc.export_paths {
        let mut window = horizon;
        let mut attempt = 0;
        // Increments are drawn in sequence from one stream, so a longer window extends the shorter one.
        let (g, xi, xi_up, tc, tc_up) = loop {
            let n = (window / mc.dt).ceil() as usize;
            let (dw, dw_xi) =
                drivers.increments(&mut stream(mc.seed, Lane::Volatility, p as u64), n, mc.dt);
            let g =
                simulate_g_with_increments(cfg.problem.x0, &AssetCoefficient::Linear, mc.dt, &dw)?;
            let xi = simulate_xi_with_increments(&system, y0, mc.dt, &dw_xi)?;
            let xi_up = simulate_xi_with_increments(&system, y_up, mc.dt, &dw_xi)?;
            let tc = gamma_from_samples(&xi.values, mc.dt)?;
            if tc.range_end() >= horizon {
                let tc_up = gamma_from_samples(&xi_up.values, mc.dt)?;
                break (g, xi, xi_up, tc, tc_up);
            }
            attempt += 1;
            if attempt > MAX_WINDOW_DOUBLINGS {
                return Err(Failure::input(
                    "BadConfig",
                    format!("path {p}: time change does not reach {horizon}"),
                ));
            }
            window *= 2.0;
        };
        for &t in times {
            let a = tc.inverse(t)?;
            csv.row([
                p.to_string(),
                num(t),
                num(g.value_at(t)?),
                num(xi.value_at(t)?),
                num(xi_up.value_at(t)?),
                num(tc.gamma(t)?),
                num(tc_up.gamma(t)?),
                num(a),
                num(g.value_at(a)?),
                num(xi.value_at(a)?),
            ])?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Validation {
    passed: bool,
    model: &'static str,
    states: Option<Vec<f64>>,
    skip_free: Option<bool>,
    validity: Option<ValidityReport>,
    integrability: bool,
    needs_nonnegative_stopping_assertion: bool,
    grid: GridMeta,
    mc: McConfig,
}

pub fn validate(cfg: &RunConfig, out: &Path) -> Result<Outcome, Failure> {
    let model = cfg.build_model()?;
    let problem = cfg.build_problem(&model)?;
    let grid = cfg.grid()?;
    let mc = cfg.mc()?;
    let report = match &model {
        Model::Chain { model, .. } => Validation {
            passed: true,
            model: "chain",
            states: Some(model.states().as_slice().to_vec()),
            skip_free: Some(model.is_skip_free()),
            validity: None,
            integrability: problem.integrability_satisfied(),
            needs_nonnegative_stopping_assertion: problem.needs_nonnegative_stopping_assertion(),
            grid: GridMeta::of(&grid),
            mc,
        },
        Model::Diffusion { model, .. } => {
            let validity = validate_model(model);
            Validation {
                passed: validity.passes(),
                model: model.name(),
                states: None,
                skip_free: None,
                validity: Some(validity),
                integrability: problem.integrability_satisfied(),
                needs_nonnegative_stopping_assertion: problem
                    .needs_nonnegative_stopping_assertion(),
                grid: GridMeta::of(&grid),
                mc,
            }
        }
    };
    ensure_dir(out)?;
    let path = out.join("validation.json");
    write_json(&path, &report)?;
    Ok(Outcome {
        passed: report.passed,
        summary: json!({ "command": "validate", "passed": report.passed, "report": path }),
    })
}
