//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::time::{Duration, Instant};

use common::{put_problem, PerpetualPut};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use volstop::chain::union_grid;
use volstop::models::validate_model;
use volstop::montecarlo::*;
use volstop::rng::{stream, Lane};
use volstop::stopping::*;
use volstop::*;

const INF: f64 = f64::INFINITY;
const INSTANCES: u64 = 20;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn run(id: usize, name: &str, budget: Duration, check: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = check();
    let elapsed = start.elapsed();
    let passed = out.passed && elapsed <= budget;
    println!(
        "{} [{id}] {name}: {} ({:.2}s, budget {}s)",
        if passed { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    passed
}

fn coupling_exactness() -> Outcome {
    let model = SkipFreeChainModel::from_model(common::three_state()).unwrap();
    let reps = 10_000;
    let mut order_violations = 0;
    let mut gamma_violations = 0;
    for r in 0..reps {
        let pair = simulate_coupled(&model, 0, 2, 20.0, &mut stream(1, Lane::Chain, r)).unwrap();
        let lower = gamma_from_chain(&pair.lower, model.states());
        let upper = gamma_from_chain(&pair.upper, model.states());
        let mut grid = union_grid(&pair.lower, &pair.upper);
        grid.push(20.0);
        if grid
            .iter()
            .any(|&t| pair.lower.state_at(t).unwrap() > pair.upper.state_at(t).unwrap())
        {
            order_violations += 1;
        }
        if !compare(&lower, &upper, &grid).unwrap().holds {
            gamma_violations += 1;
        }
    }
    // the same device inside the value comparison, with the solver's rule
    let problem = put_problem(common::three_state(), 0.05, 1.0, INF);
    let surface = solve_value_iteration(
        &problem,
        &LogGrid::around_strike(1.0, 2000).unwrap(),
        &SolverSettings::default(),
    )
    .unwrap();
    let rule = StoppingRule::ChangedTime(extract_thresholds(&surface, None).unwrap().levels);
    let report =
        verify_monotonicity_coupled(&problem, 1.0, 0, 2, &rule, &McConfig::new(10_000, 1)).unwrap();
    outcome(
        order_violations == 0 && gamma_violations == 0 && report.passes(),
        format!(
            "{reps} pairs: {order_violations} order, {gamma_violations} time-change violations; paired run: {} / {} / {}",
            report.volatility_order_violations, report.time_change_violations, report.payoff_violations
        ),
    )
}

fn round_trip() -> Outcome {
    let mut probes = ChaCha8Rng::seed_from_u64(2);
    let (mut worst, mut p2_checked, mut p2_failed) = (0.0f64, 0, 0);
    for p in 0..1000 {
        let instance = common::random_instance(3, 1000 + p);
        let scaled = time_scaled_generator(&instance.model);
        let path = simulate_chain(
            &scaled,
            (p % 3) as usize,
            10.0,
            &mut stream(2, Lane::Chain, p),
        )
        .unwrap();
        let tc = gamma_from_chain(&path, instance.model.states());
        for _ in 0..100 {
            let t = probes.random_range(0.0..tc.horizon());
            let err = (tc.inverse(tc.gamma(t).unwrap()).unwrap() - t).abs() / t.max(1.0);
            worst = worst.max(err);
            let s = probes.random_range(0.0..tc.range_end());
            let (gamma_t, a_s) = (tc.gamma(t).unwrap(), tc.inverse(s).unwrap());
            if (s - gamma_t).abs() > 1e-9 && (a_s - t).abs() > 1e-9 {
                p2_checked += 1;
                if (s < gamma_t) != (a_s < t) {
                    p2_failed += 1;
                }
            }
        }
    }
    outcome(
        worst <= 8.0 * f64::EPSILON && p2_failed == 0,
        format!("max |A(Γ(t)) − t| / max(t, 1) = {worst:.2e}; equivalence {p2_failed} failures of {p2_checked}"),
    )
}

fn one_regime_oracle() -> Outcome {
    let oracle = PerpetualPut {
        sigma: 0.2,
        rate: 0.05,
        strike: 1.0,
    };
    let problem = put_problem(common::one_state(0.2), 0.05, 1.0, INF);
    let probes = [oracle.threshold(), 0.8, 1.0, 1.5, 2.0, 4.0];
    let solve = |n| {
        let surface = solve_value_iteration(
            &problem,
            &LogGrid::around_strike(1.0, n).unwrap(),
            &SolverSettings::default(),
        )
        .unwrap();
        let b = extract_thresholds(&surface, None).unwrap().levels[0];
        let values: Vec<f64> = probes
            .iter()
            .map(|&x| surface.interpolate(0, x).unwrap())
            .collect();
        (b, values)
    };
    let rel = |a: f64, b: f64| (a / b - 1.0).abs();
    let exact: Vec<f64> = probes.iter().map(|&x| oracle.value(x)).collect();
    let (b, values) = solve(2000);
    let (b_dense, dense) = solve(8000);
    let grid_err = values
        .iter()
        .zip(&exact)
        .map(|(v, e)| rel(*v, *e))
        .fold(rel(b, oracle.threshold()), f64::max);
    let dense_err = dense
        .iter()
        .zip(&exact)
        .map(|(v, e)| rel(*v, *e))
        .fold(rel(b_dense, oracle.threshold()), f64::max);
    outcome(
        grid_err < 0.01 && dense_err < 0.002,
        format!("b = {b:.6} vs b* = {:.6}; max rel. error {grid_err:.2e} (2000 pts), {dense_err:.2e} (8000 pts)", oracle.threshold()),
    )
}

struct Solved {
    surface: ValueSurface,
    exhaustive: SearchOutcome,
    monotone: SearchOutcome,
}

fn solve_instances() -> Vec<Solved> {
    let settings = SolverSettings::default();
    let grid = LogGrid::around_strike(1.0, 2000).unwrap();
    (0..INSTANCES)
        .map(|seed| {
            let instance = common::random_instance(3, seed);
            let problem = put_problem(instance.model, instance.rate, 1.0, INF);
            Solved {
                surface: solve_value_iteration(&problem, &grid, &settings).unwrap(),
                exhaustive: ordered_threshold_search(
                    &problem,
                    &grid,
                    &settings,
                    SearchMode::Exhaustive,
                )
                .unwrap(),
                monotone: ordered_threshold_search(
                    &problem,
                    &grid,
                    &settings,
                    SearchMode::Monotone,
                )
                .unwrap(),
            }
        })
        .collect()
}

fn surface_monotonicity(solved: &[Solved]) -> Outcome {
    let tol = 10.0 * SolverSettings::default().tol;
    let reports: Vec<MonotonicityReport> = solved
        .iter()
        .map(|s| check_monotone_surface(&s.surface, tol))
        .collect();
    let failures = reports.iter().filter(|r| !r.passes).count();
    let worst = reports
        .iter()
        .map(|r| r.max_violation)
        .fold(f64::NEG_INFINITY, f64::max);
    outcome(
        failures == 0,
        format!(
            "{failures} of {} instances fail; largest v[i] − v[i+1] = {worst:.2e}",
            solved.len()
        ),
    )
}

fn threshold_ordering(solved: &[Solved]) -> Outcome {
    let mut failures = Vec::new();
    for (k, s) in solved.iter().enumerate() {
        let b = extract_thresholds(&s.surface, None).unwrap();
        let agree = s
            .exhaustive
            .thresholds
            .indices
            .iter()
            .zip(&s.monotone.thresholds.indices)
            .all(|(a, b)| a.abs_diff(*b) <= 1);
        if !b.is_decreasing_within_cell()
            || s.exhaustive.orderings_examined != 6
            || s.monotone.orderings_examined != 1
            || !agree
        {
            failures.push(k);
        }
    }
    outcome(
        failures.is_empty(),
        format!("orderings 6 vs 1; failing instances {failures:?}"),
    )
}

fn validity_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let (eta, kappa) = (rng.random_range(0.01..2.0), rng.random_range(0.001..8.0));
        let hw = DiffusionVolModel::hull_white(eta, kappa, 0.0).unwrap();
        if validate_model(&hw).passes() != (kappa >= 2.0 * eta * eta) {
            mismatches += 1;
        }
        let (eta, kappa, lambda) = (
            rng.random_range(0.01..2.0),
            rng.random_range(0.001..8.0),
            rng.random_range(0.001..4.0),
        );
        let heston = DiffusionVolModel::heston(eta, kappa, lambda, 0.0).unwrap();
        if validate_model(&heston).passes() != (kappa * lambda >= 2.0 * eta * eta) {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{mismatches} mismatches over 1000 Hull–White and 1000 Heston draws"),
    )
}

fn diffusion_coupling() -> Outcome {
    let model = DiffusionVolModel::hull_white(0.2, 0.08, 0.0).unwrap();
    let problem = StoppingProblem::new(
        model,
        GainFunction::put(1.0).unwrap(),
        0.05,
        INF,
        ProblemForm::Pricing,
    )
    .unwrap();
    let cfg = McConfig {
        dt: 1e-4,
        horizon_cap: 1.0,
        ..McConfig::new(1000, 7)
    };
    // level 0 never stops, so the whole window is compared
    let report = verify_monotonicity_diffusion(
        &problem,
        1.0,
        0.15,
        0.25,
        &StoppingRule::ChangedTime(vec![0.0]),
        &cfg,
    )
    .unwrap();
    outcome(
        report.volatility_order_violations == 0 && report.time_change_violations == 0,
        format!(
            "{} paths: {} ξ-order, {} time-change violations",
            report.paths, report.volatility_order_violations, report.time_change_violations
        ),
    )
}

fn continuity() -> Outcome {
    let model = DiffusionVolModel::hull_white(0.2, 0.08, 0.0).unwrap();
    let cfg = McConfig {
        dt: 1e-3,
        ..McConfig::new(1000, 8)
    };
    let schedule = LevelSchedule::default();
    let mut passed = true;
    let mut detail = Vec::new();
    for direction in [ApproachDirection::FromAbove, ApproachDirection::FromBelow] {
        let report = probe_continuity(&model, 0.2, direction, &schedule, 1.0, &cfg).unwrap();
        passed &= report.passes() && report.levels.len() == 5;
        detail.push(format!(
            "{direction:?}: {} order violations, closest gap {:.2e}",
            report.monotonicity_violations,
            report.max_relative_gap.last().unwrap()
        ));
    }
    outcome(passed, detail.join("; "))
}

fn estimator_consistency() -> Outcome {
    let oracle = PerpetualPut {
        sigma: 0.2,
        rate: 0.05,
        strike: 1.0,
    };
    let problem = put_problem(common::one_state(0.2), 0.05, 1.0, INF);
    let cfg = McConfig::new(100_000, 9);
    let optimal = estimate_value_timechanged(
        &problem,
        &StoppingRule::ChangedTime(vec![oracle.threshold()]),
        1.0,
        VolStart::Index(0),
        &cfg,
    )
    .unwrap()
    .estimate;
    let surface = solve_value_iteration(
        &problem,
        &LogGrid::around_strike(1.0, 2000).unwrap(),
        &SolverSettings::default(),
    )
    .unwrap();
    let grid_value = surface.interpolate(0, 1.0).unwrap();
    let mut above = Vec::new();
    for level in [0.3, 0.5, 0.6, 0.65, 0.75, 0.8, 0.9] {
        let e = estimate_value_timechanged(
            &problem,
            &StoppingRule::ChangedTime(vec![level]),
            1.0,
            VolStart::Index(0),
            &cfg,
        )
        .unwrap()
        .estimate;
        if e.mean > grid_value + 3.0 * e.stderr {
            above.push(level);
        }
    }
    outcome(
        optimal.within(oracle.value(1.0), 3.0) && above.is_empty(),
        format!(
            "{:.6} ± {:.6} vs {:.6}; suboptimal levels above grid value: {above:?}",
            optimal.mean,
            optimal.stderr,
            oracle.value(1.0)
        ),
    )
}

fn determinism() -> Outcome {
    let problem = put_problem(common::three_state(), 0.05, 1.0, INF);
    let rule = StoppingRule::ChangedTime(vec![0.9, 0.85, 0.8]);
    let cfg = McConfig::new(20_000, 10);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let estimate =
                estimate_value_timechanged(&problem, &rule, 1.0, VolStart::Index(1), &cfg).unwrap();
            let paired = verify_monotonicity_coupled(&problem, 1.0, 0, 2, &rule, &cfg).unwrap();
            let surface = solve_value_iteration(
                &problem,
                &LogGrid::around_strike(1.0, 400).unwrap(),
                &SolverSettings::default(),
            )
            .unwrap();
            serde_json::to_string(&(estimate, paired, surface)).unwrap()
        })
    };
    let (one, eight) = (run(1), run(8));
    outcome(
        one == eight,
        format!("{} JSON bytes, identical: {}", one.len(), one == eight),
    )
}

fn main() {
    let secs = Duration::from_secs;
    let mut all = true;
    all &= run(1, "coupling exactness", secs(30), coupling_exactness);
    all &= run(2, "time-change round trip", secs(10), round_trip);
    all &= run(3, "one-regime oracle", secs(60), one_regime_oracle);
    let start = Instant::now();
    let solved = solve_instances();
    let solve_time = start.elapsed();
    println!(
        "     solved {INSTANCES} random instances in {:.2}s",
        solve_time.as_secs_f64()
    );
    all &= run(4, "surface monotonicity", secs(300) - solve_time, || {
        surface_monotonicity(&solved)
    });
    all &= run(
        5,
        "threshold ordering and search",
        secs(600) - solve_time,
        || threshold_ordering(&solved),
    );
    all &= run(6, "validity algebra", secs(1), validity_algebra);
    all &= run(7, "diffusion coupling", secs(120), diffusion_coupling);
    all &= run(8, "time-change continuity", secs(120), continuity);
    all &= run(9, "estimator consistency", secs(120), estimator_consistency);
    all &= run(
        10,
        "determinism across thread counts",
        secs(120),
        determinism,
    );
    if !all {
        std::process::exit(1);
    }
}
