mod common;

use common::{put_problem, within_cells, PerpetualPut};
use proptest::prelude::*;
use volstop::stopping::*;

const INF: f64 = f64::INFINITY;

fn solve(problem: &StoppingProblem, grid: &LogGrid) -> ValueSurface {
    solve_value_iteration(problem, grid, &SolverSettings::default()).unwrap()
}

#[test]
fn one_state_matches_smooth_pasting() {
    let oracle = PerpetualPut {
        sigma: 0.2,
        rate: 0.05,
        strike: 1.0,
    };
    let grid = LogGrid::around_strike(1.0, 2000).unwrap();
    let surface = solve(&put_problem(common::one_state(0.2), 0.05, 1.0, INF), &grid);
    let b = extract_thresholds(&surface, None).unwrap();
    let b_star = oracle.threshold();
    assert!(
        (b.levels[0] / b_star - 1.0).abs() < 0.01,
        "{} vs {b_star}",
        b.levels[0]
    );
    assert!(within_cells(b.levels[0], b_star, grid.log_step(), 1.0));
    for x in [b_star, 0.8, 1.0, 1.5, 3.0, 5.0] {
        let v = surface.interpolate(0, x).unwrap();
        assert!(
            (v / oracle.value(x) - 1.0).abs() < 0.01,
            "x = {x}: {v} vs {}",
            oracle.value(x)
        );
    }
    let contact = surface.interpolate(0, b_star).unwrap();
    assert!(
        (contact - (1.0 - b_star)).abs() < 1e-3 * (1.0 - b_star),
        "{contact}"
    );
    assert!(surface.interpolate(0, 100.0).unwrap() <= 1e-2);
}

#[test]
fn two_states_order_their_thresholds() {
    let model = common::chain(&[0.15, 0.35], &[vec![-0.4, 0.4], vec![0.6, -0.6]]);
    let surface = solve(
        &put_problem(model, 0.05, 1.0, INF),
        &LogGrid::around_strike(1.0, 2000).unwrap(),
    );
    let b = extract_thresholds(&surface, None).unwrap();
    assert!(b.levels[0] > b.levels[1], "{:?}", b.levels);
}

#[test]
fn without_switching_each_state_is_a_one_state_problem() {
    let states = [0.15, 0.3, 0.5];
    let model = common::chain(&states, &[vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]]);
    let grid = LogGrid::around_strike(1.0, 2000).unwrap();
    let b = extract_thresholds(&solve(&put_problem(model, 0.05, 1.0, INF), &grid), None).unwrap();
    for (i, &sigma) in states.iter().enumerate() {
        let exact = PerpetualPut {
            sigma,
            rate: 0.05,
            strike: 1.0,
        }
        .threshold();
        assert!(
            within_cells(b.levels[i], exact, grid.log_step(), 1.0),
            "state {i}: {} vs {exact}",
            b.levels[i]
        );
    }
}

#[test]
fn search_modes_count_orderings_and_agree() {
    let problem = put_problem(common::three_state(), 0.05, 1.0, INF);
    let grid = LogGrid::around_strike(1.0, 2000).unwrap();
    let settings = SolverSettings::default();
    let exhaustive =
        ordered_threshold_search(&problem, &grid, &settings, SearchMode::Exhaustive).unwrap();
    let monotone =
        ordered_threshold_search(&problem, &grid, &settings, SearchMode::Monotone).unwrap();
    assert_eq!(exhaustive.orderings_examined, 6);
    assert_eq!(monotone.orderings_examined, 1);
    for (a, b) in exhaustive
        .thresholds
        .indices
        .iter()
        .zip(&monotone.thresholds.indices)
    {
        assert!(a.abs_diff(*b) <= 1, "{a} vs {b}");
    }
    let solved = extract_thresholds(&solve(&problem, &grid), None).unwrap();
    for (a, b) in solved.indices.iter().zip(&monotone.thresholds.indices) {
        assert!(a.abs_diff(*b) <= 1, "{a} vs {b}");
    }

    let single = put_problem(common::one_state(0.2), 0.05, 1.0, INF);
    for mode in [SearchMode::Exhaustive, SearchMode::Monotone] {
        assert_eq!(
            ordered_threshold_search(&single, &grid, &settings, mode)
                .unwrap()
                .orderings_examined,
            1
        );
    }
}

#[test]
fn monotone_search_refuses_skipping_chains() {
    let model = common::chain(
        &[0.15, 0.3, 0.5],
        &[
            vec![-1.0, 0.5, 0.5],
            vec![0.7, -1.2, 0.5],
            vec![0.0, 1.0, -1.0],
        ],
    );
    let problem = put_problem(model, 0.05, 1.0, INF);
    let grid = LogGrid::around_strike(1.0, 400).unwrap();
    let err = ordered_threshold_search(
        &problem,
        &grid,
        &SolverSettings::default(),
        SearchMode::Monotone,
    )
    .unwrap_err();
    assert_eq!(err, StoppingError::NotSkipFree { row: 0, col: 2 });
    assert!(ordered_threshold_search(
        &problem,
        &grid,
        &SolverSettings::default(),
        SearchMode::Exhaustive
    )
    .is_ok());
}

#[test]
fn put_value_is_homogeneous_in_level_and_strike() {
    let model = common::three_state();
    let a = solve(
        &put_problem(model.clone(), 0.05, 1.0, INF),
        &LogGrid::around_strike(1.0, 800).unwrap(),
    );
    let b = solve(
        &put_problem(model, 0.05, 2.0, INF),
        &LogGrid::around_strike(2.0, 800).unwrap(),
    );
    for i in 0..3 {
        for j in 0..a.x.len() {
            assert!(
                (b.values[i][j] - 2.0 * a.values[i][j]).abs() <= 1e-9,
                "({i}, {j})"
            );
        }
    }
}

#[test]
fn never_stopping_for_a_negative_constant_gain() {
    let problem = StoppingProblem::new(
        common::three_state(),
        GainFunction::constant(-1.0),
        0.05,
        INF,
        ProblemForm::Plain,
    )
    .unwrap();
    let surface = solve(&problem, &LogGrid::around_strike(1.0, 400).unwrap());
    let largest = surface
        .values
        .iter()
        .flatten()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(largest <= 1e-8, "{largest}");
}

#[test]
fn finite_horizon_limits_and_monotonicity() {
    let rate = 0.05;
    let grid = LogGrid::around_strike(1.0, 600).unwrap();
    let settings = SolverSettings::default();
    let problem = |t| put_problem(common::three_state(), rate, 1.0, t);

    let zero = finite_horizon_value(&problem(0.0), &grid, 10, &settings).unwrap();
    for row in &zero.values {
        assert_eq!(row, &zero.gain);
    }

    let perpetual = solve(&problem(INF), &grid);
    let long = finite_horizon_value(&problem(50.0 / rate), &grid, 2000, &settings).unwrap();
    for i in 0..3 {
        for j in 0..grid.len() {
            let (v, p) = (long.values[i][j], perpetual.values[i][j]);
            if grid.points()[j] <= 5.0 {
                assert!((v - p).abs() <= 0.01 * p, "({i}, {j}): {v} vs {p}");
            }
        }
    }

    let mut previous = zero;
    for t in [0.5, 2.0, 8.0] {
        let surface =
            finite_horizon_value(&problem(t), &grid, (t * 50.0) as usize, &settings).unwrap();
        for (row, prev) in surface.values.iter().zip(&previous.values) {
            for (v, p) in row.iter().zip(prev) {
                assert!(*v >= p - 10.0 * settings.tol, "{v} < {p} at T = {t}");
            }
        }
        previous = surface;
    }
}

#[test]
fn solver_errors() {
    let problem = put_problem(common::one_state(0.2), 0.05, 1.0, INF);
    let settings = SolverSettings::default();
    // stopping boundary b* ≈ 0.71 sits at the bottom edge of this grid
    let coarse = LogGrid::new(0.7, 1000.0, 200).unwrap();
    assert!(matches!(
        solve_value_iteration(&problem, &coarse, &settings),
        Err(StoppingError::GridTooCoarse { state: 0, .. })
    ));

    let grid = LogGrid::around_strike(1.0, 2000).unwrap();
    let one_iteration = SolverSettings {
        max_iters: 1,
        ..settings
    };
    assert!(matches!(
        solve_value_iteration(&problem, &grid, &one_iteration),
        Err(StoppingError::NoConvergence { iterations: 1, .. })
    ));

    let x = vec![0.5, 0.75, 1.0, 1.5, 2.0];
    let gain: Vec<f64> = x.iter().map(|x: &f64| (1.0 - x).max(0.0)).collect();
    let lifted: Vec<f64> = gain.iter().map(|g| g + 0.1).collect();
    let surface = ValueSurface::from_values(x, vec![0.2], vec![lifted], gain, 1e-10);
    assert_eq!(
        extract_thresholds(&surface, None).unwrap_err(),
        StoppingError::NoContact { state: 0 }
    );

    assert!(solve_value_iteration(&problem.with_horizon(1.0).unwrap(), &grid, &settings).is_err());
    assert!(finite_horizon_value(&problem, &grid, 10, &settings).is_err());
}

#[test]
fn single_state_surface_is_vacuously_monotone() {
    let surface = solve(
        &put_problem(common::one_state(0.2), 0.05, 1.0, INF),
        &LogGrid::around_strike(1.0, 400).unwrap(),
    );
    assert!(check_monotone_surface(&surface, 0.0).passes);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn random_skip_free_instances(seed in any::<u64>()) {
        let instance = common::random_instance(3, seed);
        let problem = put_problem(instance.model, instance.rate, 1.0, INF);
        let settings = SolverSettings::default();
        let surface = solve_value_iteration(&problem, &LogGrid::around_strike(1.0, 600).unwrap(), &settings).unwrap();
        prop_assert!(surface.max_obstacle_violation() <= settings.tol);
        let report = check_monotone_surface(&surface, 10.0 * settings.tol);
        prop_assert!(report.passes, "{:?}", report);
        prop_assert!(extract_thresholds(&surface, None).unwrap().is_decreasing_within_cell());
    }
}
