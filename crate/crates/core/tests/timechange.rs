mod common;

use proptest::prelude::*;
use rand::Rng;
use volstop::rng::{stream, Lane};
use volstop::*;

fn sqrt_one_plus(dt: f64) -> TimeChangePath {
    let n = (1.0 / dt).round() as usize;
    let xi: Vec<f64> = (0..=n).map(|k| (1.0 + k as f64 * dt).sqrt()).collect();
    gamma_from_samples(&xi, dt).unwrap()
}

#[test]
fn trapezoid_matches_log_two() {
    let gamma = sqrt_one_plus(1e-3).gamma(1.0).unwrap();
    assert!((gamma - std::f64::consts::LN_2).abs() < 1e-6, "{gamma}");
}

#[test]
fn halving_the_step_at_least_halves_the_error() {
    let err = |dt: f64| (sqrt_one_plus(dt).gamma(1.0).unwrap() - std::f64::consts::LN_2).abs();
    let (coarse, fine) = (err(1e-2), err(5e-3));
    assert!(fine <= 0.5 * coarse, "{coarse} -> {fine}");
}

fn random_path(seed: u64) -> (TimeChangePath, ChainPath) {
    let model = common::three_state();
    let scaled = time_scaled_generator(&model);
    let path = simulate_chain(&scaled, 1, 10.0, &mut stream(seed, Lane::Chain, 0)).unwrap();
    (gamma_from_chain(&path, model.states()), path)
}

#[test]
fn round_trip_is_exact_on_chain_paths() {
    let mut rng = stream(3, Lane::Auxiliary, 0);
    for seed in 0..50 {
        let (tc, _) = random_path(seed);
        for _ in 0..100 {
            let t = rng.random_range(0.0..tc.horizon());
            let back = tc.inverse(tc.gamma(t).unwrap()).unwrap();
            assert!(
                (back - t).abs() <= 8.0 * f64::EPSILON * t.max(1.0),
                "{back} vs {t}"
            );
            let s = rng.random_range(0.0..tc.range_end());
            let forth = tc.gamma(tc.inverse(s).unwrap()).unwrap();
            assert!(
                (forth - s).abs() <= 8.0 * f64::EPSILON * s.max(1.0),
                "{forth} vs {s}"
            );
        }
    }
}

#[test]
fn coupled_chain_pair_never_reverses_the_time_change() {
    let model = SkipFreeChainModel::from_model(common::three_state()).unwrap();
    for seed in 0..200 {
        let pair = simulate_coupled(&model, 0, 2, 5.0, &mut stream(seed, Lane::Chain, 0)).unwrap();
        let lower = gamma_from_chain(&pair.lower, model.states());
        let upper = gamma_from_chain(&pair.upper, model.states());
        let mut grid = volstop::chain::union_grid(&pair.lower, &pair.upper);
        grid.push(5.0);
        let report = compare(&lower, &upper, &grid).unwrap();
        assert!(report.holds, "seed {seed}: {report:?}");
    }
}

#[test]
fn identical_paths_compare_equal() {
    let (tc, _) = random_path(9);
    let grid: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
    let report = compare(&tc, &tc, &grid).unwrap();
    assert!(report.holds);
    assert_eq!(report.max_violation, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// `s < Γ(t)` exactly when `A(s) < t`, away from ties.
    #[test]
    fn strict_inequalities_correspond(seed in 0u64..1000, u in 0.0f64..1.0, w in 0.0f64..1.0) {
        let (tc, _) = random_path(seed);
        let t = u * tc.horizon();
        let s = w * tc.range_end();
        let (gamma_t, a_s) = (tc.gamma(t).unwrap(), tc.inverse(s).unwrap());
        prop_assume!((s - gamma_t).abs() > 1e-9 && (a_s - t).abs() > 1e-9);
        prop_assert_eq!(s < gamma_t, a_s < t);
    }
}
