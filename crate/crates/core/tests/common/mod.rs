//! Independent oracles and instance generators shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use volstop::stopping::{GainFunction, ProblemForm, StoppingProblem};
use volstop::{ChainModel, GeneratorMatrix, VolStates};

/// Perpetual American put under constant volatility, by smooth pasting:
/// `b* = 2rK/(2r+σ²)` and `v(x) = (K−b*)(x/b*)^{−2r/σ²}` above `b*`.
#[derive(Debug, Clone, Copy)]
pub struct PerpetualPut {
    pub sigma: f64,
    pub rate: f64,
    pub strike: f64,
}

impl PerpetualPut {
    pub fn threshold(&self) -> f64 {
        2.0 * self.rate * self.strike / (2.0 * self.rate + self.sigma * self.sigma)
    }

    pub fn value(&self, x: f64) -> f64 {
        let b = self.threshold();
        if x <= b {
            self.strike - x
        } else {
            (self.strike - b) * (x / b).powf(-2.0 * self.rate / (self.sigma * self.sigma))
        }
    }
}

/// Bermudan put with `dates` equally spaced exercise dates on `(0, T]` and
/// exercise allowed at time 0, under `dS = rS dt + σS dW`: backward induction
/// with trapezoidal Gaussian quadrature on a log grid. Stops early once the
/// value function is stationary.
pub fn bermudan_put(
    sigma: f64,
    rate: f64,
    strike: f64,
    horizon: f64,
    dates: usize,
    x0: f64,
) -> f64 {
    let dt = horizon / dates as f64;
    let (lo, hi, h) = ((strike * 0.02).ln(), (strike * 50.0).ln(), 0.002);
    let n = ((hi - lo) / h).ceil() as usize + 1;
    let u: Vec<f64> = (0..n).map(|j| lo + j as f64 * h).collect();
    let g: Vec<f64> = u.iter().map(|&u| (strike - u.exp()).max(0.0)).collect();
    let dz = 0.1;
    let nodes: Vec<(f64, f64)> = (0..=160)
        .map(|i| {
            let z = -8.0 + i as f64 * dz;
            (
                z,
                dz * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            )
        })
        .collect();
    let drift = (rate - 0.5 * sigma * sigma) * dt;
    let sd = sigma * dt.sqrt();
    let disc = (-rate * dt).exp();
    let interp = |v: &[f64], x: f64| -> f64 {
        if x <= lo {
            return (strike - x.exp()).max(0.0);
        }
        if x >= hi {
            return 0.0;
        }
        let p = (x - lo) / h;
        let j = (p.floor() as usize).min(n - 2);
        let w = p - j as f64;
        v[j] * (1.0 - w) + v[j + 1] * w
    };
    let mut v = g.clone();
    for _ in 0..dates {
        let next: Vec<f64> = (0..n)
            .map(|j| {
                let c: f64 = nodes
                    .iter()
                    .map(|&(z, w)| w * interp(&v, u[j] + drift + sd * z))
                    .sum();
                g[j].max(disc * c)
            })
            .collect();
        let change = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if change < 1e-15 {
            break;
        }
    }
    interp(&v, x0.ln())
}

pub fn one_state(sigma: f64) -> ChainModel {
    ChainModel::new(
        VolStates::new(vec![sigma]).unwrap(),
        GeneratorMatrix::zeros(1),
    )
    .unwrap()
}

pub fn chain(states: &[f64], rows: &[Vec<f64>]) -> ChainModel {
    ChainModel::new(
        VolStates::new(states.to_vec()).unwrap(),
        GeneratorMatrix::from_rows(rows).unwrap(),
    )
    .unwrap()
}

/// Skip-free three-state chain used across tests.
pub fn three_state() -> ChainModel {
    chain(
        &[0.15, 0.3, 0.5],
        &[
            vec![-0.5, 0.5, 0.0],
            vec![0.7, -1.2, 0.5],
            vec![0.0, 1.0, -1.0],
        ],
    )
}

pub fn put_problem(model: ChainModel, rate: f64, strike: f64, horizon: f64) -> StoppingProblem {
    StoppingProblem::new(
        model,
        GainFunction::put(strike).unwrap(),
        rate,
        horizon,
        ProblemForm::Pricing,
    )
    .unwrap()
}

/// Random skip-free put instance:
/// `y1 ~ U[0.1, 0.2]`, `y_{i+1} = y_i + U[0.05, 0.2]`,
/// neighbour rates `q[i][i±1] ~ U[0.1, 2]`, `r ~ U[0.02, 0.1]`, `K = 1`.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub model: ChainModel,
    pub rate: f64,
}

pub fn random_instance(m: usize, seed: u64) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = vec![rng.random_range(0.1..0.2)];
    for _ in 1..m {
        let next = states.last().unwrap() + rng.random_range(0.05..0.2);
        states.push(next);
    }
    let mut rows = vec![vec![0.0; m]; m];
    for i in 0..m {
        if i > 0 {
            rows[i][i - 1] = rng.random_range(0.1..2.0);
        }
        if i + 1 < m {
            rows[i][i + 1] = rng.random_range(0.1..2.0);
        }
        rows[i][i] = -rows[i].iter().sum::<f64>();
    }
    RandomInstance {
        model: chain(&states, &rows),
        rate: rng.random_range(0.02..0.1),
    }
}

/// `|ln a − ln b| ≤ cells · h`.
pub fn within_cells(a: f64, b: f64, h: f64, cells: f64) -> bool {
    (a.ln() - b.ln()).abs() <= cells * h * (1.0 + 1e-9)
}
