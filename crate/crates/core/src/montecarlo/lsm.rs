//! Regression lower bound for the finite-horizon problem with chain volatility.
//!
//! Exercise dates are `t_k = kT/n`. Between dates the asset is simulated
//! exactly given the chain path: `log X` moves by a Gaussian with variance
//! `∫Y²` (plus the drift `r Δt` in the pricing form). A first set of paths
//! fits per-date, per-state continuation values on a monomial basis; the rule
//! they define is then scored on an independent set of paths, which makes the
//! estimate a lower bound up to Monte Carlo error.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::estimator::VolStart;
use super::{replicate, Estimate, McConfig, McError};
use crate::chain::{ChainModel, ChainSampler, TransitionTable};
use crate::rng::{stream, Lane, StreamRng};
use crate::stopping::{ProblemForm, StoppingProblem, VolatilityModel};

/// Monomials `u^p`, `p = 0..=degree`, of the standardized level
/// `u = (x/K − mean)/sd`, fitted separately per date and volatility state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BasisSpec {
    pub degree: usize,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self { degree: 3 }
    }
}

impl BasisSpec {
    fn size(&self) -> usize {
        self.degree + 1
    }

    fn eval(&self, x: f64, out: &mut [f64]) {
        let mut p = 1.0;
        for slot in out.iter_mut() {
            *slot = p;
            p *= x;
        }
    }
}

/// Continuation fit on one (date, state) cell.
struct Fit {
    center: f64,
    scale: f64,
    beta: DVector<f64>,
}

impl Fit {
    fn predict(&self, basis: &BasisSpec, x: f64, row: &mut [f64]) -> f64 {
        basis.eval((x - self.center) / self.scale, row);
        row.iter().zip(self.beta.iter()).map(|(a, b)| a * b).sum()
    }
}

/// Least squares via the SVD of the Gram matrix, dropping directions whose
/// singular value is below `1e-12` of the largest.
fn fit_cell(basis: &BasisSpec, xs: &[f64], ys: &[f64]) -> Option<Fit> {
    let n = xs.len() as f64;
    let center = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - center).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if sd > 0.0 { sd } else { 1.0 };
    let size = basis.size();
    let mut gram = DMatrix::<f64>::zeros(size, size);
    let mut rhs = DVector::<f64>::zeros(size);
    let mut row = vec![0.0; size];
    for (&x, &y) in xs.iter().zip(ys) {
        basis.eval((x - center) / scale, &mut row);
        for a in 0..size {
            rhs[a] += row[a] * y;
            for b in 0..size {
                gram[(a, b)] += row[a] * row[b];
            }
        }
    }
    let svd = gram.svd(true, true);
    let eps = 1e-12 * svd.singular_values.max();
    let beta = svd.solve(&rhs, eps).ok()?;
    beta.iter().all(|b| b.is_finite()).then_some(Fit {
        center,
        scale,
        beta,
    })
}

struct Simulator<'a> {
    chain: &'a ChainModel,
    table: TransitionTable,
    dates: usize,
    dt: f64,
    drift: f64,
}

struct DatedPath {
    levels: Vec<f64>,
    states: Vec<u16>,
}

impl Simulator<'_> {
    /// Walks one path date by date, calling `visit(k, level, state)` until it returns true.
    fn walk(
        &self,
        x0: f64,
        start: usize,
        chain_rng: &mut StreamRng,
        asset_rng: &mut StreamRng,
        mut visit: impl FnMut(usize, f64, usize) -> bool,
    ) {
        let mut sampler =
            ChainSampler::new(&self.table, start, chain_rng).expect("start index checked");
        let states = self.chain.states();
        let mut log_x = x0.ln();
        if visit(0, x0, start) {
            return;
        }
        let mut clock = 0.0;
        for k in 1..=self.dates {
            let until = k as f64 * self.dt;
            let mut integrated = 0.0;
            while sampler.next_jump() < until {
                let jump = sampler.next_jump();
                integrated += (jump - clock) * states.get(sampler.current_state()).powi(2);
                clock = jump;
                sampler.step(chain_rng);
            }
            integrated += (until - clock) * states.get(sampler.current_state()).powi(2);
            clock = until;
            let z: f64 = asset_rng.sample(StandardNormal);
            log_x += self.drift * self.dt - 0.5 * integrated + integrated.sqrt() * z;
            if visit(k, log_x.exp(), sampler.current_state()) {
                return;
            }
        }
    }
}

/// Lower bound on `v(x0, y_start)` for the horizon-`T` problem.
pub fn ls_lower_bound_finite_t(
    problem: &StoppingProblem,
    x0: f64,
    start: VolStart,
    basis: BasisSpec,
    exercise_dates: usize,
    cfg: &McConfig,
) -> Result<Estimate, McError> {
    cfg.validate()?;
    let horizon = problem.horizon();
    if !horizon.is_finite() {
        return Err(McError::BadConfig(
            "the regression bound needs a finite horizon".into(),
        ));
    }
    let VolatilityModel::Chain(chain) = problem.model() else {
        return Err(McError::UnsupportedRule(
            "the regression bound needs a chain model".into(),
        ));
    };
    let VolStart::Index(start) = start else {
        return Err(McError::BadConfig(
            "chain models start from a state index".into(),
        ));
    };
    if start >= chain.len() {
        return Err(crate::chain::ChainError::IndexOutOfRange {
            index: start,
            len: chain.len(),
        }
        .into());
    }
    if !(x0 > 0.0) {
        return Err(McError::BadConfig(format!("x0 must be positive, got {x0}")));
    }
    let gain = problem.gain();
    if horizon == 0.0 || exercise_dates == 0 {
        return Ok(Estimate::exact(gain.value(x0), cfg.n_paths));
    }
    let rate = problem.rate();
    let scale = gain.strike().unwrap_or(x0);
    let sim = Simulator {
        chain,
        table: TransitionTable::new(chain.generator()),
        dates: exercise_dates,
        dt: horizon / exercise_dates as f64,
        drift: if problem.form() == ProblemForm::Pricing {
            rate
        } else {
            0.0
        },
    };
    let discount = |k: usize| (-rate * k as f64 * sim.dt).exp();
    let m = chain.len();
    let size = basis.size();

    // regression pass
    let offset = cfg.n_paths as u64;
    let paths: Vec<DatedPath> = replicate(cfg.n_paths, |i| {
        let mut chain_rng = stream(cfg.seed, Lane::Regression, 2 * i as u64);
        let mut asset_rng = stream(cfg.seed, Lane::Regression, 2 * i as u64 + 1);
        let mut path = DatedPath {
            levels: Vec::with_capacity(sim.dates + 1),
            states: Vec::with_capacity(sim.dates + 1),
        };
        sim.walk(x0, start, &mut chain_rng, &mut asset_rng, |_, x, s| {
            path.levels.push(x);
            path.states.push(s as u16);
            false
        });
        path
    });
    let mut cash: Vec<f64> = paths
        .iter()
        .map(|p| discount(sim.dates) * gain.value(p.levels[sim.dates]))
        .collect();
    // fits[k][state]; None means never exercise there
    let mut fits: Vec<Vec<Option<Fit>>> = (0..sim.dates)
        .map(|_| (0..m).map(|_| None).collect())
        .collect();
    let mut row = vec![0.0; size];
    for k in (1..sim.dates).rev() {
        for state in 0..m {
            let itm: Vec<usize> = (0..paths.len())
                .filter(|&i| {
                    paths[i].states[k] as usize == state && gain.value(paths[i].levels[k]) > 0.0
                })
                .collect();
            if itm.len() < size {
                continue;
            }
            let xs: Vec<f64> = itm.iter().map(|&i| paths[i].levels[k] / scale).collect();
            let ys: Vec<f64> = itm.iter().map(|&i| cash[i]).collect();
            let fit =
                fit_cell(&basis, &xs, &ys).ok_or(McError::RegressionSingular { date: k, state })?;
            for (&i, &x) in itm.iter().zip(&xs) {
                let exercise = discount(k) * gain.value(paths[i].levels[k]);
                if exercise > fit.predict(&basis, x, &mut row) {
                    cash[i] = exercise;
                }
            }
            fits[k][state] = Some(fit);
        }
    }
    let continuation0 = super::pairwise_sum(&cash) / cash.len() as f64;
    drop(paths);
    if gain.value(x0) >= continuation0 {
        return Ok(Estimate::exact(gain.value(x0), cfg.n_paths));
    }

    // evaluation pass on independent streams
    let payoffs = replicate(cfg.n_paths, |i| {
        let mut chain_rng = stream(cfg.seed, Lane::Chain, offset + i as u64);
        let mut asset_rng = stream(cfg.seed, Lane::Asset, offset + i as u64);
        let mut payoff = 0.0;
        let mut row = vec![0.0; size];
        sim.walk(x0, start, &mut chain_rng, &mut asset_rng, |k, x, s| {
            let g = gain.value(x);
            if k == sim.dates {
                payoff = discount(k) * g;
                return true;
            }
            if k == 0 || g <= 0.0 {
                return false;
            }
            let Some(fit) = &fits[k][s] else { return false };
            if discount(k) * g > fit.predict(&basis, x / scale, &mut row) {
                payoff = discount(k) * g;
                return true;
            }
            false
        });
        payoff
    });
    Ok(Estimate::from_samples(&payoffs))
}
