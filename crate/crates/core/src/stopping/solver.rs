//! Markov-chain approximation of `(log S, Y)` on a uniform log grid.
//!
//! In volatility state `i` the log price moves to a neighbouring node at
//! rates matching the mean and variance of its Gaussian increment; the chain
//! switches state at the generator rates. The obstacle problem
//! `v = max(g, Cv)` is solved by policy iteration, each policy evaluation
//! being a block-tridiagonal linear solve (blocks of size `m`).

use super::{EdgeCondition, LogGrid, ProblemForm, StoppingError, StoppingProblem, VolatilityModel};
use crate::chain::GeneratorMatrix;

pub(crate) struct Discretization {
    pub m: usize,
    pub n: usize,
    pub gain: Vec<f64>,
    up: Vec<f64>,
    down: Vec<f64>,
    exit: Vec<f64>,
    q: GeneratorMatrix,
    discount: f64,
    low_edge: f64,
    high_edge: f64,
    pub low_stops: bool,
}

/// Scratch space reused across solves.
pub(crate) struct Workspace {
    c: Vec<f64>,
    d: Vec<f64>,
    aug: Vec<f64>,
}

impl Workspace {
    pub fn new(m: usize, n: usize) -> Self {
        let interior = n.saturating_sub(2);
        Self {
            c: vec![0.0; interior * m * m],
            d: vec![0.0; interior * m],
            aug: vec![0.0; m * (2 * m + 1)],
        }
    }
}

impl Discretization {
    pub fn new(problem: &StoppingProblem, grid: &LogGrid) -> Result<Self, StoppingError> {
        let VolatilityModel::Chain(chain) = problem.model() else {
            return Err(StoppingError::UnsupportedModel(
                "grid solvers need a chain volatility model",
            ));
        };
        let h = grid.log_step();
        let m = chain.len();
        let mut up = Vec::with_capacity(m);
        let mut down = Vec::with_capacity(m);
        for &y in chain.states().as_slice() {
            let var = y * y;
            let drift = match problem.form() {
                ProblemForm::Plain => -0.5 * var,
                ProblemForm::Pricing => problem.rate() - 0.5 * var,
            };
            let diffusive = var / (2.0 * h * h);
            if drift.abs() * h <= var {
                up.push(diffusive + drift / (2.0 * h));
                down.push(diffusive - drift / (2.0 * h));
            } else {
                // upwind when central differencing would give a negative rate
                up.push(diffusive + drift.max(0.0) / h);
                down.push(diffusive + (-drift).max(0.0) / h);
            }
        }
        let gain_fn = problem.gain();
        let x = grid.points();
        let gain: Vec<f64> = x.iter().map(|&x| gain_fn.value(x)).collect();
        let edge = |e: EdgeCondition, g: f64| match e {
            EdgeCondition::Exercise => g,
            EdgeCondition::Value(c) => c,
        };
        let n = x.len();
        Ok(Self {
            m,
            n,
            up,
            down,
            exit: (0..m).map(|i| chain.generator().exit_rate(i)).collect(),
            q: chain.generator().clone(),
            discount: problem.rate(),
            low_edge: edge(gain_fn.low_edge(), gain[0]),
            high_edge: edge(gain_fn.high_edge(), gain[n - 1]),
            low_stops: gain_fn.low_edge() == EdgeCondition::Exercise,
            gain,
        })
    }

    /// Stop flags for the given per-state threshold indices (stop on `1..=k`).
    pub fn threshold_policy(&self, thresholds: &[usize]) -> Vec<bool> {
        let mut stop = vec![false; self.m * self.n];
        for (i, &k) in thresholds.iter().enumerate() {
            stop[i * self.n] = self.low_stops;
            for j in 1..=k.min(self.n - 2) {
                stop[i * self.n + j] = true;
            }
        }
        stop
    }

    /// Value of continuing one more instant at interior node `(i, j)`.
    pub fn continuation(
        &self,
        v: &[f64],
        i: usize,
        j: usize,
        extra_diag: f64,
        carry: Option<&[f64]>,
    ) -> f64 {
        let n = self.n;
        let mut num = self.up[i] * v[i * n + j + 1] + self.down[i] * v[i * n + j - 1];
        for k in (0..self.m).filter(|&k| k != i) {
            num += self.q.get(i, k) * v[k * n + j];
        }
        if let Some(prev) = carry {
            num += extra_diag * prev[i * n + j];
        }
        num / (self.discount + self.up[i] + self.down[i] + self.exit[i] + extra_diag)
    }

    /// Evaluates a fixed stop/continue policy. `carry` is the previous time
    /// layer when `extra_diag = 1/dt > 0`.
    pub fn evaluate_policy(
        &self,
        stop: &[bool],
        extra_diag: f64,
        carry: Option<&[f64]>,
        v: &mut [f64],
        ws: &mut Workspace,
    ) {
        let (m, n) = (self.m, self.n);
        for i in 0..m {
            v[i * n] = self.low_edge;
            v[i * n + n - 1] = self.high_edge;
        }
        let interior = n - 2;
        let width = 2 * m + 1;
        let mut lower = vec![0.0; m];
        for jj in 0..interior {
            let j = jj + 1;
            let aug = &mut ws.aug;
            aug.iter_mut().for_each(|a| *a = 0.0);
            for i in 0..m {
                let row = &mut aug[i * width..(i + 1) * width];
                if stop[i * n + j] {
                    row[i] = 1.0;
                    row[2 * m] = self.gain[j];
                    lower[i] = 0.0;
                    continue;
                }
                row[i] = self.discount + self.up[i] + self.down[i] + self.exit[i] + extra_diag;
                for k in (0..m).filter(|&k| k != i) {
                    row[k] = -self.q.get(i, k);
                }
                let mut rhs = carry.map_or(0.0, |prev| extra_diag * prev[i * n + j]);
                if j == 1 {
                    rhs += self.down[i] * self.low_edge;
                    lower[i] = 0.0;
                } else {
                    lower[i] = self.down[i];
                }
                if j == n - 2 {
                    rhs += self.up[i] * self.high_edge;
                } else {
                    row[m + i] = self.up[i];
                }
                row[2 * m] = rhs;
            }
            if jj > 0 {
                // M = D + diag(lower) C_prev, rhs = r + diag(lower) d_prev
                let (c_prev, d_prev) = (
                    &ws.c[(jj - 1) * m * m..jj * m * m],
                    &ws.d[(jj - 1) * m..jj * m],
                );
                for i in 0..m {
                    if lower[i] == 0.0 {
                        continue;
                    }
                    for k in 0..m {
                        aug[i * width + k] += lower[i] * c_prev[i * m + k];
                    }
                    aug[i * width + 2 * m] += lower[i] * d_prev[i];
                }
            }
            solve_block(m, aug);
            for i in 0..m {
                for k in 0..m {
                    ws.c[jj * m * m + i * m + k] = -aug[i * width + m + k];
                }
                ws.d[jj * m + i] = aug[i * width + 2 * m];
            }
        }
        // back substitution: v_j = d_j - C_j v_{j+1}
        for i in 0..m {
            v[i * n + interior] = ws.d[(interior - 1) * m + i];
        }
        for jj in (0..interior - 1).rev() {
            let j = jj + 1;
            for i in 0..m {
                let mut val = ws.d[jj * m + i];
                for k in 0..m {
                    val -= ws.c[jj * m * m + i * m + k] * v[k * n + j + 1];
                }
                v[i * n + j] = val;
            }
        }
    }

    /// Policy iteration for `v = max(g, Cv)`; `stop` holds the starting policy
    /// and is updated in place.
    pub fn policy_iteration(
        &self,
        stop: &mut [bool],
        extra_diag: f64,
        carry: Option<&[f64]>,
        tol: f64,
        max_iters: usize,
        ws: &mut Workspace,
    ) -> Result<(Vec<f64>, usize, f64), StoppingError> {
        let (m, n) = (self.m, self.n);
        let mut v = vec![0.0; m * n];
        for i in 0..m {
            stop[i * n] = self.low_stops;
            stop[i * n + n - 1] = false;
        }
        let mut residual = f64::INFINITY;
        for iteration in 1..=max_iters {
            self.evaluate_policy(stop, extra_diag, carry, &mut v, ws);
            let mut changed = false;
            residual = 0.0;
            for i in 0..m {
                for j in 1..n - 1 {
                    let cont = self.continuation(&v, i, j, extra_diag, carry);
                    let target = self.gain[j].max(cont);
                    residual = f64::max(residual, (v[i * n + j] - target).abs());
                    let s = self.gain[j] > cont;
                    if s != stop[i * n + j] {
                        stop[i * n + j] = s;
                        changed = true;
                    }
                }
            }
            if !changed {
                return if residual <= tol {
                    Ok((v, iteration, residual))
                } else {
                    Err(StoppingError::NoConvergence {
                        iterations: iteration,
                        residual,
                    })
                };
            }
        }
        Err(StoppingError::NoConvergence {
            iterations: max_iters,
            residual,
        })
    }
}

/// Gaussian elimination with partial pivoting on an `m × (2m+1)` augmented
/// block; on return columns `m..` hold the solution.
fn solve_block(m: usize, aug: &mut [f64]) {
    let width = 2 * m + 1;
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&a, &b| {
                aug[a * width + col]
                    .abs()
                    .total_cmp(&aug[b * width + col].abs())
            })
            .unwrap();
        if pivot != col {
            for c in 0..width {
                aug.swap(col * width + c, pivot * width + c);
            }
        }
        let p = aug[col * width + col];
        for c in col..width {
            aug[col * width + c] /= p;
        }
        for r in (0..m).filter(|&r| r != col) {
            let f = aug[r * width + col];
            if f != 0.0 {
                for c in col..width {
                    aug[r * width + c] -= f * aug[col * width + c];
                }
            }
        }
    }
}
