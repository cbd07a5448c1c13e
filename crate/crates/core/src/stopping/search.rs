//! Threshold search over orderings of the per-state exercise boundaries.
//!
//! For a fixed ordering `b[σ(0)] ≥ b[σ(1)] ≥ …` the thresholds are updated
//! one state at a time (Gauss–Seidel), each update a bisection on the grid
//! index between the neighbours' current thresholds. The bisection predicate
//! is "stopping at the boundary node is at least as good as continuing",
//! evaluated on the value of the threshold rule itself.

use serde::Serialize;

use super::solver::{Discretization, Workspace};
use super::{chain_of, LogGrid, SolverSettings, StoppingError, StoppingProblem, ThresholdVector};

const MAX_SWEEPS: usize = 200;
const MAX_EXHAUSTIVE_STATES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    /// Every ordering of the thresholds.
    Exhaustive,
    /// Only the ordering decreasing in volatility; needs a skip-free chain.
    Monotone,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchOutcome {
    pub thresholds: ThresholdVector,
    pub orderings_examined: usize,
    /// State indices from largest to smallest threshold.
    pub best_ordering: Vec<usize>,
    /// Sum of the rule's values over the grid, the ordering selection score.
    pub score: f64,
}

struct Evaluator<'a> {
    disc: &'a Discretization,
    ws: Workspace,
    v: Vec<f64>,
}

impl Evaluator<'_> {
    fn evaluate(&mut self, thresholds: &[usize]) {
        let stop = self.disc.threshold_policy(thresholds);
        self.disc
            .evaluate_policy(&stop, 0.0, None, &mut self.v, &mut self.ws);
    }

    /// Is stopping at node `k` of `state` no worse than continuing there?
    fn stop_is_better(&mut self, thresholds: &mut [usize], state: usize, k: usize) -> bool {
        if k == 0 {
            return true;
        }
        thresholds[state] = k;
        self.evaluate(thresholds);
        self.disc.gain[k] >= self.disc.continuation(&self.v, state, k, 0.0, None)
    }

    /// Largest `k ∈ [lo, hi]` passing the predicate, assuming it holds below
    /// some cut-off and fails above.
    fn bisect(&mut self, thresholds: &mut [usize], state: usize, lo: usize, hi: usize) -> usize {
        if self.stop_is_better(thresholds, state, hi) {
            return hi;
        }
        if !self.stop_is_better(thresholds, state, lo) {
            return lo;
        }
        let (mut lo, mut hi) = (lo, hi);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.stop_is_better(thresholds, state, mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    fn search(
        &mut self,
        ordering: &[usize],
        top: usize,
    ) -> Result<(Vec<usize>, f64), StoppingError> {
        let m = ordering.len();
        let mut thresholds = vec![top / 2; m];
        for _ in 0..MAX_SWEEPS {
            let before = thresholds.clone();
            for (pos, &state) in ordering.iter().enumerate() {
                let hi = if pos == 0 {
                    top
                } else {
                    thresholds[ordering[pos - 1]]
                };
                let lo = if pos + 1 == m {
                    0
                } else {
                    thresholds[ordering[pos + 1]]
                };
                let best = self.bisect(&mut thresholds, state, lo, hi);
                thresholds[state] = best;
            }
            if thresholds == before {
                self.evaluate(&thresholds);
                let score = self.v.iter().sum();
                return Ok((thresholds, score));
            }
        }
        Err(StoppingError::NoConvergence {
            iterations: MAX_SWEEPS,
            residual: f64::NAN,
        })
    }
}

/// Lexicographic successor; false once `perm` is the last permutation.
fn next_permutation(perm: &mut [usize]) -> bool {
    let Some(i) = (1..perm.len()).rev().find(|&i| perm[i - 1] < perm[i]) else {
        return false;
    };
    let j = (i..perm.len())
        .rev()
        .find(|&j| perm[j] > perm[i - 1])
        .unwrap();
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// Searches threshold rules over orderings and keeps the one of largest value.
pub fn ordered_threshold_search(
    problem: &StoppingProblem,
    grid: &LogGrid,
    settings: &SolverSettings,
    mode: SearchMode,
) -> Result<SearchOutcome, StoppingError> {
    if problem.horizon().is_finite() {
        return Err(StoppingError::BadProblem(
            "threshold search needs the perpetual problem".into(),
        ));
    }
    let chain = chain_of(problem)?;
    let m = chain.len();
    if mode == SearchMode::Monotone {
        if let Some((row, col)) = chain.generator().first_non_tridiagonal() {
            return Err(StoppingError::NotSkipFree { row, col });
        }
    }
    if mode == SearchMode::Exhaustive && m > MAX_EXHAUSTIVE_STATES {
        return Err(StoppingError::TooManyOrderings { count: m });
    }
    let disc = Discretization::new(problem, grid)?;
    let n = disc.n;
    let top = (1..n - 1)
        .rev()
        .find(|&j| disc.gain[j] > 0.0)
        .ok_or(StoppingError::NoContact { state: 0 })?;
    let mut eval = Evaluator {
        disc: &disc,
        ws: Workspace::new(m, n),
        v: vec![0.0; m * n],
    };

    let mut ordering: Vec<usize> = (0..m).collect();
    let mut best: Option<(Vec<usize>, Vec<usize>, f64)> = None;
    let mut examined = 0;
    loop {
        let (thresholds, score) = eval.search(&ordering, top)?;
        examined += 1;
        if best
            .as_ref()
            .is_none_or(|(_, _, s)| score > *s + 1e-12 * s.abs())
        {
            best = Some((ordering.clone(), thresholds, score));
        }
        if mode == SearchMode::Monotone || !next_permutation(&mut ordering) {
            break;
        }
    }
    let (best_ordering, indices, score) = best.expect("at least one ordering");
    for (state, &k) in indices.iter().enumerate() {
        if k == 0 {
            return Err(StoppingError::NoContact { state });
        }
        if k <= 2 || k >= n - 3 {
            return Err(StoppingError::GridTooCoarse { state, index: k });
        }
    }
    Ok(SearchOutcome {
        thresholds: ThresholdVector {
            levels: indices.iter().map(|&k| grid.points()[k]).collect(),
            indices,
            contact_tol: settings.contact_tol(),
        },
        orderings_examined: examined,
        best_ordering,
        score,
    })
}
