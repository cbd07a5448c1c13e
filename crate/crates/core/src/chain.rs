//! Finite-state continuous-time volatility chains.
//!
//! A chain lives on sorted positive volatility levels `y_1 < … < y_m` and is
//! driven by a generator (Q-matrix). After the asset is time-changed to unit
//! volatility, the chain runs on the time-scaled generator `q[i][j] / y_i²`.
//! Two copies of that chain are coupled so that they move independently until
//! they first meet and then move together; for a tridiagonal (skip-free)
//! generator the lower copy can never overtake the upper one.

use rand::Rng;
use rand_distr::Exp1;
use thiserror::Error;

/// Absolute tolerance on generator row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChainError {
    #[error("volatility state list is empty")]
    EmptyStates,
    #[error(
        "volatility states must be positive and strictly increasing (offending index {index})"
    )]
    BadStates { index: usize },
    #[error("generator is {rows}x{cols} but {expected} states were given")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        expected: usize,
    },
    #[error("bad generator row {row}: {reason}")]
    BadGenerator { row: usize, reason: String },
    #[error("generator is not tridiagonal: nonzero rate at ({row}, {col})")]
    NotTridiagonal { row: usize, col: usize },
    #[error("lower start index {lower} exceeds upper start index {upper}")]
    StartOrderViolated { lower: usize, upper: usize },
    #[error("state index {index} out of range for {len} states")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("horizon must be positive, got {0}")]
    BadHorizon(f64),
    #[error("malformed path: {0}")]
    MalformedPath(String),
    #[error("time {time} lies beyond the simulated horizon {horizon}")]
    HorizonExceeded { time: f64, horizon: f64 },
}

/// Sorted, strictly positive volatility levels.
#[derive(Debug, Clone, PartialEq)]
pub struct VolStates(Vec<f64>);

impl VolStates {
    pub fn new(states: Vec<f64>) -> Result<Self, ChainError> {
        if states.is_empty() {
            return Err(ChainError::EmptyStates);
        }
        for (i, &y) in states.iter().enumerate() {
            let sorted = i == 0 || y > states[i - 1];
            if !(y > 0.0 && y.is_finite() && sorted) {
                return Err(ChainError::BadStates { index: i });
            }
        }
        Ok(Self(states))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.0[index]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Square transition-rate matrix with nonnegative off-diagonal entries and
/// zero row sums.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    dim: usize,
    rates: Vec<f64>,
}

impl GeneratorMatrix {
    /// Builds a generator from row-major rate lists, validating its structure.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ChainError> {
        let dim = rows.len();
        let mut rates = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(ChainError::DimensionMismatch {
                    rows: dim,
                    cols: row.len(),
                    expected: dim,
                });
            }
            rates.extend_from_slice(row);
        }
        Self::from_row_major(dim, rates)
    }

    pub fn from_row_major(dim: usize, rates: Vec<f64>) -> Result<Self, ChainError> {
        if rates.len() != dim * dim {
            return Err(ChainError::DimensionMismatch {
                rows: dim,
                cols: rates.len() / dim.max(1),
                expected: dim,
            });
        }
        let g = Self { dim, rates };
        g.check()?;
        Ok(g)
    }

    fn check(&self) -> Result<(), ChainError> {
        for i in 0..self.dim {
            let row = self.row(i);
            let mut sum = 0.0;
            for (j, &q) in row.iter().enumerate() {
                if !q.is_finite() {
                    return Err(ChainError::BadGenerator {
                        row: i,
                        reason: format!("non-finite rate at column {j}"),
                    });
                }
                if i != j && q < 0.0 {
                    return Err(ChainError::BadGenerator {
                        row: i,
                        reason: format!("negative rate {q} at column {j}"),
                    });
                }
                sum += q;
            }
            if sum.abs() > ROW_SUM_TOL {
                return Err(ChainError::BadGenerator {
                    row: i,
                    reason: format!("row sums to {sum}"),
                });
            }
        }
        Ok(())
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            rates: vec![0.0; dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rates[i * self.dim + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rates[i * self.dim..(i + 1) * self.dim]
    }

    /// Total rate of leaving state `i`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.get(i, i)
    }

    /// First (row-major) entry with `|i - j| > 1` and a nonzero rate.
    pub fn first_non_tridiagonal(&self) -> Option<(usize, usize)> {
        (0..self.dim)
            .flat_map(|i| (0..self.dim).map(move |j| (i, j)))
            .find(|&(i, j)| i.abs_diff(j) > 1 && self.get(i, j) != 0.0)
    }

    pub fn is_tridiagonal(&self) -> bool {
        self.first_non_tridiagonal().is_none()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.row(i).to_vec()).collect()
    }
}

/// Volatility chain with an arbitrary (validated) generator.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainModel {
    states: VolStates,
    generator: GeneratorMatrix,
}

impl ChainModel {
    pub fn new(states: VolStates, generator: GeneratorMatrix) -> Result<Self, ChainError> {
        if generator.dim() != states.len() {
            return Err(ChainError::DimensionMismatch {
                rows: generator.dim(),
                cols: generator.dim(),
                expected: states.len(),
            });
        }
        Ok(Self { states, generator })
    }

    pub fn states(&self) -> &VolStates {
        &self.states
    }

    pub fn generator(&self) -> &GeneratorMatrix {
        &self.generator
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn is_skip_free(&self) -> bool {
        self.generator.is_tridiagonal()
    }
}

/// Chain whose generator is tridiagonal on the sorted states.
#[derive(Debug, Clone, PartialEq)]
pub struct SkipFreeChainModel(ChainModel);

impl SkipFreeChainModel {
    pub fn from_model(model: ChainModel) -> Result<Self, ChainError> {
        if let Some((row, col)) = model.generator.first_non_tridiagonal() {
            return Err(ChainError::NotTridiagonal { row, col });
        }
        Ok(Self(model))
    }

    pub fn into_inner(self) -> ChainModel {
        self.0
    }
}

impl std::ops::Deref for SkipFreeChainModel {
    type Target = ChainModel;

    fn deref(&self) -> &ChainModel {
        &self.0
    }
}

/// Checks dimensions and tridiagonality and returns the skip-free model.
pub fn validate_skip_free(
    states: VolStates,
    q: GeneratorMatrix,
) -> Result<SkipFreeChainModel, ChainError> {
    SkipFreeChainModel::from_model(ChainModel::new(states, q)?)
}

/// Generator of the chain run on the unit-volatility clock: row `i` divided by `y_i²`.
pub fn time_scaled_generator(model: &ChainModel) -> GeneratorMatrix {
    let m = model.len();
    let mut rates = Vec::with_capacity(m * m);
    for i in 0..m {
        let y2 = model.states.get(i).powi(2);
        rates.extend(model.generator.row(i).iter().map(|q| q / y2));
    }
    GeneratorMatrix { dim: m, rates }
}

/// Index of the ordered pair `(lower, upper)` in the product state space.
pub fn pair_index(m: usize, lower: usize, upper: usize) -> usize {
    lower * m + upper
}

/// Coupling generator on the `m²` ordered pairs.
///
/// Off the diagonal the two coordinates jump independently under the
/// time-scaled generator; on the diagonal they jump together.
pub fn coupling_generator(model: &SkipFreeChainModel) -> GeneratorMatrix {
    let scaled = time_scaled_generator(model);
    let m = model.len();
    let n = m * m;
    let mut rates = vec![0.0; n * n];
    for i in 0..m {
        for k in 0..m {
            let row = pair_index(m, i, k);
            if i == k {
                for j in (0..m).filter(|&j| j != i) {
                    rates[row * n + pair_index(m, j, j)] = scaled.get(i, j);
                }
                rates[row * n + row] = scaled.get(i, i);
            } else {
                for j in (0..m).filter(|&j| j != i) {
                    rates[row * n + pair_index(m, j, k)] += scaled.get(i, j);
                }
                for l in (0..m).filter(|&l| l != k) {
                    rates[row * n + pair_index(m, i, l)] += scaled.get(k, l);
                }
                rates[row * n + row] = scaled.get(i, i) + scaled.get(k, k);
            }
        }
    }
    GeneratorMatrix { dim: n, rates }
}

/// Sparse jump kernel of a generator: exit rates and cumulative destination rates.
#[derive(Debug, Clone)]
pub struct TransitionTable {
    exit: Vec<f64>,
    destinations: Vec<Vec<(usize, f64)>>,
}

impl TransitionTable {
    pub fn new(generator: &GeneratorMatrix) -> Self {
        let dim = generator.dim();
        let mut exit = Vec::with_capacity(dim);
        let mut destinations = Vec::with_capacity(dim);
        for i in 0..dim {
            let mut acc = 0.0;
            let mut dests = Vec::new();
            for (j, &q) in generator.row(i).iter().enumerate() {
                if j != i && q > 0.0 {
                    acc += q;
                    dests.push((j, acc));
                }
            }
            exit.push(acc);
            destinations.push(dests);
        }
        Self { exit, destinations }
    }

    pub fn dim(&self) -> usize {
        self.exit.len()
    }

    fn holding_time<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> f64 {
        let rate = self.exit[state];
        if rate > 0.0 {
            rng.sample::<f64, _>(Exp1) / rate
        } else {
            f64::INFINITY
        }
    }

    fn destination<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        let dests = &self.destinations[state];
        let target = rng.random::<f64>() * self.exit[state];
        dests
            .iter()
            .find(|&&(_, cum)| target < cum)
            .map_or(dests[dests.len() - 1].0, |&(j, _)| j)
    }
}

/// Piecewise-constant right-continuous trajectory of state indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPath {
    jump_times: Vec<f64>,
    states: Vec<usize>,
    horizon: f64,
}

impl ChainPath {
    /// Path that stays in `state` forever.
    pub fn constant(state: usize) -> Self {
        Self {
            jump_times: vec![0.0],
            states: vec![state],
            horizon: f64::INFINITY,
        }
    }

    /// Builds a path from explicit segments. Adjacent duplicates are merged.
    pub fn from_segments(
        jump_times: Vec<f64>,
        states: Vec<usize>,
        horizon: f64,
    ) -> Result<Self, ChainError> {
        if jump_times.is_empty() || jump_times.len() != states.len() || jump_times[0] != 0.0 {
            return Err(ChainError::MalformedPath(
                "segments must start at time 0 with one state per jump".into(),
            ));
        }
        let mut path = Self {
            jump_times: vec![0.0],
            states: vec![states[0]],
            horizon,
        };
        for (&t, &s) in jump_times.iter().zip(&states).skip(1) {
            if t <= *path.jump_times.last().unwrap() || t > horizon {
                return Err(ChainError::MalformedPath(format!(
                    "jump time {t} out of order"
                )));
            }
            path.push(t, s);
        }
        Ok(path)
    }

    fn push(&mut self, time: f64, state: usize) {
        if *self.states.last().unwrap() != state {
            self.jump_times.push(time);
            self.states.push(state);
        }
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }

    pub fn state_indices(&self) -> &[usize] {
        &self.states
    }

    /// End of the simulated range; `INFINITY` when the last state is absorbing.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn initial_state(&self) -> usize {
        self.states[0]
    }

    /// State occupied at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> Result<usize, ChainError> {
        if !(t >= 0.0 && t <= self.horizon) {
            return Err(ChainError::HorizonExceeded {
                time: t,
                horizon: self.horizon,
            });
        }
        let k = self.jump_times.partition_point(|&s| s <= t) - 1;
        Ok(self.states[k])
    }

    /// Segments `(start, end, state)`; the last segment ends at the horizon.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        (0..self.states.len()).map(move |k| {
            let end = self.jump_times.get(k + 1).copied().unwrap_or(self.horizon);
            (self.jump_times[k], end, self.states[k])
        })
    }

    /// Time spent in each state over `[0, min(t, horizon)]`.
    pub fn occupation(&self, m: usize, t: f64) -> Vec<f64> {
        let mut occ = vec![0.0; m];
        for (start, end, s) in self.segments() {
            if start >= t {
                break;
            }
            occ[s] += end.min(t) - start;
        }
        occ
    }
}

/// Incremental exact simulator of one chain path.
///
/// The pending jump time is drawn once and kept, so extending a path in
/// several steps yields the same trajectory as one long request.
pub struct ChainSampler<'t> {
    table: &'t TransitionTable,
    path: ChainPath,
    next_jump: f64,
}

impl<'t> ChainSampler<'t> {
    pub fn new<R: Rng + ?Sized>(
        table: &'t TransitionTable,
        start: usize,
        rng: &mut R,
    ) -> Result<Self, ChainError> {
        if start >= table.dim() {
            return Err(ChainError::IndexOutOfRange {
                index: start,
                len: table.dim(),
            });
        }
        let next_jump = table.holding_time(start, rng);
        let path = ChainPath {
            jump_times: vec![0.0],
            states: vec![start],
            horizon: 0.0,
        };
        Ok(Self {
            table,
            path,
            next_jump,
        })
    }

    pub fn current_state(&self) -> usize {
        *self.path.states.last().unwrap()
    }

    /// Time of the next (not yet realised) jump.
    pub fn next_jump(&self) -> f64 {
        self.next_jump
    }

    /// Extends the path so that it covers `[0, t]`.
    pub fn extend_to<R: Rng + ?Sized>(&mut self, t: f64, rng: &mut R) {
        while self.next_jump <= t {
            let from = self.current_state();
            let to = self.table.destination(from, rng);
            let at = self.next_jump;
            self.path.push(at, to);
            self.next_jump = at + self.table.holding_time(to, rng);
        }
        self.path.horizon = if self.next_jump.is_infinite() {
            f64::INFINITY
        } else {
            self.path.horizon.max(t)
        };
    }

    /// Realises exactly one more jump, returning its time and destination.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<(f64, usize)> {
        if self.next_jump.is_infinite() {
            self.path.horizon = f64::INFINITY;
            return None;
        }
        let at = self.next_jump;
        self.extend_to(at, rng);
        Some((at, self.current_state()))
    }

    pub fn path(&self) -> &ChainPath {
        &self.path
    }

    pub fn into_path(self) -> ChainPath {
        self.path
    }
}

/// Exact simulation of a chain path on `[0, horizon]`.
pub fn simulate_chain<R: Rng + ?Sized>(
    generator: &GeneratorMatrix,
    start_index: usize,
    horizon: f64,
    rng: &mut R,
) -> Result<ChainPath, ChainError> {
    if !(horizon > 0.0) {
        return Err(ChainError::BadHorizon(horizon));
    }
    let table = TransitionTable::new(generator);
    let mut sampler = ChainSampler::new(&table, start_index, rng)?;
    sampler.extend_to(horizon, rng);
    Ok(sampler.into_path())
}

/// Two chain paths generated by the coupling generator.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledChainPaths {
    pub lower: ChainPath,
    pub upper: ChainPath,
    /// First time both paths occupy the same state (`INFINITY` if never).
    pub meet_time: f64,
}

/// Reusable sampler for coupled pairs of a skip-free model.
#[derive(Debug, Clone)]
pub struct CouplingKernel {
    m: usize,
    table: TransitionTable,
}

impl CouplingKernel {
    pub fn new(model: &SkipFreeChainModel) -> Self {
        Self {
            m: model.len(),
            table: TransitionTable::new(&coupling_generator(model)),
        }
    }

    pub fn start<R: Rng + ?Sized>(
        &self,
        lower: usize,
        upper: usize,
        rng: &mut R,
    ) -> Result<CoupledSampler<'_>, ChainError> {
        for index in [lower, upper] {
            if index >= self.m {
                return Err(ChainError::IndexOutOfRange { index, len: self.m });
            }
        }
        if lower > upper {
            return Err(ChainError::StartOrderViolated { lower, upper });
        }
        let inner = ChainSampler::new(&self.table, pair_index(self.m, lower, upper), rng)?;
        Ok(CoupledSampler {
            m: self.m,
            inner,
            consumed: 1,
            lower: ChainPath {
                jump_times: vec![0.0],
                states: vec![lower],
                horizon: 0.0,
            },
            upper: ChainPath {
                jump_times: vec![0.0],
                states: vec![upper],
                horizon: 0.0,
            },
            meet_time: if lower == upper { 0.0 } else { f64::INFINITY },
        })
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        lower: usize,
        upper: usize,
        horizon: f64,
        rng: &mut R,
    ) -> Result<CoupledChainPaths, ChainError> {
        if !(horizon > 0.0) {
            return Err(ChainError::BadHorizon(horizon));
        }
        let mut sampler = self.start(lower, upper, rng)?;
        sampler.extend_to(horizon, rng);
        Ok(sampler.finish())
    }
}

/// Incremental simulator of a coupled pair.
pub struct CoupledSampler<'k> {
    m: usize,
    inner: ChainSampler<'k>,
    consumed: usize,
    lower: ChainPath,
    upper: ChainPath,
    meet_time: f64,
}

impl CoupledSampler<'_> {
    pub fn extend_to<R: Rng + ?Sized>(&mut self, t: f64, rng: &mut R) {
        self.inner.extend_to(t, rng);
        let path = self.inner.path();
        for k in self.consumed..path.states.len() {
            let at = path.jump_times[k];
            let (lo, hi) = (path.states[k] / self.m, path.states[k] % self.m);
            self.lower.push(at, lo);
            self.upper.push(at, hi);
            if lo == hi && self.meet_time.is_infinite() {
                self.meet_time = at;
            }
        }
        self.consumed = path.states.len();
        self.lower.horizon = path.horizon;
        self.upper.horizon = path.horizon;
    }

    /// Time of the next jump of either coordinate.
    pub fn next_jump(&self) -> f64 {
        self.inner.next_jump()
    }

    /// Current `(lower, upper)` state indices.
    pub fn current(&self) -> (usize, usize) {
        let pair = self.inner.current_state();
        (pair / self.m, pair % self.m)
    }

    pub fn lower(&self) -> &ChainPath {
        &self.lower
    }

    pub fn upper(&self) -> &ChainPath {
        &self.upper
    }

    pub fn meet_time(&self) -> f64 {
        self.meet_time
    }

    pub fn finish(self) -> CoupledChainPaths {
        CoupledChainPaths {
            lower: self.lower,
            upper: self.upper,
            meet_time: self.meet_time,
        }
    }
}

/// Simulates `(Z, Z′)` from ordered starts under the coupling generator.
pub fn simulate_coupled<R: Rng + ?Sized>(
    model: &SkipFreeChainModel,
    start_lower_index: usize,
    start_upper_index: usize,
    horizon: f64,
    rng: &mut R,
) -> Result<CoupledChainPaths, ChainError> {
    CouplingKernel::new(model).sample(start_lower_index, start_upper_index, horizon, rng)
}

/// Every time at which either path jumps, in increasing order.
pub fn union_grid(a: &ChainPath, b: &ChainPath) -> Vec<f64> {
    let mut grid: Vec<f64> = a.jump_times.iter().chain(&b.jump_times).copied().collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Lane};

    fn three_state() -> (VolStates, GeneratorMatrix) {
        let states = VolStates::new(vec![0.1, 0.2, 0.3]).unwrap();
        let q = GeneratorMatrix::from_rows(&[
            vec![-1.0, 1.0, 0.0],
            vec![0.5, -1.0, 0.5],
            vec![0.0, 1.0, -1.0],
        ])
        .unwrap();
        (states, q)
    }

    #[test]
    fn tridiagonal_model_is_accepted() {
        let (states, q) = three_state();
        assert!(validate_skip_free(states, q).is_ok());
    }

    #[test]
    fn skipping_rate_is_rejected_at_first_offending_entry() {
        let (states, _) = three_state();
        let q = GeneratorMatrix::from_rows(&[
            vec![-1.5, 1.0, 0.5],
            vec![0.5, -1.0, 0.5],
            vec![0.0, 1.0, -1.0],
        ])
        .unwrap();
        assert_eq!(
            validate_skip_free(states, q),
            Err(ChainError::NotTridiagonal { row: 0, col: 2 })
        );
    }

    #[test]
    fn single_state_is_skip_free() {
        let states = VolStates::new(vec![0.2]).unwrap();
        let q = GeneratorMatrix::from_rows(&[vec![0.0]]).unwrap();
        assert!(validate_skip_free(states, q).is_ok());
    }

    #[test]
    fn malformed_generators_and_states() {
        assert_eq!(VolStates::new(vec![]), Err(ChainError::EmptyStates));
        assert_eq!(
            VolStates::new(vec![0.2, 0.1]),
            Err(ChainError::BadStates { index: 1 })
        );
        assert_eq!(
            VolStates::new(vec![0.0, 0.1]),
            Err(ChainError::BadStates { index: 0 })
        );
        assert!(matches!(
            GeneratorMatrix::from_rows(&[vec![-1.0, 1.1], vec![1.0, -1.0]]),
            Err(ChainError::BadGenerator { row: 0, .. })
        ));
        assert!(matches!(
            GeneratorMatrix::from_rows(&[vec![1.0, -1.0], vec![1.0, -1.0]]),
            Err(ChainError::BadGenerator { row: 0, .. })
        ));
        // decimal rates within the row-sum tolerance
        assert!(GeneratorMatrix::from_rows(&[
            vec![-0.3, 0.1, 0.2],
            vec![0.1, -0.1, 0.0],
            vec![0.0, 0.0, 0.0]
        ])
        .is_ok());
        let states = VolStates::new(vec![0.1, 0.2]).unwrap();
        assert!(matches!(
            ChainModel::new(states, GeneratorMatrix::zeros(3)),
            Err(ChainError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn time_scaling_divides_rows_by_squared_level() {
        let states = VolStates::new(vec![1.0, 2.0]).unwrap();
        let q = GeneratorMatrix::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let model = ChainModel::new(states, q).unwrap();
        assert_eq!(
            time_scaled_generator(&model).to_rows(),
            vec![vec![-1.0, 1.0], vec![0.25, -0.25]]
        );

        let zero = ChainModel::new(
            VolStates::new(vec![0.3, 0.7]).unwrap(),
            GeneratorMatrix::zeros(2),
        )
        .unwrap();
        assert_eq!(time_scaled_generator(&zero), GeneratorMatrix::zeros(2));

        let single = ChainModel::new(
            VolStates::new(vec![0.5]).unwrap(),
            GeneratorMatrix::zeros(1),
        )
        .unwrap();
        assert_eq!(time_scaled_generator(&single).to_rows(), vec![vec![0.0]]);
    }

    #[test]
    fn coupling_generator_rows() {
        let single = validate_skip_free(
            VolStates::new(vec![0.4]).unwrap(),
            GeneratorMatrix::zeros(1),
        )
        .unwrap();
        assert_eq!(coupling_generator(&single).to_rows(), vec![vec![0.0]]);

        let states = VolStates::new(vec![1.0, 2.0]).unwrap();
        let q = GeneratorMatrix::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let model = validate_skip_free(states, q).unwrap();
        let c = coupling_generator(&model);
        let idx = |i, k| pair_index(2, i, k);
        // synchronised move from (1,1)
        assert_eq!(c.get(idx(0, 0), idx(1, 1)), 1.0);
        assert_eq!(c.get(idx(0, 0), idx(0, 1)), 0.0);
        assert_eq!(c.get(idx(0, 0), idx(1, 0)), 0.0);
        // independent moves from (1,2)
        assert_eq!(c.get(idx(0, 1), idx(1, 1)), 1.0);
        assert_eq!(c.get(idx(0, 1), idx(0, 0)), 0.25);
        assert_eq!(c.get(idx(0, 1), idx(0, 1)), -1.25);
        assert_eq!(c.get(idx(0, 1), idx(1, 0)), 0.0);
    }

    #[test]
    fn coupling_restricted_to_diagonal_is_time_scaled_chain() {
        let (states, q) = three_state();
        let model = validate_skip_free(states, q).unwrap();
        let scaled = time_scaled_generator(&model);
        let c = coupling_generator(&model);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(
                    c.get(pair_index(3, i, i), pair_index(3, j, j)),
                    scaled.get(i, j)
                );
            }
        }
        assert!(GeneratorMatrix::from_row_major(9, c.rates.clone()).is_ok());
    }

    #[test]
    fn zero_generator_gives_constant_path() {
        let mut rng = stream(1, Lane::Chain, 0);
        let path = simulate_chain(&GeneratorMatrix::zeros(2), 1, 5.0, &mut rng).unwrap();
        assert_eq!(path.jump_times(), &[0.0]);
        assert_eq!(path.state_indices(), &[1]);
        assert!(path.horizon().is_infinite());
    }

    #[test]
    fn simulation_is_deterministic_and_extension_consistent() {
        let (_, q) = three_state();
        let a = simulate_chain(&q, 1, 40.0, &mut stream(9, Lane::Chain, 2)).unwrap();
        let b = simulate_chain(&q, 1, 40.0, &mut stream(9, Lane::Chain, 2)).unwrap();
        assert_eq!(a, b);

        let table = TransitionTable::new(&q);
        let mut rng = stream(9, Lane::Chain, 2);
        let mut sampler = ChainSampler::new(&table, 1, &mut rng).unwrap();
        for t in [3.0, 10.0, 25.0, 40.0] {
            sampler.extend_to(t, &mut rng);
        }
        assert_eq!(sampler.into_path(), a);
    }

    #[test]
    fn paths_never_contain_phantom_jumps() {
        let (_, q) = three_state();
        let path = simulate_chain(&q, 0, 100.0, &mut stream(3, Lane::Chain, 0)).unwrap();
        assert!(path.state_indices().windows(2).all(|w| w[0] != w[1]));
        assert!(path.jump_times().windows(2).all(|w| w[0] < w[1]));
        assert!(path.state_at(101.0).is_err());
    }

    #[test]
    fn equal_starts_meet_immediately() {
        let (states, q) = three_state();
        let model = validate_skip_free(states, q).unwrap();
        let pair = simulate_coupled(&model, 1, 1, 20.0, &mut stream(4, Lane::Chain, 0)).unwrap();
        assert_eq!(pair.meet_time, 0.0);
        assert_eq!(pair.lower, pair.upper);
    }

    #[test]
    fn reversed_starts_are_refused() {
        let (states, q) = three_state();
        let model = validate_skip_free(states, q).unwrap();
        let err = simulate_coupled(&model, 2, 0, 1.0, &mut stream(4, Lane::Chain, 0)).unwrap_err();
        assert_eq!(err, ChainError::StartOrderViolated { lower: 2, upper: 0 });
    }

    #[test]
    fn coupled_pair_is_ordered_and_merges_after_meeting() {
        let states = VolStates::new(vec![1.0, 2.0]).unwrap();
        let q = GeneratorMatrix::from_rows(&[vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
        let model = validate_skip_free(states, q).unwrap();
        for rep in 0..200 {
            let pair =
                simulate_coupled(&model, 0, 1, 30.0, &mut stream(5, Lane::Chain, rep)).unwrap();
            for t in union_grid(&pair.lower, &pair.upper) {
                let (lo, hi) = (
                    pair.lower.state_at(t).unwrap(),
                    pair.upper.state_at(t).unwrap(),
                );
                assert!(lo <= hi);
                if t >= pair.meet_time {
                    assert_eq!(lo, hi);
                }
            }
        }
    }
}
