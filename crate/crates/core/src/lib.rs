//! Time-change and coupling machinery for optimal stopping problems driven by
//! a volatility-modulated martingale `dX = a(X) Y dB`.
//!
//! The crate is organised bottom-up:
//!
//! * [`chain`]: finite-state volatility chains, the time-scaled generator and
//!   the meet-then-move-together coupling, with exact path simulation.
//! * [`timechange`]: the additive functional `Γ(t) = ∫ vol⁻²` and its inverse.
//! * [`models`]: Hull–White, Heston and generic diffusion volatility models,
//!   their Bessel-coordinate simulation and the time-changed pair `(X̃, Ỹ)`.
//! * [`stopping`]: grid solvers for the perpetual and finite-horizon
//!   regime-switching American put and its exercise thresholds.
//! * [`montecarlo`]: time-changed value estimators, coupled monotonicity
//!   verification, continuity probes and a regression lower bound.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod chain;
pub mod models;
pub mod montecarlo;
pub mod rng;
pub mod stopping;
pub mod timechange;

pub use chain::{
    coupling_generator, simulate_chain, simulate_coupled, time_scaled_generator,
    validate_skip_free, ChainError, ChainModel, ChainPath, CoupledChainPaths, GeneratorMatrix,
    SkipFreeChainModel, VolStates,
};
pub use models::{DiffusionVolModel, ModelError, XiSystem};
pub use timechange::{
    compare, gamma_from_chain, gamma_from_samples, TimeChangeError, TimeChangePath,
};
