//! Value of a threshold rule by simulation in changed time.
//!
//! For a chain, `Z` runs on the unit-volatility clock (time-scaled
//! generator), `G` is geometric Brownian motion and `Γ` grows at rate `Z⁻²`.
//! Between jumps of `Z` the stopping level is fixed, so the first passage of
//! `log G` (or of `log S = log G + rΓ` in the pricing form) is sampled exactly.
//! The original-time rule simulates `(X, Y)` directly and serves as an
//! independent route to the same number.

use serde::Serialize;

use super::passage::{first_passage, Passage};
use super::{replicate, Estimate, McConfig, McError};
use crate::chain::{time_scaled_generator, ChainModel, ChainSampler, TransitionTable};
use crate::models::{correlate_drivers, simulate_xi_with_increments, xi_system, DiffusionVolModel};
use crate::rng::{stream, Lane};
use crate::stopping::{ProblemForm, StoppingProblem, VolatilityModel};

/// Stop the first time the (undiscounted) gain argument drops below the
/// current state's level.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "levels")]
pub enum StoppingRule {
    /// Stop at time zero.
    Immediate,
    /// First changed time `ρ` with `G(ρ) < β[Z(ρ)]` (plain form) or
    /// `e^{rΓ(ρ)} G(ρ) < β[Z(ρ)]` (pricing form).
    ChangedTime(Vec<f64>),
    /// First original time `τ` with `X̃(τ) < b[Ỹ(τ)]`, simulated directly in original time.
    OriginalTime(Vec<f64>),
}

impl StoppingRule {
    fn levels(&self) -> Option<&[f64]> {
        match self {
            Self::Immediate => None,
            Self::ChangedTime(l) | Self::OriginalTime(l) => Some(l),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueEstimate {
    pub estimate: Estimate,
    /// Share of paths still running at the truncation time.
    pub truncated_fraction: f64,
    /// Upper bound on the bias from scoring truncated paths as zero.
    pub truncation_bias_bound: f64,
    /// More than 1% of paths were truncated.
    pub truncation_flagged: bool,
}

pub(crate) struct PathOutcome {
    pub payoff: f64,
    pub truncated: bool,
}

/// Shared per-problem data for the chain walkers.
pub(crate) struct ChainSetup<'a> {
    pub states: &'a [f64],
    pub rate: f64,
    pub form: ProblemForm,
    /// Truncation (or forced-stop) time in original units.
    pub cap: f64,
    /// The cap is the problem horizon, where stopping is forced.
    pub forced_at_cap: bool,
}

impl ChainSetup<'_> {
    pub fn drift_changed(&self, y: f64) -> f64 {
        match self.form {
            ProblemForm::Plain => -0.5,
            ProblemForm::Pricing => self.rate / (y * y) - 0.5,
        }
    }
}

fn cap_for(problem: &StoppingProblem, cfg: &McConfig) -> (f64, bool) {
    if problem.horizon() <= cfg.horizon_cap {
        (problem.horizon(), true)
    } else {
        (cfg.horizon_cap, false)
    }
}

/// One path of the changed-time walker. `log_level` is the log of the gain argument.
#[allow(clippy::too_many_arguments)]
fn walk_changed<R1: rand::Rng, R2: rand::Rng>(
    setup: &ChainSetup<'_>,
    table: &TransitionTable,
    gain: &dyn Fn(f64) -> f64,
    levels: &[f64],
    x0: f64,
    start: usize,
    chain_rng: &mut R1,
    asset_rng: &mut R2,
) -> PathOutcome {
    let mut sampler = ChainSampler::new(table, start, chain_rng).expect("start index checked");
    let mut log_level = x0.ln();
    let mut gamma = 0.0;
    let mut clock = 0.0;
    loop {
        let state = sampler.current_state();
        let y2 = setup.states[state].powi(2);
        let barrier = levels[state].ln();
        let window = sampler.next_jump() - clock;
        let to_cap = (setup.cap - gamma) * y2;
        let capped = to_cap <= window;
        let duration = if capped { to_cap } else { window };
        match first_passage(
            log_level - barrier,
            setup.drift_changed(setup.states[state]),
            1.0,
            duration,
            asset_rng,
        ) {
            Passage::Hit(t) => {
                gamma += t / y2;
                let level = if t == 0.0 {
                    log_level.exp()
                } else {
                    levels[state]
                };
                return PathOutcome {
                    payoff: (-setup.rate * gamma).exp() * gain(level),
                    truncated: false,
                };
            }
            Passage::Escape => {
                return PathOutcome {
                    payoff: 0.0,
                    truncated: false,
                }
            }
            Passage::Survive(d) => {
                log_level += d;
                if capped {
                    return end_at_cap(setup, gain, log_level);
                }
                gamma += duration / y2;
                clock += duration;
                sampler.step(chain_rng);
            }
        }
    }
}

fn end_at_cap(setup: &ChainSetup<'_>, gain: &dyn Fn(f64) -> f64, log_level: f64) -> PathOutcome {
    if setup.forced_at_cap {
        PathOutcome {
            payoff: (-setup.rate * setup.cap).exp() * gain(log_level.exp()),
            truncated: false,
        }
    } else {
        PathOutcome {
            payoff: 0.0,
            truncated: true,
        }
    }
}

/// One path simulated in original time with the unscaled generator.
#[allow(clippy::too_many_arguments)]
fn walk_original<R1: rand::Rng, R2: rand::Rng>(
    setup: &ChainSetup<'_>,
    table: &TransitionTable,
    gain: &dyn Fn(f64) -> f64,
    levels: &[f64],
    x0: f64,
    start: usize,
    chain_rng: &mut R1,
    asset_rng: &mut R2,
) -> PathOutcome {
    let mut sampler = ChainSampler::new(table, start, chain_rng).expect("start index checked");
    let mut log_level = x0.ln();
    let mut t = 0.0;
    loop {
        let state = sampler.current_state();
        let y2 = setup.states[state].powi(2);
        let barrier = levels[state].ln();
        let window = sampler.next_jump() - t;
        let to_cap = setup.cap - t;
        let capped = to_cap <= window;
        let duration = if capped { to_cap } else { window };
        let drift = match setup.form {
            ProblemForm::Plain => -0.5 * y2,
            ProblemForm::Pricing => setup.rate - 0.5 * y2,
        };
        match first_passage(log_level - barrier, drift, y2, duration, asset_rng) {
            Passage::Hit(h) => {
                let level = if h == 0.0 {
                    log_level.exp()
                } else {
                    levels[state]
                };
                return PathOutcome {
                    payoff: (-setup.rate * (t + h)).exp() * gain(level),
                    truncated: false,
                };
            }
            Passage::Escape => {
                return PathOutcome {
                    payoff: 0.0,
                    truncated: false,
                }
            }
            Passage::Survive(d) => {
                log_level += d;
                if capped {
                    return end_at_cap(setup, gain, log_level);
                }
                t += duration;
                sampler.step(chain_rng);
            }
        }
    }
}

fn summarize(
    outcomes: Vec<PathOutcome>,
    rate: f64,
    cap: f64,
    gain_bound: Option<f64>,
) -> Result<ValueEstimate, McError> {
    let n = outcomes.len();
    let truncated = outcomes.iter().filter(|o| o.truncated).count();
    let payoffs: Vec<f64> = outcomes.iter().map(|o| o.payoff).collect();
    let estimate = Estimate::from_samples(&payoffs);
    let truncated_fraction = truncated as f64 / n as f64;
    let truncation_bias_bound = if truncated == 0 {
        0.0
    } else {
        truncated_fraction * (-rate * cap).exp() * gain_bound.unwrap_or(f64::INFINITY)
    };
    let truncation_flagged = truncated_fraction > 0.01;
    if truncation_flagged && truncation_bias_bound > estimate.stderr {
        return Err(McError::TruncationDominates {
            fraction: truncated_fraction,
            bias_bound: truncation_bias_bound,
        });
    }
    Ok(ValueEstimate {
        estimate,
        truncated_fraction,
        truncation_bias_bound,
        truncation_flagged,
    })
}

/// Largest gain the rule can collect, used for the truncation bias bound.
fn gain_bound(problem: &StoppingProblem) -> Option<f64> {
    let gain = problem.gain();
    match gain.strike() {
        Some(k) => Some(k),
        None if gain.properties().bounded && gain.properties().decreasing => {
            Some(gain.value(0.0).abs())
        }
        None => None,
    }
}

/// Estimates the value of `rule` started from `(x0, start)`; `start` is a
/// chain state index or, for a diffusion model, ignored in favour of `y0`.
pub fn estimate_value_timechanged(
    problem: &StoppingProblem,
    rule: &StoppingRule,
    x0: f64,
    start: VolStart,
    cfg: &McConfig,
) -> Result<ValueEstimate, McError> {
    cfg.validate()?;
    if !(x0 > 0.0) {
        return Err(McError::BadConfig(format!("x0 must be positive, got {x0}")));
    }
    let gain_fn = problem.gain();
    if matches!(rule, StoppingRule::Immediate) {
        return Ok(ValueEstimate {
            estimate: Estimate::exact(gain_fn.value(x0), cfg.n_paths),
            truncated_fraction: 0.0,
            truncation_bias_bound: 0.0,
            truncation_flagged: false,
        });
    }
    let levels = rule.levels().expect("threshold rule");
    let (cap, forced_at_cap) = cap_for(problem, cfg);
    let gain = |x: f64| gain_fn.value(x);
    match (problem.model(), start) {
        (VolatilityModel::Chain(chain), VolStart::Index(start)) => {
            check_rule(chain, levels, start)?;
            let setup = ChainSetup {
                states: chain.states().as_slice(),
                rate: problem.rate(),
                form: problem.form(),
                cap,
                forced_at_cap,
            };
            let original = matches!(rule, StoppingRule::OriginalTime(_));
            let table = TransitionTable::new(&if original {
                chain.generator().clone()
            } else {
                time_scaled_generator(chain)
            });
            let outcomes = replicate(cfg.n_paths, |i| {
                let mut chain_rng = stream(cfg.seed, Lane::Chain, i as u64);
                let mut asset_rng = stream(cfg.seed, Lane::Asset, i as u64);
                if original {
                    walk_original(
                        &setup,
                        &table,
                        &gain,
                        levels,
                        x0,
                        start,
                        &mut chain_rng,
                        &mut asset_rng,
                    )
                } else {
                    walk_changed(
                        &setup,
                        &table,
                        &gain,
                        levels,
                        x0,
                        start,
                        &mut chain_rng,
                        &mut asset_rng,
                    )
                }
            });
            summarize(outcomes, problem.rate(), cap, gain_bound(problem))
        }
        (VolatilityModel::Diffusion(model), VolStart::Level(y0)) => {
            let StoppingRule::ChangedTime(levels) = rule else {
                return Err(McError::UnsupportedRule(
                    "diffusion models take a changed-time rule".into(),
                ));
            };
            let [level] = levels.as_slice() else {
                return Err(McError::UnsupportedRule(
                    "diffusion models take a single constant level".into(),
                ));
            };
            let outcomes = replicate(cfg.n_paths, |i| {
                diffusion_path(
                    problem,
                    model,
                    *level,
                    x0,
                    y0,
                    cap,
                    forced_at_cap,
                    cfg,
                    i as u64,
                )
            });
            let outcomes = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;
            summarize(outcomes, problem.rate(), cap, gain_bound(problem))
        }
        (VolatilityModel::Chain(_), VolStart::Level(_)) => Err(McError::BadConfig(
            "chain models start from a state index".into(),
        )),
        (VolatilityModel::Diffusion(_), VolStart::Index(_)) => Err(McError::BadConfig(
            "diffusion models start from a volatility level".into(),
        )),
    }
}

/// Initial volatility: a chain state index or a diffusion level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VolStart {
    Index(usize),
    Level(f64),
}

pub(crate) fn check_rule(chain: &ChainModel, levels: &[f64], start: usize) -> Result<(), McError> {
    if levels.len() != chain.len() {
        return Err(McError::UnsupportedRule(format!(
            "{} levels for {} volatility states",
            levels.len(),
            chain.len()
        )));
    }
    if levels.iter().any(|l| !(*l >= 0.0)) {
        return Err(McError::UnsupportedRule(
            "levels must be nonnegative".into(),
        ));
    }
    if start >= chain.len() {
        return Err(crate::chain::ChainError::IndexOutOfRange {
            index: start,
            len: chain.len(),
        }
        .into());
    }
    Ok(())
}

const BLOCK: usize = 1024;

/// Gridded changed-time path for a diffusion volatility, monitored at grid points.
#[allow(clippy::too_many_arguments)]
fn diffusion_path(
    problem: &StoppingProblem,
    model: &DiffusionVolModel,
    level: f64,
    x0: f64,
    y0: f64,
    cap: f64,
    forced_at_cap: bool,
    cfg: &McConfig,
    index: u64,
) -> Result<PathOutcome, McError> {
    let system = xi_system(model);
    let drivers = correlate_drivers(model.delta())?;
    let rng = stream(cfg.seed, Lane::Volatility, index);
    let signs: &[f64] = if cfg.antithetic { &[1.0, -1.0] } else { &[1.0] };
    let mut total = 0.0;
    let mut any_truncated = false;
    for &sign in signs {
        // the mirrored path replays the same stream
        let out = run_diffusion(
            problem,
            &system,
            &drivers,
            level,
            x0,
            y0,
            cap,
            forced_at_cap,
            cfg.dt,
            sign,
            &mut rng.clone(),
        )?;
        total += out.payoff;
        any_truncated |= out.truncated;
    }
    Ok(PathOutcome {
        payoff: total / signs.len() as f64,
        truncated: any_truncated,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_diffusion<R: rand::Rng>(
    problem: &StoppingProblem,
    system: &crate::models::XiSystem,
    drivers: &crate::models::CorrelatedDrivers,
    level: f64,
    x0: f64,
    y0: f64,
    cap: f64,
    forced_at_cap: bool,
    dt: f64,
    sign: f64,
    rng: &mut R,
) -> Result<PathOutcome, McError> {
    let rate = problem.rate();
    let pricing = problem.form() == ProblemForm::Pricing;
    let gain = problem.gain();
    let score = |log_g: f64, gamma: f64| {
        let arg = if pricing {
            (log_g + rate * gamma).exp()
        } else {
            log_g.exp()
        };
        (arg, (-rate * gamma).exp() * gain.value(arg))
    };
    if x0 < level {
        return Ok(PathOutcome {
            payoff: gain.value(x0),
            truncated: false,
        });
    }
    let (mut log_g, mut xi, mut gamma) = (x0.ln(), y0, 0.0);
    loop {
        let (dw, dw_xi) = drivers.increments(rng, BLOCK, dt);
        let dw_xi: Vec<f64> = dw_xi.iter().map(|d| sign * d).collect();
        let dw: Vec<f64> = dw.iter().map(|d| sign * d).collect();
        let path = simulate_xi_with_increments(system, xi, dt, &dw_xi)?;
        for k in 0..BLOCK {
            let (a, b) = (path.values[k], path.values[k + 1]);
            let step_gamma = 0.5 * dt * (1.0 / (a * a) + 1.0 / (b * b));
            if gamma + step_gamma >= cap {
                return Ok(if forced_at_cap {
                    PathOutcome {
                        payoff: (-rate * cap).exp() * gain.value(score(log_g, cap).0),
                        truncated: false,
                    }
                } else {
                    PathOutcome {
                        payoff: 0.0,
                        truncated: true,
                    }
                });
            }
            gamma += step_gamma;
            log_g += dw[k] - 0.5 * dt;
            let (arg, payoff) = score(log_g, gamma);
            if arg < level {
                return Ok(PathOutcome {
                    payoff,
                    truncated: false,
                });
            }
        }
        xi = path.values[BLOCK];
    }
}
