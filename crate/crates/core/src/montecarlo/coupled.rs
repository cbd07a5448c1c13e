//! Pathwise comparison of the value of one stopping rule from two ordered
//! volatility starts, on a single probability space.
//!
//! Both runs share the asset driver `G`. For a chain, `(Z, Z′)` follow the
//! coupling generator; for a diffusion, `ξ` and `ξ′` share the driving noise.
//! The rule is read off the lower run, and both runs are scored at the same
//! changed time `ρ`.

use serde::Serialize;

use super::estimator::{check_rule, StoppingRule};
use super::passage::{first_passage, Passage};
use super::{replicate, Estimate, McConfig, McError};
use crate::chain::{CouplingKernel, SkipFreeChainModel};
use crate::models::{correlate_drivers, simulate_xi_with_increments, xi_system};
use crate::rng::{stream, Lane};
use crate::stopping::{ProblemForm, StoppingProblem, VolatilityModel};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counterexample {
    pub path: usize,
    /// Changed time of the violation.
    pub time: f64,
    pub kind: &'static str,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairedReport {
    pub paths: usize,
    pub lower: Estimate,
    pub upper: Estimate,
    /// Upper minus lower, paired by path.
    pub difference: Estimate,
    /// Paths on which the volatility order `Z ≤ Z′` failed somewhere.
    pub volatility_order_violations: usize,
    /// Paths on which `Γ ≥ Γ′` failed somewhere.
    pub time_change_violations: usize,
    /// Paths on which the lower payoff exceeded the upper one.
    pub payoff_violations: usize,
    pub truncated_paths: usize,
    pub first_violation: Option<Counterexample>,
}

impl PairedReport {
    pub fn passes(&self) -> bool {
        self.volatility_order_violations == 0
            && self.time_change_violations == 0
            && self.payoff_violations == 0
    }

    fn from_pairs(pairs: Vec<PairOutcome>) -> Result<Self, McError> {
        let paths = pairs.len();
        if let Some((path, p)) = pairs.iter().enumerate().find(|(_, p)| p.gain_at_stop < 0.0) {
            return Err(McError::RuleStopsAtNegativeGain {
                path,
                gain: p.gain_at_stop,
            });
        }
        let lower: Vec<f64> = pairs.iter().map(|p| p.lower).collect();
        let upper: Vec<f64> = pairs.iter().map(|p| p.upper).collect();
        let diff: Vec<f64> = pairs.iter().map(|p| p.upper - p.lower).collect();
        let count = |f: fn(&PairOutcome) -> bool| pairs.iter().filter(|p| f(p)).count();
        let first_violation = pairs.iter().enumerate().find_map(|(path, p)| {
            p.violation.clone().map(|mut c| {
                c.path = path;
                c
            })
        });
        Ok(Self {
            paths,
            lower: Estimate::from_samples(&lower),
            upper: Estimate::from_samples(&upper),
            difference: Estimate::from_samples(&diff),
            volatility_order_violations: count(|p| p.vol_violation),
            time_change_violations: count(|p| p.gamma_violation),
            payoff_violations: count(|p| p.lower > p.upper),
            truncated_paths: count(|p| p.truncated),
            first_violation,
        })
    }
}

#[derive(Default)]
struct PairOutcome {
    lower: f64,
    upper: f64,
    gain_at_stop: f64,
    vol_violation: bool,
    gamma_violation: bool,
    truncated: bool,
    violation: Option<Counterexample>,
}

impl PairOutcome {
    fn note(&mut self, time: f64, kind: &'static str, lower: f64, upper: f64) {
        if self.violation.is_none() {
            self.violation = Some(Counterexample {
                path: 0,
                time,
                kind,
                lower,
                upper,
            });
        }
    }

    /// Scores both runs at the stop. `log_level` is the rule's log gain argument
    /// on the lower run.
    fn score(
        &mut self,
        problem: &StoppingProblem,
        log_level: f64,
        gamma: f64,
        gamma_upper: f64,
        time: f64,
    ) {
        let rate = problem.rate();
        let gain = problem.gain();
        let level = log_level.exp();
        let upper_level = match problem.form() {
            ProblemForm::Plain => level,
            // e^{rΓ′} G = e^{rΓ} G · e^{−r(Γ − Γ′)}
            ProblemForm::Pricing => (log_level - rate * (gamma - gamma_upper)).exp(),
        };
        self.gain_at_stop = gain.value(level);
        self.lower = (-rate * gamma).exp() * self.gain_at_stop;
        self.upper = (-rate * gamma_upper).exp() * gain.value(upper_level);
        if self.lower > self.upper {
            self.note(time, "payoff", self.lower, self.upper);
        }
    }
}

fn skip_free(problem: &StoppingProblem) -> Result<SkipFreeChainModel, McError> {
    let VolatilityModel::Chain(chain) = problem.model() else {
        return Err(McError::UnsupportedRule(
            "chain coupling needs a chain model".into(),
        ));
    };
    if let Some((row, col)) = chain.generator().first_non_tridiagonal() {
        return Err(McError::NotSkipFree { row, col });
    }
    Ok(SkipFreeChainModel::from_model(chain.clone())?)
}

/// Coupled chain runs from state indices `low ≤ high`, rule thresholds applied
/// to the lower run, checked exactly on every segment up to the stop.
pub fn verify_monotonicity_coupled(
    problem: &StoppingProblem,
    x0: f64,
    low: usize,
    high: usize,
    rule: &StoppingRule,
    cfg: &McConfig,
) -> Result<PairedReport, McError> {
    cfg.validate()?;
    let model = skip_free(problem)?;
    let levels = match rule {
        StoppingRule::ChangedTime(l) => l.clone(),
        StoppingRule::Immediate => vec![f64::INFINITY; model.len()],
        StoppingRule::OriginalTime(_) => {
            return Err(McError::UnsupportedRule(
                "coupled runs use a changed-time rule".into(),
            ));
        }
    };
    check_rule(&model, &levels, low.max(high))?;
    if low > high {
        return Err(crate::chain::ChainError::StartOrderViolated {
            lower: low,
            upper: high,
        }
        .into());
    }
    let kernel = CouplingKernel::new(&model);
    let states = model.states().as_slice();
    let horizon = problem.horizon();
    let (cap, forced) = if horizon <= cfg.horizon_cap {
        (horizon, true)
    } else {
        (cfg.horizon_cap, false)
    };
    let pairs = replicate(cfg.n_paths, |i| {
        let mut chain_rng = stream(cfg.seed, Lane::Chain, i as u64);
        let mut asset_rng = stream(cfg.seed, Lane::Asset, i as u64);
        let mut sampler = kernel
            .start(low, high, &mut chain_rng)
            .expect("indices checked");
        let mut out = PairOutcome::default();
        let (mut log_level, mut gamma, mut gamma_upper, mut clock) = (x0.ln(), 0.0, 0.0, 0.0);
        loop {
            let (i_lo, i_hi) = sampler.current();
            let (y, y_up) = (states[i_lo], states[i_hi]);
            if i_lo > i_hi && !out.vol_violation {
                out.vol_violation = true;
                out.note(clock, "volatility-order", y, y_up);
            }
            let y2 = y * y;
            let barrier = levels[i_lo].ln();
            let window = sampler.next_jump() - clock;
            let to_cap = (cap - gamma) * y2;
            let capped = to_cap <= window;
            let duration = if capped { to_cap } else { window };
            let drift = match problem.form() {
                ProblemForm::Plain => -0.5,
                ProblemForm::Pricing => problem.rate() / y2 - 0.5,
            };
            let passage = first_passage(log_level - barrier, drift, 1.0, duration, &mut asset_rng);
            let elapsed = match passage {
                Passage::Hit(t) => t,
                Passage::Survive(_) => duration,
                Passage::Escape => f64::INFINITY,
            };
            if elapsed.is_finite() {
                gamma += elapsed / y2;
                gamma_upper += elapsed / (y_up * y_up);
                if gamma < gamma_upper && !out.gamma_violation {
                    out.gamma_violation = true;
                    out.note(clock + elapsed, "time-change-order", gamma, gamma_upper);
                }
            }
            match passage {
                Passage::Hit(t) => {
                    let at = if t == 0.0 { log_level } else { barrier };
                    out.score(problem, at, gamma, gamma_upper, clock + t);
                    return out;
                }
                Passage::Escape => return out,
                Passage::Survive(d) => {
                    log_level += d;
                    if capped {
                        if forced {
                            out.score(problem, log_level, gamma, gamma_upper, clock + duration);
                        } else {
                            out.truncated = true;
                        }
                        return out;
                    }
                    clock += duration;
                    sampler.extend_to(sampler.next_jump(), &mut chain_rng);
                }
            }
        }
    });
    PairedReport::from_pairs(pairs)
}

/// Shared-noise diffusion runs from levels `y_low ≤ y_high` over the changed-time
/// window `[0, cfg.horizon_cap]` on the grid of step `cfg.dt`. The rule is a
/// single constant level (or immediate stopping); unstopped paths are scored
/// at the end of the window.
pub fn verify_monotonicity_diffusion(
    problem: &StoppingProblem,
    x0: f64,
    y_low: f64,
    y_high: f64,
    rule: &StoppingRule,
    cfg: &McConfig,
) -> Result<PairedReport, McError> {
    cfg.validate()?;
    let VolatilityModel::Diffusion(model) = problem.model() else {
        return Err(McError::UnsupportedRule(
            "diffusion coupling needs a diffusion model".into(),
        ));
    };
    let level = match rule {
        StoppingRule::Immediate => f64::INFINITY,
        StoppingRule::ChangedTime(l) if l.len() == 1 => l[0],
        _ => {
            return Err(McError::UnsupportedRule(
                "diffusion runs take a single changed-time level".into(),
            ))
        }
    };
    if !(y_low > 0.0 && y_low <= y_high) {
        return Err(McError::BadConfig(format!(
            "need 0 < y_low <= y_high, got {y_low}, {y_high}"
        )));
    }
    let system = xi_system(model);
    let drivers = correlate_drivers(model.delta())?;
    let steps = ((cfg.horizon_cap / cfg.dt).round() as usize).max(1);
    let pricing = problem.form() == ProblemForm::Pricing;
    let rate = problem.rate();
    let pairs = replicate(cfg.n_paths, |i| -> Result<PairOutcome, McError> {
        let mut rng = stream(cfg.seed, Lane::Volatility, i as u64);
        let (dw, dw_xi) = drivers.increments(&mut rng, steps, cfg.dt);
        let lo = simulate_xi_with_increments(&system, y_low, cfg.dt, &dw_xi)?;
        let hi = simulate_xi_with_increments(&system, y_high, cfg.dt, &dw_xi)?;
        let mut out = PairOutcome::default();
        let (mut log_g, mut gamma, mut gamma_upper) = (x0.ln(), 0.0, 0.0);
        for k in 0..=steps {
            let (a, b) = (lo.values[k], hi.values[k]);
            let t = k as f64 * cfg.dt;
            if a > b && !out.vol_violation {
                out.vol_violation = true;
                out.note(t, "volatility-order", a, b);
            }
            if k > 0 {
                let (a0, b0) = (lo.values[k - 1], hi.values[k - 1]);
                gamma += 0.5 * cfg.dt * (1.0 / (a0 * a0) + 1.0 / (a * a));
                gamma_upper += 0.5 * cfg.dt * (1.0 / (b0 * b0) + 1.0 / (b * b));
                log_g += dw[k - 1] - 0.5 * cfg.dt;
                if gamma < gamma_upper && !out.gamma_violation {
                    out.gamma_violation = true;
                    out.note(t, "time-change-order", gamma, gamma_upper);
                }
            }
            let log_level = if pricing { log_g + rate * gamma } else { log_g };
            if log_level.exp() < level || k == steps {
                out.score(problem, log_level, gamma, gamma_upper, t);
                break;
            }
        }
        Ok(out)
    });
    PairedReport::from_pairs(pairs.into_iter().collect::<Result<Vec<_>, _>>()?)
}
