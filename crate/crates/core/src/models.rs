//! Diffusion volatility models and the decoupled system in changed time.
//!
//! With `dX = a(X) Y dB` and `dY = η(Y) dB^Y + θ(Y) dt`, changing time by the
//! inverse quadratic variation of `∫Y dB` gives
//!
//! ```text
//! dG = a(G) dW,        dξ = η(ξ)/ξ dW^ξ + θ(ξ)/ξ² dt,       d⟨W, W^ξ⟩ = δ dt
//! ```
//!
//! For Hull–White and Heston the `ξ` equation reduces to a Bessel-type
//! equation `dZ = dW^ξ + ((φ−1)/(2Z) − b) dt` (with `b = 0` for Hull–White),
//! which is stepped with a drift-implicit Euler scheme. The implicit step is
//! an increasing function of `Z + ΔW`, so it stays positive for `φ > 1` and
//! two paths driven by the same increments never cross.

use crate::chain::{ChainPath, VolStates};
use crate::timechange::{TimeChangeError, TimeChangePath};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Slack on the `φ ≥ 2` boundary to absorb rounding in decimal parameters.
pub const PHI_BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("correlation {0} outside [-1, 1]")]
    DeltaOutOfRange(f64),
    #[error("parameter {name} must be positive, got {value}")]
    NonpositiveParameter { name: &'static str, value: f64 },
    #[error("model fails the Feller-type condition (phi = {phi} < 2)")]
    InvalidModel { phi: f64 },
    #[error("positivity lost at step {step} (value {value})")]
    SchemeBreakdown { step: usize, value: f64 },
    #[error("grid step and horizon must be positive, got dt = {dt}, horizon = {horizon}")]
    BadGrid { dt: f64, horizon: f64 },
    #[error("initial value must be positive, got {0}")]
    BadInitial(f64),
    #[error("time {time} outside sampled range [0, {horizon}]")]
    OutOfRange { time: f64, horizon: f64 },
    #[error(transparent)]
    TimeChange(#[from] TimeChangeError),
}

pub type Coefficient = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum VolModelKind {
    /// `dV = 2η√V dB^Y + κ(λ − V) dt`, `Y = √V`.
    Heston { eta: f64, kappa: f64, lambda: f64 },
    /// `dV = 2ηV dB^Y + κV dt`, `Y = √V`.
    HullWhite { eta: f64, kappa: f64 },
    /// User-supplied `η(y)` and `θ(y)`.
    Generic {
        eta: Coefficient,
        theta: Coefficient,
    },
}

impl fmt::Debug for VolModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Heston { eta, kappa, lambda } => f
                .debug_struct("Heston")
                .field("eta", eta)
                .field("kappa", kappa)
                .field("lambda", lambda)
                .finish(),
            Self::HullWhite { eta, kappa } => f
                .debug_struct("HullWhite")
                .field("eta", eta)
                .field("kappa", kappa)
                .finish(),
            Self::Generic { .. } => f.write_str("Generic"),
        }
    }
}

/// Volatility diffusion `dY = η(Y) dB^Y + θ(Y) dt` with `d⟨B, B^Y⟩ = δ dt`.
#[derive(Debug, Clone)]
pub struct DiffusionVolModel {
    kind: VolModelKind,
    delta: f64,
}

fn positive(name: &'static str, value: f64) -> Result<f64, ModelError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(ModelError::NonpositiveParameter { name, value })
    }
}

fn check_delta(delta: f64) -> Result<f64, ModelError> {
    if (-1.0..=1.0).contains(&delta) {
        Ok(delta)
    } else {
        Err(ModelError::DeltaOutOfRange(delta))
    }
}

impl DiffusionVolModel {
    pub fn heston(eta: f64, kappa: f64, lambda: f64, delta: f64) -> Result<Self, ModelError> {
        Ok(Self {
            kind: VolModelKind::Heston {
                eta: positive("eta", eta)?,
                kappa: positive("kappa", kappa)?,
                lambda: positive("lambda", lambda)?,
            },
            delta: check_delta(delta)?,
        })
    }

    pub fn hull_white(eta: f64, kappa: f64, delta: f64) -> Result<Self, ModelError> {
        Ok(Self {
            kind: VolModelKind::HullWhite {
                eta: positive("eta", eta)?,
                kappa: positive("kappa", kappa)?,
            },
            delta: check_delta(delta)?,
        })
    }

    pub fn generic(eta: Coefficient, theta: Coefficient, delta: f64) -> Result<Self, ModelError> {
        Ok(Self {
            kind: VolModelKind::Generic { eta, theta },
            delta: check_delta(delta)?,
        })
    }

    pub fn kind(&self) -> &VolModelKind {
        &self.kind
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            VolModelKind::Heston { .. } => "heston",
            VolModelKind::HullWhite { .. } => "hull-white",
            VolModelKind::Generic { .. } => "generic",
        }
    }

    /// Hull–White drift coefficient `θ = (κ − η²)/2`.
    pub fn hull_white_theta(eta: f64, kappa: f64) -> f64 {
        (kappa - eta * eta) / 2.0
    }

    /// Heston drift coefficients `θ₁ = (κλ − η²)/2`, `θ₂ = κ/2`.
    pub fn heston_thetas(eta: f64, kappa: f64, lambda: f64) -> (f64, f64) {
        ((kappa * lambda - eta * eta) / 2.0, kappa / 2.0)
    }

    /// `η(y)`.
    pub fn eta_at(&self, y: f64) -> f64 {
        match &self.kind {
            VolModelKind::Heston { eta, .. } => *eta,
            VolModelKind::HullWhite { eta, .. } => eta * y,
            VolModelKind::Generic { eta, .. } => eta(y),
        }
    }

    /// `θ(y)`.
    pub fn theta_at(&self, y: f64) -> f64 {
        match &self.kind {
            VolModelKind::Heston { eta, kappa, lambda } => {
                let (t1, t2) = Self::heston_thetas(*eta, *kappa, *lambda);
                t1 / y - t2 * y
            }
            VolModelKind::HullWhite { eta, kappa } => Self::hull_white_theta(*eta, *kappa) * y,
            VolModelKind::Generic { theta, .. } => theta(y),
        }
    }

    /// Bessel dimension of the reduced volatility coordinate, for named models.
    pub fn bessel_dimension(&self) -> Option<f64> {
        match self.kind {
            VolModelKind::HullWhite { eta, kappa } => {
                Some(1.0 + 2.0 * Self::hull_white_theta(eta, kappa) / (eta * eta))
            }
            VolModelKind::Heston { eta, kappa, lambda } => {
                Some(Self::heston_thetas(eta, kappa, lambda).0 / (eta * eta) + 1.5)
            }
            VolModelKind::Generic { .. } => None,
        }
    }
}

/// `ξ` dynamics in changed time.
#[derive(Debug, Clone)]
pub struct XiSystem {
    model: DiffusionVolModel,
    bessel_dimension: Option<f64>,
}

impl XiSystem {
    pub fn model(&self) -> &DiffusionVolModel {
        &self.model
    }

    pub fn bessel_dimension(&self) -> Option<f64> {
        self.bessel_dimension
    }

    /// Diffusion coefficient `η(ξ)/ξ`.
    pub fn diffusion(&self, xi: f64) -> f64 {
        self.model.eta_at(xi) / xi
    }

    /// Drift `θ(ξ)/ξ²`.
    pub fn drift(&self, xi: f64) -> f64 {
        self.model.theta_at(xi) / (xi * xi)
    }

    fn bessel_step(&self) -> Result<Option<BesselStep>, ModelError> {
        let Some(phi) = self.bessel_dimension else {
            return Ok(None);
        };
        if phi < 2.0 - PHI_BOUNDARY_TOL {
            return Err(ModelError::InvalidModel { phi });
        }
        let c = (phi - 1.0) / 2.0;
        Ok(Some(match self.model.kind {
            VolModelKind::HullWhite { eta, .. } => BesselStep {
                c,
                shift: 0.0,
                eta,
                squared: false,
            },
            VolModelKind::Heston { eta, kappa, lambda } => {
                let (_, theta2) = DiffusionVolModel::heston_thetas(eta, kappa, lambda);
                BesselStep {
                    c,
                    shift: theta2 / eta,
                    eta,
                    squared: true,
                }
            }
            VolModelKind::Generic { .. } => unreachable!("generic models have no Bessel dimension"),
        }))
    }
}

/// Drift-implicit step for `dZ = dW + (c/Z − shift) dt`.
#[derive(Debug, Clone, Copy)]
struct BesselStep {
    c: f64,
    shift: f64,
    eta: f64,
    // Heston uses Z = ξ²/(2η), Hull–White Z = ξ/η
    squared: bool,
}

impl BesselStep {
    fn z_of(&self, xi: f64) -> f64 {
        if self.squared {
            xi * xi / (2.0 * self.eta)
        } else {
            xi / self.eta
        }
    }

    fn xi_of(&self, z: f64) -> f64 {
        if self.squared {
            (2.0 * self.eta * z).sqrt()
        } else {
            self.eta * z
        }
    }

    fn advance(&self, z: f64, dw: f64, dt: f64) -> f64 {
        let u = z + dw - self.shift * dt;
        0.5 * (u + (u * u + 4.0 * self.c * dt).sqrt())
    }
}

/// Builds the changed-time system for `model`.
pub fn xi_system(model: &DiffusionVolModel) -> XiSystem {
    XiSystem {
        model: model.clone(),
        bessel_dimension: model.bessel_dimension(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Validity {
    Valid,
    Invalid,
    Unverifiable,
}

/// Outcome of the `φ ≥ 2` check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidityReport {
    pub model: String,
    pub status: Validity,
    pub phi: Option<f64>,
    /// Equivalent condition on the raw parameters.
    pub condition: String,
    pub detail: String,
}

impl ValidityReport {
    pub fn passes(&self) -> bool {
        self.status == Validity::Valid
    }
}

/// Checks `φ ≥ 2`, which makes the `ξ` equation well posed, positive and
/// makes `Γ` diverge.
pub fn validate_model(model: &DiffusionVolModel) -> ValidityReport {
    let phi = model.bessel_dimension();
    let (condition, lhs, rhs) = match model.kind {
        VolModelKind::HullWhite { eta, kappa } => ("kappa >= 2 eta^2", kappa, 2.0 * eta * eta),
        VolModelKind::Heston { eta, kappa, lambda } => {
            ("kappa lambda >= 2 eta^2", kappa * lambda, 2.0 * eta * eta)
        }
        VolModelKind::Generic { .. } => {
            return ValidityReport {
                model: model.name().into(),
                status: Validity::Unverifiable,
                phi: None,
                condition: "unique nonexploding positive strong solution".into(),
                detail: "no closed-form criterion applies; user asserts well-posedness and divergence of the time change"
                    .into(),
            };
        }
    };
    let phi_value = phi.expect("named models carry a Bessel dimension");
    let ok = phi_value >= 2.0 - PHI_BOUNDARY_TOL;
    ValidityReport {
        model: model.name().into(),
        status: if ok {
            Validity::Valid
        } else {
            Validity::Invalid
        },
        phi,
        condition: condition.into(),
        detail: format!(
            "phi = {phi_value}; {condition}: {lhs} {} {rhs}",
            if ok { ">=" } else { "<" }
        ),
    }
}

/// Values on the uniform grid `t_k = k dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl SampledPath {
    pub fn horizon(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(move |k| k as f64 * self.dt)
    }

    /// Linear interpolation at `t`.
    pub fn value_at(&self, t: f64) -> Result<f64, ModelError> {
        let horizon = self.horizon();
        if !(t >= 0.0 && t <= horizon * (1.0 + 1e-12)) {
            return Err(ModelError::OutOfRange { time: t, horizon });
        }
        let pos = t / self.dt;
        let k = (pos.floor() as usize).min(self.values.len().saturating_sub(2));
        if self.values.len() == 1 {
            return Ok(self.values[0]);
        }
        let w = (pos - k as f64).clamp(0.0, 1.0);
        Ok(self.values[k] * (1.0 - w) + self.values[k + 1] * w)
    }
}

fn grid_steps(horizon: f64, dt: f64) -> Result<usize, ModelError> {
    if !(dt > 0.0 && horizon > 0.0 && dt.is_finite() && horizon.is_finite()) {
        return Err(ModelError::BadGrid { dt, horizon });
    }
    Ok(((horizon / dt).round() as usize).max(1))
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// `ξ` on a uniform grid driven by the given Brownian increments.
pub fn simulate_xi_with_increments(
    system: &XiSystem,
    y0: f64,
    dt: f64,
    increments: &[f64],
) -> Result<SampledPath, ModelError> {
    if !(y0 > 0.0) {
        return Err(ModelError::BadInitial(y0));
    }
    let mut values = Vec::with_capacity(increments.len() + 1);
    values.push(y0);
    match system.bessel_step()? {
        Some(step) => {
            let mut z = step.z_of(y0);
            for &dw in increments {
                z = step.advance(z, dw, dt);
                values.push(step.xi_of(z));
            }
        }
        None => {
            let mut xi = y0;
            for (k, &dw) in increments.iter().enumerate() {
                xi += system.diffusion(xi) * dw + system.drift(xi) * dt;
                if !(xi > 0.0 && xi.is_finite()) {
                    return Err(ModelError::SchemeBreakdown {
                        step: k + 1,
                        value: xi,
                    });
                }
                values.push(xi);
            }
        }
    }
    if let Some((step, &value)) = values
        .iter()
        .enumerate()
        .find(|(_, &v)| !(v > 0.0 && v.is_finite()))
    {
        return Err(ModelError::SchemeBreakdown { step, value });
    }
    Ok(SampledPath { dt, values })
}

/// Simulates `ξ` from `y0` on `[0, horizon]` with step `dt`.
pub fn simulate_xi<R: Rng + ?Sized>(
    system: &XiSystem,
    y0: f64,
    horizon: f64,
    dt: f64,
    rng: &mut R,
) -> Result<SampledPath, ModelError> {
    let n = grid_steps(horizon, dt)?;
    let sd = dt.sqrt();
    let increments: Vec<f64> = (0..n).map(|_| sd * normal(rng)).collect();
    simulate_xi_with_increments(system, y0, dt, &increments)
}

/// Coefficient `a` of `dG = a(G) dW`.
#[derive(Clone)]
pub enum AssetCoefficient {
    /// `a(x) = x`: geometric, simulated exactly.
    Linear,
    /// `a(x) = c`: arithmetic, simulated exactly.
    Constant(f64),
    /// Arbitrary `a`, Euler–Maruyama; the caller vouches for well-posedness.
    Custom(Coefficient),
}

impl fmt::Debug for AssetCoefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear => f.write_str("Linear"),
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Custom(_) => f.write_str("Custom"),
        }
    }
}

/// Unit-volatility asset `G` on a uniform grid in changed time.
pub type AssetPath = SampledPath;

/// `G` on a uniform grid driven by the given increments of `W`.
pub fn simulate_g_with_increments(
    x0: f64,
    coefficient: &AssetCoefficient,
    dt: f64,
    increments: &[f64],
) -> Result<AssetPath, ModelError> {
    let mut values = Vec::with_capacity(increments.len() + 1);
    values.push(x0);
    match coefficient {
        AssetCoefficient::Linear => {
            if !(x0 > 0.0) {
                return Err(ModelError::BadInitial(x0));
            }
            let mut w = 0.0;
            for (k, &dw) in increments.iter().enumerate() {
                w += dw;
                let t = (k + 1) as f64 * dt;
                values.push(x0 * (w - 0.5 * t).exp());
            }
        }
        AssetCoefficient::Constant(c) => {
            let mut w = 0.0;
            for &dw in increments {
                w += dw;
                values.push(x0 + c * w);
            }
        }
        AssetCoefficient::Custom(a) => {
            let mut g = x0;
            for &dw in increments {
                g += a(g) * dw;
                values.push(g);
            }
        }
    }
    Ok(SampledPath { dt, values })
}

/// Simulates `dG = a(G) dW` from `x0` on `[0, horizon]`.
pub fn simulate_g<R: Rng + ?Sized>(
    x0: f64,
    coefficient: &AssetCoefficient,
    horizon: f64,
    dt: f64,
    rng: &mut R,
) -> Result<AssetPath, ModelError> {
    let n = grid_steps(horizon, dt)?;
    let sd = dt.sqrt();
    let increments: Vec<f64> = (0..n).map(|_| sd * normal(rng)).collect();
    simulate_g_with_increments(x0, coefficient, dt, &increments)
}

/// `dG = G dW` from `x0`, sampled exactly at the nondecreasing `times`.
pub fn sample_geometric_at<R: Rng + ?Sized>(
    x0: f64,
    times: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>, ModelError> {
    if !(x0 > 0.0) {
        return Err(ModelError::BadInitial(x0));
    }
    let (mut w, mut prev) = (0.0, 0.0);
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if !(t >= prev && t.is_finite()) {
            return Err(ModelError::OutOfRange {
                time: t,
                horizon: prev,
            });
        }
        if t > prev {
            w += (t - prev).sqrt() * normal(rng);
            prev = t;
        }
        out.push(x0 * (w - 0.5 * t).exp());
    }
    Ok(out)
}

/// Pair of Brownian increment streams with `d⟨W, W^ξ⟩ = δ dt`.
#[derive(Debug, Clone, Copy)]
pub struct CorrelatedDrivers {
    delta: f64,
    complement: f64,
}

/// `dW^ξ = δ dW + √(1 − δ²) dW⊥`.
pub fn correlate_drivers(delta: f64) -> Result<CorrelatedDrivers, ModelError> {
    let delta = check_delta(delta)?;
    Ok(CorrelatedDrivers {
        delta,
        complement: (1.0 - delta * delta).sqrt(),
    })
}

impl CorrelatedDrivers {
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// One pair `(dW, dW^ξ)` over a step of length `dt`.
    pub fn pair<R: Rng + ?Sized>(&self, rng: &mut R, dt: f64) -> (f64, f64) {
        let sd = dt.sqrt();
        let dw = sd * normal(rng);
        let perp = sd * normal(rng);
        (dw, self.delta * dw + self.complement * perp)
    }

    pub fn increments<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        n: usize,
        dt: f64,
    ) -> (Vec<f64>, Vec<f64>) {
        (0..n).map(|_| self.pair(rng, dt)).unzip()
    }
}

/// Jointly simulates `(G, ξ)` with correlated drivers.
pub fn simulate_system<R: Rng + ?Sized>(
    system: &XiSystem,
    coefficient: &AssetCoefficient,
    x0: f64,
    y0: f64,
    horizon: f64,
    dt: f64,
    rng: &mut R,
) -> Result<(AssetPath, SampledPath), ModelError> {
    let n = grid_steps(horizon, dt)?;
    let drivers = correlate_drivers(system.model.delta)?;
    let (dw, dw_xi) = drivers.increments(rng, n, dt);
    Ok((
        simulate_g_with_increments(x0, coefficient, dt, &dw)?,
        simulate_xi_with_increments(system, y0, dt, &dw_xi)?,
    ))
}

/// A volatility trajectory that can be read at any covered time.
pub trait VolatilityPath {
    fn vol_at(&self, t: f64) -> Result<f64, ModelError>;
}

impl VolatilityPath for SampledPath {
    fn vol_at(&self, t: f64) -> Result<f64, ModelError> {
        self.value_at(t)
    }
}

/// Chain path read through its state levels.
#[derive(Debug, Clone, Copy)]
pub struct ChainVolPath<'a> {
    pub path: &'a ChainPath,
    pub states: &'a VolStates,
}

impl VolatilityPath for ChainVolPath<'_> {
    fn vol_at(&self, t: f64) -> Result<f64, ModelError> {
        let horizon = self.path.horizon();
        self.path
            .state_at(t)
            .map(|i| self.states.get(i))
            .map_err(|_| ModelError::OutOfRange { time: t, horizon })
    }
}

/// `(X̃, Ỹ)` sampled in original time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeChangedPair {
    pub times: Vec<f64>,
    /// `A(t)` at each sample time.
    pub changed_times: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// `X̃(t) = G(A(t))` and `Ỹ(t) = vol(A(t))` at each requested time.
pub fn time_changed_pair(
    g: &AssetPath,
    vol: &dyn VolatilityPath,
    tc: &TimeChangePath,
    times: &[f64],
) -> Result<TimeChangedPair, ModelError> {
    let mut out = TimeChangedPair {
        times: times.to_vec(),
        changed_times: Vec::with_capacity(times.len()),
        x: Vec::with_capacity(times.len()),
        y: Vec::with_capacity(times.len()),
    };
    for &t in times {
        let a = tc.inverse(t)?;
        out.changed_times.push(a);
        out.x.push(g.value_at(a)?);
        out.y.push(vol.vol_at(a)?);
    }
    Ok(out)
}
