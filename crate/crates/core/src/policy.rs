//! Closed-form value factor, Bellman function and optimal control.
//!
//! The value factor solves
//!
//! ```text
//! (σ²v/2) f_vv + (kΘ − hedge_drift − kv) f_v − (C/v) f + f_t = 0,   f(v, T) = 1
//! ```
//!
//! and is
//!
//! ```text
//! f = Γ(η−λ+1/2)/Γ(2η+1) · e^{−Ψ/2} Ψ^λ M_{λ,η}(Ψ)
//!   = Γ(a)/Γ(b) · e^{−Ψ} Ψ^{b−a} ₁F₁(a; b; Ψ),   a = η−λ+1/2, b = 1+2η,
//! ```
//!
//! a function of the state only through `Ψ`. The second line is the form
//! evaluated here: the two `e^{−Ψ/2}` factors are combined before anything is
//! exponentiated, so `f` stays finite for every `Ψ`.
//!
//! The Bellman functions are `J_P = (w^γ/γ) f^{1/δ}` and
//! `J_E = 1 − (e^{−cw}/c) f^{1/δ}`; the controls share the bracket
//! `μ/v + (ρσ/δ) f_v/f` with prefactors `w/(x(1−γ))` and `1/(cx)`.

use serde::Serialize;
use thiserror::Error;

use crate::model::{self, DerivedConstants, EvaluationPoint, HestonParams, ModelError, Utility};
use crate::specfun::{self, KummerArgs, SpecfunError};

/// Above this `Ψ` the log-derivative ratio is replaced by its large-`Ψ` limit.
pub const RATIO_ASYMPTOTIC_PSI: f64 = 1e8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("special function evaluation failed: {0}")]
    Specfun(#[from] SpecfunError),
}

pub type Result<T> = std::result::Result<T, PolicyError>;

/// Everything reported for one evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PolicyOutput {
    pub f: f64,
    /// `f_v / f`, per unit of variance.
    pub fv_over_f: f64,
    pub bellman: f64,
    /// Optimal position `α*` in units of the asset.
    pub control: f64,
    pub myopic_term: f64,
    pub hedging_term: f64,
    /// Infinite at the horizon (serialized as `null`).
    pub psi: f64,
}

/// `f` as a function of `Ψ` alone.
pub fn value_factor_at_psi(constants: &DerivedConstants, psi: f64) -> Result<f64> {
    let args = KummerArgs::new(constants.kummer_a(), constants.kummer_b(), psi)?;
    Ok(specfun::log_kummer_scaled(&args)?.exp())
}

/// Value factor `f(v, t)` at time-to-horizon `tau = T − t > 0`.
pub fn value_factor(constants: &DerivedConstants, params: &HestonParams, v: f64, tau: f64) -> Result<f64> {
    let psi = model::compute_psi(params, v, tau)?;
    value_factor_at_psi(constants, psi)
}

/// `f_v / f = (η+λ+1/2)/v · M_{1+λ,η}(Ψ) / M_{λ,η}(Ψ)`.
///
/// `psi = +∞` (the horizon) returns the limit 0.
pub fn log_derivative_ratio(constants: &DerivedConstants, v: f64, psi: f64) -> Result<f64> {
    if !(v > 0.0) {
        return Err(ModelError::Domain(format!("v must be positive, got {v}")).into());
    }
    Ok(scaled_log_derivative(constants, psi)? / v)
}

/// `v · f_v / f`, which depends on the state only through `Ψ`.
pub fn scaled_log_derivative(constants: &DerivedConstants, psi: f64) -> Result<f64> {
    if !(psi > 0.0) {
        return Err(ModelError::Domain(format!("psi must be positive, got {psi}")).into());
    }
    let prefactor = constants.ratio_prefactor();
    if psi == f64::INFINITY {
        return Ok(0.0);
    }
    if psi > RATIO_ASYMPTOTIC_PSI {
        return Ok(prefactor * specfun::kummer_ratio_shifted_leading(constants.kummer_a(), psi));
    }
    Ok(prefactor * specfun::kummer_ratio_shifted(constants.kummer_a(), constants.kummer_b(), psi)?)
}

/// Control prefactor: `w/(x(1−γ))` for power utility, `1/(cx)` for exponential.
pub fn control_prefactor(utility: &Utility, w: f64, x: f64) -> f64 {
    match *utility {
        Utility::Power { gamma } => w / (x * (1.0 - gamma)),
        Utility::Exponential { c } => 1.0 / (c * x),
    }
}

/// Bellman function `J(w, x, v, t)`; equals `U(w)` at the horizon.
pub fn bellman(
    point: &EvaluationPoint,
    utility: &Utility,
    constants: &DerivedConstants,
    params: &HestonParams,
) -> Result<f64> {
    point.validate_for(utility)?;
    let f = if point.tau() > 0.0 {
        value_factor(constants, params, point.v, point.tau())?
    } else {
        1.0
    };
    Ok(bellman_from_factor(utility, constants, point.w, f))
}

fn bellman_from_factor(utility: &Utility, constants: &DerivedConstants, w: f64, f: f64) -> f64 {
    let scale = f.powf(1.0 / constants.delta);
    match *utility {
        Utility::Power { gamma } => w.powf(gamma) / gamma * scale,
        Utility::Exponential { c } => 1.0 - (-c * w).exp() / c * scale,
    }
}

/// Full evaluation at one point: value factor, Bellman value and the
/// optimal control split into its myopic and hedging parts.
pub fn optimal_control(
    point: &EvaluationPoint,
    utility: &Utility,
    constants: &DerivedConstants,
    params: &HestonParams,
) -> Result<PolicyOutput> {
    point.validate_for(utility)?;
    let tau = point.tau();
    let (psi, f) = if tau > 0.0 {
        let psi = model::compute_psi(params, point.v, tau)?;
        (psi, value_factor_at_psi(constants, psi)?)
    } else {
        (f64::INFINITY, 1.0)
    };
    let scaled = scaled_log_derivative(constants, psi)?;
    let prefactor = control_prefactor(utility, point.w, point.x);
    let myopic_term = prefactor * params.mu / point.v;
    let hedging_term = prefactor * (params.rho * params.sigma / constants.delta) * scaled / point.v;
    Ok(PolicyOutput {
        f,
        fv_over_f: scaled / point.v,
        bellman: bellman_from_factor(utility, constants, point.w, f),
        control: myopic_term + hedging_term,
        myopic_term,
        hedging_term,
        psi,
    })
}

/// Asymptotic regime of `Ψ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    Small,
    Large,
}

/// Validity bands of the asymptotic forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsymptoticBands {
    pub small_max: f64,
    pub large_min: f64,
}

impl Default for AsymptoticBands {
    fn default() -> Self {
        Self {
            small_max: 0.01,
            large_min: 100.0,
        }
    }
}

impl AsymptoticBands {
    fn check(&self, psi: f64, regime: Regime) -> Result<()> {
        let ok = match regime {
            Regime::Small => psi > 0.0 && psi <= self.small_max,
            Regime::Large => psi >= self.large_min,
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::Domain(format!("psi = {psi} is outside the {regime:?} band {self:?}")).into())
        }
    }
}

/// Leading-order value factor: `Γ(a)/Γ(b) Ψ^{λ+η+1/2}` for small `Ψ`, 1 for large `Ψ`.
pub fn asymptotic_value_factor(
    constants: &DerivedConstants,
    psi: f64,
    regime: Regime,
    bands: &AsymptoticBands,
) -> Result<f64> {
    bands.check(psi, regime)?;
    match regime {
        Regime::Large => Ok(1.0),
        Regime::Small => {
            let log = specfun::log_gamma(constants.kummer_a())? - specfun::log_gamma(constants.kummer_b())?
                + constants.ratio_prefactor() * psi.ln();
            Ok(log.exp())
        }
    }
}

/// Leading-order `f_v/f`: `(η+λ+1/2)/v` for small `Ψ`, `(2C/σ²)/(vΨ)` for large `Ψ`.
pub fn asymptotic_log_derivative_ratio(
    constants: &DerivedConstants,
    params: &HestonParams,
    v: f64,
    psi: f64,
    regime: Regime,
    bands: &AsymptoticBands,
) -> Result<f64> {
    bands.check(psi, regime)?;
    match regime {
        Regime::Small => Ok(constants.ratio_prefactor() / v),
        Regime::Large => Ok(2.0 * constants.big_c / (params.sigma * params.sigma) / (v * psi)),
    }
}

/// Small vol-of-vol approximation
/// `prefactor · (μ/v + (ρσ/δ) · C e^{k(T−t)} / (k v²))`.
pub fn small_volvol_control(point: &EvaluationPoint, utility: &Utility, params: &HestonParams) -> Result<f64> {
    point.validate_for(utility)?;
    let constants = model::derive_constants(params, utility)?;
    let v = point.v;
    let hedge = params.rho * params.sigma / constants.delta * constants.big_c * (params.k * point.tau()).exp()
        / (params.k * v * v);
    Ok(control_prefactor(utility, point.w, point.x) * (params.mu / v + hedge))
}

/// Parameters, preferences and their derived constants bundled together.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HestonSolution {
    pub params: HestonParams,
    pub utility: Utility,
    pub constants: DerivedConstants,
}

impl HestonSolution {
    pub fn new(params: HestonParams, utility: Utility) -> std::result::Result<Self, ModelError> {
        let constants = model::derive_constants(&params, &utility)?;
        Ok(Self {
            params,
            utility,
            constants,
        })
    }

    pub fn value_factor(&self, v: f64, tau: f64) -> Result<f64> {
        value_factor(&self.constants, &self.params, v, tau)
    }

    pub fn psi(&self, v: f64, tau: f64) -> Result<f64> {
        Ok(model::compute_psi(&self.params, v, tau)?)
    }

    pub fn evaluate(&self, point: &EvaluationPoint) -> Result<PolicyOutput> {
        optimal_control(point, &self.utility, &self.constants, &self.params)
    }

    pub fn bellman(&self, point: &EvaluationPoint) -> Result<f64> {
        bellman(point, &self.utility, &self.constants, &self.params)
    }
}
