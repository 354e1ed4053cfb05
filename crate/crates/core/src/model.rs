//! Model parameters, utility preferences and the derived solution constants.
//!
//! Units: all rates are per year and every time or horizon is in years. The
//! wealth dynamics are `dW = α dX` with no financing term, so there is no
//! risk-free rate anywhere in the model.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Heston dynamics `dX/X = μ dt + √V dB¹`, `dV = k(Θ − V) dt + σ√V dB²`,
/// `d⟨B¹, B²⟩ = ρ dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HestonParams {
    /// Asset drift rate.
    pub mu: f64,
    /// Mean-reversion speed of the variance.
    pub k: f64,
    /// Long-run variance level.
    pub theta: f64,
    /// Volatility of variance.
    pub sigma: f64,
    /// Correlation between the asset and variance drivers.
    pub rho: f64,
}

/// Investor preferences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Utility {
    /// `U(w) = w^γ / γ` with `γ < 0`.
    Power { gamma: f64 },
    /// `U(w) = 1 − e^{−cw} / c` with `c > 0`.
    Exponential { c: f64 },
}

impl Utility {
    /// Terminal utility of wealth `w`.
    pub fn eval(&self, w: f64) -> f64 {
        match *self {
            Utility::Power { gamma } => w.powf(gamma) / gamma,
            Utility::Exponential { c } => 1.0 - (-c * w).exp() / c,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Utility::Power { .. } => "power",
            Utility::Exponential { .. } => "exponential",
        }
    }
}

/// One violated invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub field: &'static str,
    pub value: f64,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (got {} = {})", self.message, self.field, self.value)
    }
}

/// Non-empty list of violations returned by [`validate`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violations(pub Vec<Violation>);

impl fmt::Display for Violations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

impl std::error::Error for Violations {}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model: {0}")]
    Invalid(Violations),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("cannot parse model document: {0}")]
    Parse(String),
}

/// Checks every parameter and utility invariant and reports all failures.
pub fn validate(params: &HestonParams, utility: &Utility) -> Result<(), Violations> {
    let mut out = Vec::new();
    param_violations(params, &mut out);
    utility_violations(utility, &mut out);
    if out.is_empty() {
        Ok(())
    } else {
        Err(Violations(out))
    }
}

/// Parameter invariants only (used by the simulators, which have no utility).
pub fn validate_params(params: &HestonParams) -> Result<(), Violations> {
    let mut out = Vec::new();
    param_violations(params, &mut out);
    if out.is_empty() {
        Ok(())
    } else {
        Err(Violations(out))
    }
}

fn param_violations(params: &HestonParams, out: &mut Vec<Violation>) {
    let mut push = |field: &'static str, value: f64, message: &str| {
        out.push(Violation {
            field,
            value,
            message: message.to_string(),
        })
    };
    let HestonParams {
        mu,
        k,
        theta,
        sigma,
        rho,
    } = *params;
    if !mu.is_finite() {
        push("mu", mu, "mu must be finite");
    }
    if !(k > 0.0) || !k.is_finite() {
        push("k", k, "k > 0 required");
    }
    if !(theta > 0.0) || !theta.is_finite() {
        push("theta", theta, "theta > 0 required");
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        push("sigma", sigma, "sigma > 0 required");
    }
    if !(rho.abs() < 1.0) {
        push("rho", rho, "|rho| < 1 required");
    }
    if k > 0.0 && theta > 0.0 && sigma > 0.0 && !(2.0 * k * theta > sigma * sigma) {
        push(
            "2*k*theta",
            2.0 * k * theta,
            &format!("Feller condition 2*k*theta > sigma^2 violated (sigma^2 = {})", sigma * sigma),
        );
    }
}

fn utility_violations(utility: &Utility, out: &mut Vec<Violation>) {
    let mut push = |field: &'static str, value: f64, message: &str| {
        out.push(Violation {
            field,
            value,
            message: message.to_string(),
        })
    };
    match *utility {
        Utility::Power { gamma } => {
            if gamma == 0.0 {
                push(
                    "gamma",
                    gamma,
                    "gamma < 0 required; gamma = 0 is the logarithmic limit, whose optimal control is the myopic term mu/v",
                );
            } else if !(gamma < 0.0) || !gamma.is_finite() {
                push("gamma", gamma, "gamma < 0 required");
            }
        }
        Utility::Exponential { c } => {
            if !(c > 0.0) || !c.is_finite() {
                push("c", c, "c > 0 required");
            }
        }
    }
}

/// Constants of the reduced linear problem
/// `(σ²v/2) f_vv + (kΘ − hedge_drift − kv) f_v − (C/v) f + f_t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub delta: f64,
    pub big_c: f64,
    pub lambda: f64,
    pub eta: f64,
    /// `((1 − δ)/ρ)·μσ`, written per utility so that `ρ = 0` is regular.
    pub hedge_drift: f64,
}

impl DerivedConstants {
    /// First Kummer parameter `η − λ + 1/2`.
    pub fn kummer_a(&self) -> f64 {
        self.eta - self.lambda + 0.5
    }

    /// Second Kummer parameter `1 + 2η`.
    pub fn kummer_b(&self) -> f64 {
        1.0 + 2.0 * self.eta
    }

    /// `η + λ + 1/2`, the prefactor of the log-derivative ratio.
    pub fn ratio_prefactor(&self) -> f64 {
        self.eta + self.lambda + 0.5
    }
}

pub fn derive_constants(params: &HestonParams, utility: &Utility) -> Result<DerivedConstants, ModelError> {
    validate(params, utility).map_err(ModelError::Invalid)?;
    let HestonParams {
        mu,
        k,
        theta,
        sigma,
        rho,
    } = *params;
    let s2 = sigma * sigma;
    let (delta, big_c, lambda, hedge_drift) = match *utility {
        Utility::Power { gamma } => {
            let g = gamma / (1.0 - gamma);
            let delta = 1.0 + rho * rho * g;
            let big_c = -g * 0.5 * mu * mu * delta;
            let lambda = -k * theta / s2 - g * rho * mu / sigma;
            (delta, big_c, lambda, -g * rho * mu * sigma)
        }
        Utility::Exponential { .. } => {
            let delta = 1.0 - rho * rho;
            let big_c = 0.5 * mu * mu * delta;
            let lambda = -k * theta / s2 + rho * mu / sigma;
            (delta, big_c, lambda, rho * mu * sigma)
        }
    };
    if !(big_c > 0.0) {
        return Err(ModelError::Domain(format!(
            "C = {big_c} must be positive; mu = 0 makes the value factor identically 1"
        )));
    }
    let eta = ((lambda + 0.5).powi(2) + 2.0 * big_c / s2).sqrt();
    let constants = DerivedConstants {
        delta,
        big_c,
        lambda,
        eta,
        hedge_drift,
    };
    if !(constants.kummer_a() > 0.0) || !(constants.ratio_prefactor() > 0.0) {
        return Err(ModelError::Domain(format!(
            "eta = {eta} does not dominate |lambda + 1/2| = {}",
            (lambda + 0.5).abs()
        )));
    }
    Ok(constants)
}

/// `Ψ = 2kv / (σ²(e^{kτ} − 1))` with `τ = T − t`.
pub fn compute_psi(params: &HestonParams, v: f64, tau: f64) -> Result<f64, ModelError> {
    if !(tau > 0.0) {
        return Err(ModelError::Domain(format!("tau = T - t must be positive, got {tau}")));
    }
    if !(v > 0.0) {
        return Err(ModelError::Domain(format!("v must be positive, got {v}")));
    }
    Ok(2.0 * params.k * v / (params.sigma * params.sigma * (params.k * tau).exp_m1()))
}

/// State `(w, x, v, t)` and horizon `T` at which the value and control are requested.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationPoint {
    pub w: f64,
    pub x: f64,
    pub v: f64,
    pub t: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
}

impl EvaluationPoint {
    pub fn tau(&self) -> f64 {
        self.horizon - self.t
    }

    pub fn validate_for(&self, utility: &Utility) -> Result<(), ModelError> {
        let mut out = Vec::new();
        if !(self.t <= self.horizon) {
            out.push(Violation {
                field: "t",
                value: self.t,
                message: format!("t <= T required (T = {})", self.horizon),
            });
        }
        if !(self.v > 0.0) || !self.v.is_finite() {
            out.push(Violation {
                field: "v",
                value: self.v,
                message: "v > 0 required".into(),
            });
        }
        if !(self.x > 0.0) || !self.x.is_finite() {
            out.push(Violation {
                field: "x",
                value: self.x,
                message: "x > 0 required".into(),
            });
        }
        let wealth_ok = match utility {
            Utility::Power { .. } => self.w > 0.0 && self.w.is_finite(),
            Utility::Exponential { .. } => self.w.is_finite(),
        };
        if !wealth_ok {
            out.push(Violation {
                field: "w",
                value: self.w,
                message: format!("w must be {} for {} utility",
                    if matches!(utility, Utility::Power { .. }) { "positive" } else { "finite" },
                    utility.name()),
            });
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(ModelError::Invalid(Violations(out)))
        }
    }
}

/// Standalone parameter document:
/// `{"mu", "k", "theta", "sigma", "rho", "utility": {"type", "gamma" | "c"}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub mu: f64,
    pub k: f64,
    pub theta: f64,
    pub sigma: f64,
    pub rho: f64,
    pub utility: Utility,
}

impl ModelDocument {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))
    }

    pub fn params(&self) -> HestonParams {
        HestonParams {
            mu: self.mu,
            k: self.k,
            theta: self.theta,
            sigma: self.sigma,
            rho: self.rho,
        }
    }
}
