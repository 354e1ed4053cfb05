//! Monte Carlo verification of the closed form.
//!
//! * [`simulate_cir`] / [`simulate_heston`] generate variance and price paths
//!   with either full-truncation Euler or the exact noncentral-χ² CIR
//!   transition.
//! * [`bond_check`] prices the 3/2-model bond `E exp(−∫ r ds)` whose
//!   Feynman–Kac representation is the value factor (`r = C/V` with `V`
//!   under the drift of the reduced PDE), simulating `1/r` as a CIR process.
//! * [`utility_check`] trades along the feedback control with the hedging
//!   term scaled by several factors and compares expected utility with `J`.
//!
//! Every path (or antithetic pair) draws from its own ChaCha8 stream
//! `(seed, index)`, results are collected in index order and summed pairwise,
//! so estimates are bit-identical for any rayon pool size.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, DerivedConstants, EvaluationPoint, HestonParams, ModelError, Utility};
use crate::policy::{self, PolicyError};

/// Smallest accepted ensemble.
pub const MIN_PATHS: usize = 1_000;
/// Smallest accepted number of time steps per path.
pub const MIN_STEPS: usize = 50;
/// Default time resolution (steps per unit of `τ`).
pub const STEPS_PER_UNIT_TAU: f64 = 512.0;
/// Largest tolerated fraction of flagged paths in [`utility_check`].
pub const MAX_FLAGGED_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error("invalid Monte Carlo configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("degenerate bond coefficients: {0}")]
    Degenerate(String),
    #[error("{flagged} of {total} paths flagged (non-finite or non-positive wealth), above the {limit} limit")]
    TooManyFlagged { flagged: usize, total: usize, limit: f64 },
    #[error("non-finite bond discount on path {path} at step {step}; reduce the step size")]
    NonFinite { path: usize, step: usize },
    #[error("csv output failed: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, McError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    FullTruncationEuler,
    ExactCir,
}

/// Ensemble configuration. `n_steps` is the total number of steps per path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub antithetic: bool,
}

impl McConfig {
    /// `max(50, ⌈512 τ⌉)` steps.
    pub fn default_steps(tau: f64) -> usize {
        ((STEPS_PER_UNIT_TAU * tau).ceil() as usize).max(MIN_STEPS)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.n_paths < MIN_PATHS {
            problems.push(format!("n_paths must be at least {MIN_PATHS}, got {}", self.n_paths));
        }
        if self.n_steps < MIN_STEPS {
            problems.push(format!("n_steps must be at least {MIN_STEPS}, got {}", self.n_steps));
        }
        if self.antithetic && !self.n_paths.is_multiple_of(2) {
            problems.push(format!("antithetic sampling needs an even n_paths, got {}", self.n_paths));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(McError::Config(problems.join("; ")))
        }
    }

    /// Number of independent draws: pairs when antithetic, paths otherwise.
    fn n_units(&self) -> usize {
        if self.antithetic {
            self.n_paths / 2
        } else {
            self.n_paths
        }
    }

    fn signs(&self) -> &'static [f64] {
        if self.antithetic {
            &[1.0, -1.0]
        } else {
            &[1.0]
        }
    }

    fn rng(&self, unit: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(unit as u64);
        rng
    }
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Number of independent samples (antithetic pairs count once).
    pub n_effective: usize,
}

impl McEstimate {
    /// Sample mean and standard error; summation order is the slice order.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std_error: f64::NAN,
                n_effective: 0,
            };
        }
        let mean = pairwise_sum(samples) / n as f64;
        let dev: Vec<f64> = samples.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = if n > 1 { pairwise_sum(&dev) / (n - 1) as f64 } else { 0.0 };
        Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            n_effective: n,
        }
    }

    /// `|mean − target| / std_error` (0 when both the gap and the error vanish).
    pub fn z_score(&self, target: f64) -> f64 {
        let gap = (self.mean - target).abs();
        if gap == 0.0 {
            0.0
        } else {
            gap / self.std_error
        }
    }
}

/// Deterministic pairwise summation.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 64 {
        return x.iter().sum();
    }
    let mid = x.len() / 2;
    pairwise_sum(&x[..mid]) + pairwise_sum(&x[mid..])
}

/// Exact CIR transition over a fixed step `dt`:
/// `V₁ = c · χ'²_d(V₀ e^{−κdt}/c)` with `c = σ²(1 − e^{−κdt})/(4κ)`, `d = 4κθ/σ²`.
#[derive(Debug, Clone, Copy)]
struct CirTransition {
    decay: f64,
    c: f64,
    d: f64,
    central: Option<Gamma<f64>>,
}

impl CirTransition {
    fn new(kappa: f64, theta: f64, sigma: f64, dt: f64) -> Self {
        let decay = (-kappa * dt).exp();
        let c = sigma * sigma * -(-kappa * dt).exp_m1() / (4.0 * kappa);
        let d = 4.0 * kappa * theta / (sigma * sigma);
        let central = if d > 1.0 {
            Some(Gamma::new(0.5 * (d - 1.0), 2.0).expect("shape and scale are positive"))
        } else {
            None
        };
        Self { decay, c, d, central }
    }

    /// `sign` flips the normal component for antithetic pairs.
    fn sample<R: Rng>(&self, rng: &mut R, v: f64, sign: f64) -> f64 {
        let nc = v * self.decay / self.c;
        match &self.central {
            Some(gamma) => {
                let z: f64 = sign * rng.sample::<f64, _>(StandardNormal);
                let shifted = z + nc.sqrt();
                self.c * (shifted * shifted + gamma.sample(rng))
            }
            None => {
                let n = if nc > 0.0 {
                    Poisson::new(0.5 * nc).expect("positive rate").sample(rng)
                } else {
                    0.0
                };
                let shape = 0.5 * self.d + n;
                self.c * Gamma::new(shape, 2.0).expect("positive shape").sample(rng)
            }
        }
    }
}

/// One variance step: end value, `∫V ds` and `∫√V dB²` over the step.
#[derive(Debug, Clone, Copy)]
struct VarianceStep {
    v_next: f64,
    int_v: f64,
    int_sqrt_v_dw: f64,
}

/// Variance dynamics `dV = κ(θ − V)ds + σ√V dB` under either scheme.
#[derive(Debug, Clone, Copy)]
struct VarianceStepper {
    kappa: f64,
    theta: f64,
    sigma: f64,
    dt: f64,
    exact: Option<CirTransition>,
}

impl VarianceStepper {
    fn new(kappa: f64, theta: f64, sigma: f64, dt: f64, scheme: Scheme) -> Self {
        let exact = match scheme {
            Scheme::ExactCir => Some(CirTransition::new(kappa, theta, sigma, dt)),
            Scheme::FullTruncationEuler => None,
        };
        Self {
            kappa,
            theta,
            sigma,
            dt,
            exact,
        }
    }

    fn step<R: Rng>(&self, rng: &mut R, v: f64, sign: f64) -> VarianceStep {
        match &self.exact {
            None => {
                let vp = v.max(0.0);
                let dw = sign * self.dt.sqrt() * rng.sample::<f64, _>(StandardNormal);
                let int_sqrt_v_dw = vp.sqrt() * dw;
                VarianceStep {
                    v_next: v + self.kappa * (self.theta - vp) * self.dt + self.sigma * int_sqrt_v_dw,
                    int_v: vp * self.dt,
                    int_sqrt_v_dw,
                }
            }
            Some(t) => {
                let v_next = t.sample(rng, v, sign);
                let int_v = 0.5 * (v + v_next) * self.dt;
                // Integrated SDE: V₁ − V₀ = κθ dt − κ∫V + σ∫√V dB.
                let int_sqrt_v_dw = (v_next - v - self.kappa * self.theta * self.dt + self.kappa * int_v) / self.sigma;
                VarianceStep {
                    v_next,
                    int_v,
                    int_sqrt_v_dw,
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recording {
    Terminal,
    FullPath,
}

/// Simulated paths; `times` matches the recorded states of each path
/// (only `τ` itself for [`Recording::Terminal`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub times: Vec<f64>,
    pub v: Vec<Vec<f64>>,
    /// Price paths (empty for variance-only ensembles).
    pub x: Vec<Vec<f64>>,
}

impl Ensemble {
    pub fn terminal_v(&self) -> Vec<f64> {
        self.v.iter().map(|p| *p.last().expect("non-empty path")).collect()
    }

    pub fn terminal_x(&self) -> Vec<f64> {
        self.x.iter().map(|p| *p.last().expect("non-empty path")).collect()
    }

    /// Writes `path, t, v[, x]` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| McError::Io(e.to_string());
        let with_x = !self.x.is_empty();
        if with_x {
            w.write_record(["path", "t", "v", "x"]).map_err(io)?;
        } else {
            w.write_record(["path", "t", "v"]).map_err(io)?;
        }
        for (p, vs) in self.v.iter().enumerate() {
            for (j, v) in vs.iter().enumerate() {
                let mut rec = vec![p.to_string(), format!("{:.16e}", self.times[j]), format!("{v:.16e}")];
                if with_x {
                    rec.push(format!("{:.16e}", self.x[p][j]));
                }
                w.write_record(&rec).map_err(io)?;
            }
        }
        w.flush().map_err(|e| McError::Io(e.to_string()))
    }
}

fn check_inputs(params: &HestonParams, v0: f64, tau: f64, cfg: &McConfig) -> Result<()> {
    model::validate_params(params).map_err(ModelError::Invalid)?;
    cfg.validate()?;
    if !(v0 > 0.0 && v0.is_finite()) || !(tau > 0.0 && tau.is_finite()) {
        return Err(McError::Config(format!("need v0 > 0 and tau > 0, got v0 = {v0}, tau = {tau}")));
    }
    Ok(())
}

fn record_times(tau: f64, n_steps: usize, recording: Recording) -> Vec<f64> {
    match recording {
        Recording::Terminal => vec![tau],
        Recording::FullPath => (0..=n_steps).map(|j| tau * j as f64 / n_steps as f64).collect(),
    }
}

/// Variance paths of `dV = k(Θ − V)ds + σ√V dB²` started at `v0`.
pub fn simulate_cir(
    params: &HestonParams,
    v0: f64,
    tau: f64,
    cfg: &McConfig,
    recording: Recording,
) -> Result<Ensemble> {
    let e = simulate_heston(params, 1.0, v0, tau, cfg, recording)?;
    Ok(Ensemble { x: Vec::new(), ..e })
}

/// Joint price/variance paths. The price uses the log update
/// `ln X += μ dt − ½∫V + ρ∫√V dB² + √(1−ρ²) √(∫V) Z`.
pub fn simulate_heston(
    params: &HestonParams,
    x0: f64,
    v0: f64,
    tau: f64,
    cfg: &McConfig,
    recording: Recording,
) -> Result<Ensemble> {
    check_inputs(params, v0, tau, cfg)?;
    let n = cfg.n_steps;
    let dt = tau / n as f64;
    let stepper = VarianceStepper::new(params.k, params.theta, params.sigma, dt, cfg.scheme);
    let rho_perp = (1.0 - params.rho * params.rho).sqrt();
    let units: Vec<Vec<(Vec<f64>, Vec<f64>)>> = (0..cfg.n_units())
        .into_par_iter()
        .map(|unit| {
            cfg.signs()
                .iter()
                .map(|&sign| {
                    let mut rng = cfg.rng(unit);
                    let (mut v, mut lx) = (v0, x0.ln());
                    let cap = if recording == Recording::FullPath { n + 1 } else { 1 };
                    let (mut vs, mut xs) = (Vec::with_capacity(cap), Vec::with_capacity(cap));
                    if recording == Recording::FullPath {
                        vs.push(v);
                        xs.push(x0);
                    }
                    for _ in 0..n {
                        let s = stepper.step(&mut rng, v, sign);
                        let z: f64 = sign * rng.sample::<f64, _>(StandardNormal);
                        lx += params.mu * dt - 0.5 * s.int_v
                            + params.rho * s.int_sqrt_v_dw
                            + rho_perp * s.int_v.sqrt() * z;
                        v = s.v_next;
                        if recording == Recording::FullPath {
                            vs.push(v);
                            xs.push(lx.exp());
                        }
                    }
                    if recording == Recording::Terminal {
                        vs.push(v);
                        xs.push(lx.exp());
                    }
                    (vs, xs)
                })
                .collect()
        })
        .collect();
    let (v, x) = units.into_iter().flatten().unzip();
    Ok(Ensemble {
        times: record_times(tau, n, recording),
        v,
        x,
    })
}

/// 3/2 short-rate model `dr = h r (m − r) dt + b r^{3/2} dB` attached to the
/// value factor, with `r₀ = C/v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThreeHalvesModel {
    pub h: f64,
    pub m: f64,
    pub b: f64,
}

impl ThreeHalvesModel {
    /// `b = σ/√C`, `h = −(σ²/C)(1+λ)`, `m = −kC/(σ²(1+λ))`.
    pub fn new(params: &HestonParams, constants: &DerivedConstants) -> Result<Self> {
        let one_plus_lambda = 1.0 + constants.lambda;
        if one_plus_lambda == 0.0 {
            return Err(McError::Degenerate("1 + lambda = 0 makes h and m singular".into()));
        }
        let s2 = params.sigma * params.sigma;
        let c = constants.big_c;
        Ok(Self {
            h: -(s2 / c) * one_plus_lambda,
            m: -params.k * c / (s2 * one_plus_lambda),
            b: params.sigma / c.sqrt(),
        })
    }

    /// CIR parameters `(κ, θ, σ)` of `y = 1/r`: `κ = hm`, `θ = (h + b²)/(hm)`, `σ = b`.
    pub fn reciprocal_cir(&self) -> (f64, f64, f64) {
        let kappa = self.h * self.m;
        (kappa, (self.h + self.b * self.b) / kappa, self.b)
    }
}

/// Bond estimate next to the closed form it should reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BondCheck {
    pub v: f64,
    pub tau: f64,
    pub estimate: McEstimate,
    pub closed_form: f64,
    pub z_score: f64,
    pub within_3se: bool,
}

/// Prices `E exp(−∫₀^τ r ds)`, `r₀ = C/v`, by simulating `y = 1/r` with the
/// exact CIR transition (whatever `cfg.scheme` says: an Euler `y` can reach 0,
/// where `r` is infinite) and integrating `1/y` with the trapezoid rule.
pub fn bond_check(
    params: &HestonParams,
    utility: &Utility,
    v: f64,
    tau: f64,
    cfg: &McConfig,
) -> Result<BondCheck> {
    check_inputs(params, v, tau, cfg)?;
    let constants = model::derive_constants(params, utility)?;
    let model = ThreeHalvesModel::new(params, &constants)?;
    let (kappa, theta, sigma) = model.reciprocal_cir();
    if !(2.0 * kappa * theta > sigma * sigma) {
        return Err(McError::Degenerate(format!(
            "the reciprocal of the short rate violates the Feller condition (2*kappa*theta = {}, b^2 = {}); \
             it reaches 0 and the discount integral diverges",
            2.0 * kappa * theta,
            sigma * sigma
        )));
    }
    let n = cfg.n_steps;
    let dt = tau / n as f64;
    let cir = CirTransition::new(kappa, theta, sigma, dt);
    let y0 = v / constants.big_c;
    let samples: Vec<std::result::Result<f64, (usize, usize)>> = (0..cfg.n_units())
        .into_par_iter()
        .map(|unit| {
            let mut acc = 0.0;
            for (member, &sign) in cfg.signs().iter().enumerate() {
                let mut rng = cfg.rng(unit);
                let mut y = y0;
                let mut integral = 0.0;
                for step in 0..n {
                    let y_next = cir.sample(&mut rng, y, sign);
                    integral += 0.5 * (1.0 / y + 1.0 / y_next) * dt;
                    if integral.is_nan() {
                        return Err((unit * cfg.signs().len() + member, step));
                    }
                    y = y_next;
                }
                acc += (-integral).exp();
            }
            Ok(acc / cfg.signs().len() as f64)
        })
        .collect();
    let samples = samples
        .into_iter()
        .collect::<std::result::Result<Vec<f64>, _>>()
        .map_err(|(path, step)| McError::NonFinite { path, step })?;
    let estimate = McEstimate::from_samples(&samples);
    let closed_form = policy::value_factor(&constants, params, v, tau)?;
    let z_score = estimate.z_score(closed_form);
    Ok(BondCheck {
        v,
        tau,
        estimate,
        closed_form,
        z_score,
        within_3se: z_score <= 3.0,
    })
}

/// `v·f_v/f` tabulated on a uniform grid in `ln Ψ` with local cubic
/// interpolation (relative error ~1e-10), so that feedback controls can be
/// evaluated at every step of every path.
#[derive(Debug, Clone)]
struct RatioTable {
    u0: f64,
    du: f64,
    values: Vec<f64>,
    constants: DerivedConstants,
}

impl RatioTable {
    const LN_PSI_MIN: f64 = -23.0;
    const LN_PSI_MAX: f64 = 18.0;
    const NODES: usize = 8192;

    fn new(constants: &DerivedConstants) -> Result<Self> {
        let du = (Self::LN_PSI_MAX - Self::LN_PSI_MIN) / (Self::NODES - 1) as f64;
        let values = (0..Self::NODES)
            .map(|i| policy::scaled_log_derivative(constants, (Self::LN_PSI_MIN + i as f64 * du).exp()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            u0: Self::LN_PSI_MIN,
            du,
            values,
            constants: *constants,
        })
    }

    fn eval(&self, psi: f64) -> f64 {
        let u = psi.ln();
        let s = (u - self.u0) / self.du;
        if s <= 0.0 {
            return self.values[0];
        }
        if s >= (self.values.len() - 1) as f64 {
            return self.constants.ratio_prefactor()
                * crate::specfun::kummer_ratio_shifted_leading(self.constants.kummer_a(), psi);
        }
        let i = (s.floor() as usize).clamp(1, self.values.len() - 3);
        let t = s - i as f64;
        let [p0, p1, p2, p3] = [
            self.values[i - 1],
            self.values[i],
            self.values[i + 1],
            self.values[i + 2],
        ];
        // Cubic Lagrange through nodes i-1..i+2 at offset t from node i.
        let w0 = -t * (t - 1.0) * (t - 2.0) / 6.0;
        let w1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
        let w2 = -(t + 1.0) * t * (t - 2.0) / 2.0;
        let w3 = (t + 1.0) * t * (t - 1.0) / 6.0;
        w0 * p0 + w1 * p1 + w2 * p2 + w3 * p3
    }
}

/// Expected utility under one hedging scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingResult {
    pub scaling: f64,
    pub estimate: McEstimate,
    /// Paired difference `U(scaling) − U(1.0)`.
    pub diff_vs_optimal: McEstimate,
}

impl ScalingResult {
    /// True when this scaling beats the optimal control by more than 3 SE.
    pub fn dominates_optimal(&self) -> bool {
        self.diff_vs_optimal.mean > 3.0 * self.diff_vs_optimal.std_error
    }

    /// True when the paired difference is within 3 SE of zero.
    pub fn indistinguishable(&self) -> bool {
        self.diff_vs_optimal.z_score(0.0) <= 3.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtilityCheck {
    pub point: EvaluationPoint,
    pub closed_form: f64,
    /// The optimal control (scaling 1.0).
    pub optimal: McEstimate,
    pub results: Vec<ScalingResult>,
    pub flagged_paths: usize,
    pub total_paths: usize,
}

impl UtilityCheck {
    pub fn optimal_z_score(&self) -> f64 {
        self.optimal.z_score(self.closed_form)
    }
}

/// Simulates wealth under the feedback control with the hedging term scaled
/// by each factor in `scalings` (and by 1.0 as the reference), on shared
/// variance/price paths.
///
/// Power utility evolves `ln W` with the constant fraction `π = αX/W` over
/// each step, so wealth stays positive; exponential utility evolves `W` with
/// the constant amount `αX`. A path is flagged when any of its wealth values
/// is non-finite (or non-positive for power utility) and excluded.
pub fn utility_check(
    point: &EvaluationPoint,
    utility: &Utility,
    params: &HestonParams,
    cfg: &McConfig,
    scalings: &[f64],
) -> Result<UtilityCheck> {
    point.validate_for(utility)?;
    let tau = point.tau();
    check_inputs(params, point.v, tau, cfg)?;
    let constants = model::derive_constants(params, utility)?;
    let closed_form = policy::bellman(point, utility, &constants, params)?;
    let table = RatioTable::new(&constants)?;

    let mut all = vec![1.0];
    all.extend_from_slice(scalings);
    let n = cfg.n_steps;
    let dt = tau / n as f64;
    let stepper = VarianceStepper::new(params.k, params.theta, params.sigma, dt, cfg.scheme);
    let rho_perp = (1.0 - params.rho * params.rho).sqrt();
    let hedge_coef = params.rho * params.sigma / constants.delta;
    // Ψ = v · psi_scale[i] at the start of step i.
    let psi_scale: Vec<f64> = (0..n)
        .map(|i| {
            let tau_i = tau - i as f64 * dt;
            2.0 * params.k / (params.sigma * params.sigma * (params.k * tau_i).exp_m1())
        })
        .collect();
    // Fraction (power) or amount (exponential) per unit of μ/v + hedging bracket.
    let scale = match *utility {
        Utility::Power { gamma } => 1.0 / (1.0 - gamma),
        Utility::Exponential { c } => 1.0 / c,
    };
    let power = matches!(utility, Utility::Power { .. });

    let per_unit: Vec<Option<Vec<f64>>> = (0..cfg.n_units())
        .into_par_iter()
        .map(|unit| {
            let mut sums = vec![0.0; all.len()];
            for &sign in cfg.signs() {
                let mut rng = cfg.rng(unit);
                let mut v = point.v;
                let mut wealth = vec![if power { point.w.ln() } else { point.w }; all.len()];
                for &ps in &psi_scale {
                    let vp = v.max(0.0);
                    let myopic = params.mu / vp;
                    let hedge = hedge_coef * table.eval(vp * ps) / vp;
                    let s = stepper.step(&mut rng, v, sign);
                    let z: f64 = sign * rng.sample::<f64, _>(StandardNormal);
                    let dx = params.mu * dt + params.rho * s.int_sqrt_v_dw + rho_perp * s.int_v.sqrt() * z;
                    for (w, &a) in wealth.iter_mut().zip(&all) {
                        let pos = scale * (myopic + a * hedge);
                        if power {
                            *w += pos * dx - 0.5 * pos * pos * s.int_v;
                        } else {
                            *w += pos * dx;
                        }
                    }
                    v = s.v_next;
                }
                for (acc, w) in sums.iter_mut().zip(&wealth) {
                    let terminal = if power { w.exp() } else { *w };
                    let u = utility.eval(terminal);
                    if !u.is_finite() || (power && !(terminal > 0.0)) {
                        return None;
                    }
                    *acc += u;
                }
            }
            let m = cfg.signs().len() as f64;
            Some(sums.into_iter().map(|s| s / m).collect())
        })
        .collect();

    let total_paths = cfg.n_paths;
    let kept: Vec<&Vec<f64>> = per_unit.iter().flatten().collect();
    let flagged_paths = (per_unit.len() - kept.len()) * cfg.signs().len();
    if flagged_paths as f64 > MAX_FLAGGED_FRACTION * total_paths as f64 {
        return Err(McError::TooManyFlagged {
            flagged: flagged_paths,
            total: total_paths,
            limit: MAX_FLAGGED_FRACTION,
        });
    }
    let column = |j: usize| kept.iter().map(|row| row[j]).collect::<Vec<f64>>();
    let reference = column(0);
    let results = (1..all.len())
        .map(|j| {
            let col = column(j);
            let diff: Vec<f64> = col.iter().zip(&reference).map(|(a, b)| a - b).collect();
            ScalingResult {
                scaling: all[j],
                estimate: McEstimate::from_samples(&col),
                diff_vs_optimal: McEstimate::from_samples(&diff),
            }
        })
        .collect();
    Ok(UtilityCheck {
        point: *point,
        closed_form,
        optimal: McEstimate::from_samples(&reference),
        results,
        flagged_paths,
        total_paths,
    })
}
