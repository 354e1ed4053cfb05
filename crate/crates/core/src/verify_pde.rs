//! Finite-difference verification of the value factor.
//!
//! Two independent checks of the closed form:
//!
//! * [`pde_residual`] plugs any evaluator into the linear PDE
//!   `(σ²v/2) f_vv + (A − kv) f_v − (C/v) f − f_τ = 0`, `A = kΘ − hedge_drift`,
//!   using centered differences;
//! * [`cn_solve`] marches the terminal data `f = 1` backward with
//!   Crank–Nicolson and returns a full numerical surface.
//!
//! # Boundaries
//!
//! The problem has no boundary data in `v`. At `v_max` the PDE itself is
//! imposed with one-sided second-order stencils. At `v_min` the same
//! treatment is ill-posed: `v = 0` is a regular singular point whose
//! indicial exponents `p±` solve `σ²p²/2 + (A − σ²/2)p − C = 0`, and a
//! one-sided PDE row lets the singular `v^{p−}` mode leak in. Instead the
//! regularity condition `v f_v = p₊ f` is imposed there (second-order
//! one-sided difference, no time derivative), which selects the bounded
//! branch without inventing data.
//!
//! The condition holds for the true solution only up to `O(Ψ(v_min, τ))`,
//! which is why the default `v_min` sits far below the region of interest.
//! The flat terminal condition is also incompatible with it, so a thin corner
//! layer near `(v_min, τ = 0)` does not converge at second order. [`compare_closed_form`] therefore measures interior nodes with
//! `τ ≥ τ_max / 16`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{DerivedConstants, HestonParams};
use crate::policy::{self, PolicyError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PdeError {
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numerical instability at time step {step} (tau = {tau}): non-finite value at v = {v}")]
    Instability { step: usize, tau: f64, v: f64 },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("csv output failed: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, PdeError>;

/// Number of leading time steps taken as implicit-Euler half-step pairs.
/// One pair leaves enough of the stiff `C/v` modes near `v_min` undamped to
/// spoil the second-order rate at fine grids; two pairs do not.
pub const RANNACHER_STEPS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stretching {
    /// Uniform in `v`.
    None,
    /// Uniform in `ln v`, clustering nodes toward `v_min`.
    Geometric,
}

/// Computational grid. `n_v` counts variance nodes, `n_tau` counts time steps
/// (the surface has `n_tau + 1` time levels including `τ = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub v_min: f64,
    pub v_max: f64,
    pub n_v: usize,
    pub tau_max: f64,
    pub n_tau: usize,
    pub stretching: Stretching,
}

impl GridSpec {
    /// `v_min = 1e-6·Θ`, `v_max = Θ + 10σ√(Θ/2k)`, `τ_max = 1`, 512 × 512, geometric.
    ///
    /// The regularity condition at `v_min` is exact only as `Ψ(v_min, τ) → 0`;
    /// its `O(Ψ)` defect is a grid-independent error floor, which at
    /// `v_min = 1e-4·Θ` is already ~4e-4 relative at `τ = τ_max/16`.
    pub fn default_for(params: &HestonParams) -> Self {
        Self {
            v_min: 1e-6 * params.theta,
            v_max: params.theta + 10.0 * params.sigma * (params.theta / (2.0 * params.k)).sqrt(),
            n_v: 512,
            tau_max: 1.0,
            n_tau: 512,
            stretching: Stretching::Geometric,
        }
    }

    pub fn with_resolution(self, n_v: usize, n_tau: usize) -> Self {
        Self { n_v, n_tau, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.v_min > 0.0 && self.v_min.is_finite()) {
            problems.push(format!("v_min must be positive, got {}", self.v_min));
        }
        if !(self.v_max > self.v_min && self.v_max.is_finite()) {
            problems.push(format!("v_max must exceed v_min, got {}", self.v_max));
        }
        if self.n_v < 16 {
            problems.push(format!("n_v must be at least 16, got {}", self.n_v));
        }
        if !(self.tau_max > 0.0 && self.tau_max.is_finite()) {
            problems.push(format!("tau_max must be positive, got {}", self.tau_max));
        }
        if self.n_tau < 16 {
            problems.push(format!("n_tau must be at least 16, got {}", self.n_tau));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(PdeError::Grid(problems.join("; ")))
        }
    }

    /// Variance nodes, `v_min` and `v_max` inclusive.
    pub fn v_nodes(&self) -> Vec<f64> {
        let last = (self.n_v - 1) as f64;
        (0..self.n_v)
            .map(|i| {
                let s = i as f64 / last;
                match self.stretching {
                    Stretching::None => self.v_min + s * (self.v_max - self.v_min),
                    Stretching::Geometric => (self.v_min.ln() + s * (self.v_max / self.v_min).ln()).exp(),
                }
            })
            .collect()
    }

    pub fn tau_nodes(&self) -> Vec<f64> {
        (0..=self.n_tau)
            .map(|j| self.tau_max * j as f64 / self.n_tau as f64)
            .collect()
    }
}

/// Drift coefficient `A = kΘ − hedge_drift` of the linear PDE.
pub fn pde_drift(params: &HestonParams, constants: &DerivedConstants) -> f64 {
    params.k * params.theta - constants.hedge_drift
}

/// Centered-difference value of
/// `(σ²v/2) f_vv + (A − kv) f_v − (C/v) f − f_τ` at `(v, τ)`.
pub fn pde_residual<F>(
    f_eval: F,
    params: &HestonParams,
    constants: &DerivedConstants,
    point: (f64, f64),
    h_v: f64,
    h_tau: f64,
) -> Result<f64>
where
    F: Fn(f64, f64) -> std::result::Result<f64, PolicyError>,
{
    let (v, tau) = point;
    if !(h_v > 0.0 && h_tau > 0.0) {
        return Err(PdeError::Domain(format!("steps must be positive, got h_v = {h_v}, h_tau = {h_tau}")));
    }
    if !(v - h_v > 0.0) || !(tau - h_tau > 0.0) || !v.is_finite() || !tau.is_finite() {
        return Err(PdeError::Domain(format!(
            "stencil around (v = {v}, tau = {tau}) with steps ({h_v}, {h_tau}) leaves v > 0, tau > 0"
        )));
    }
    let f0 = f_eval(v, tau)?;
    let fp = f_eval(v + h_v, tau)?;
    let fm = f_eval(v - h_v, tau)?;
    let ftp = f_eval(v, tau + h_tau)?;
    let ftm = f_eval(v, tau - h_tau)?;
    let f_v = (fp - fm) / (2.0 * h_v);
    let f_vv = (fp - 2.0 * f0 + fm) / (h_v * h_v);
    let f_tau = (ftp - ftm) / (2.0 * h_tau);
    let a = pde_drift(params, constants);
    Ok(0.5 * params.sigma * params.sigma * v * f_vv + (a - params.k * v) * f_v - constants.big_c / v * f0 - f_tau)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualReport {
    pub max_abs_residual: f64,
    pub l2_residual: f64,
    /// `(v, τ)` of the largest residual.
    pub worst_point: (f64, f64),
    /// Relative variance step (`h_v = rel · v`) and absolute time step.
    pub steps: (f64, f64),
    /// `log₂` of the max-residual ratio between steps `h` and `h/2`.
    pub richardson_order: f64,
}

/// Residual statistics of the closed form over `points`, with an order
/// estimate from a second pass at halved steps.
pub fn residual_report(
    params: &HestonParams,
    constants: &DerivedConstants,
    points: &[(f64, f64)],
    h_v_rel: f64,
    h_tau: f64,
) -> Result<ResidualReport> {
    let eval = |v: f64, tau: f64| policy::value_factor(constants, params, v, tau);
    let pass = |hv: f64, ht: f64| -> Result<(f64, f64, (f64, f64))> {
        let mut max = 0.0f64;
        let mut sum_sq = 0.0;
        let mut worst = points.first().copied().unwrap_or((f64::NAN, f64::NAN));
        for &(v, tau) in points {
            let r = pde_residual(eval, params, constants, (v, tau), hv * v, ht)?;
            sum_sq += r * r;
            if r.abs() > max {
                max = r.abs();
                worst = (v, tau);
            }
        }
        Ok((max, (sum_sq / points.len().max(1) as f64).sqrt(), worst))
    };
    let (max, l2, worst) = pass(h_v_rel, h_tau)?;
    let (max_half, _, _) = pass(h_v_rel / 2.0, h_tau / 2.0)?;
    Ok(ResidualReport {
        max_abs_residual: max,
        l2_residual: l2,
        worst_point: worst,
        steps: (h_v_rel, h_tau),
        richardson_order: (max / max_half).log2(),
    })
}

/// Numerical solution on a [`GridSpec`]: `values[j * v.len() + i]` is `f(v[i], tau[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface {
    pub v: Vec<f64>,
    pub tau: Vec<f64>,
    pub values: Vec<f64>,
}

impl Surface {
    pub fn at(&self, j: usize, i: usize) -> f64 {
        self.values[j * self.v.len() + i]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let n = self.v.len();
        &self.values[j * n..(j + 1) * n]
    }
}

/// Larger root of `σ²p²/2 + (A − σ²/2)p − C = 0`: the exponent of the
/// bounded solution `f ∝ v^{p₊}` near `v = 0`.
pub fn regular_exponent(params: &HestonParams, constants: &DerivedConstants) -> f64 {
    let s2 = params.sigma * params.sigma;
    let b = pde_drift(params, constants) - 0.5 * s2;
    let disc = (b * b + 2.0 * s2 * constants.big_c).sqrt();
    if b > 0.0 {
        // Cancellation-free form of (−b + disc)/σ².
        2.0 * constants.big_c / (b + disc)
    } else {
        (disc - b) / s2
    }
}

/// Spatial operator in the computational coordinate ξ (uniform, spacing `h`).
struct Operator {
    lo: Vec<f64>,
    di: Vec<f64>,
    up: Vec<f64>,
    /// PDE row at `v_max`, acting on the last four nodes.
    last: [f64; 4],
    /// Regularity row at `v_min`, acting on the first three nodes.
    robin: [f64; 3],
}

impl Operator {
    fn new(params: &HestonParams, constants: &DerivedConstants, grid: &GridSpec, v: &[f64]) -> Self {
        let n = v.len();
        let h = match grid.stretching {
            Stretching::None => (grid.v_max - grid.v_min) / (n - 1) as f64,
            Stretching::Geometric => (grid.v_max / grid.v_min).ln() / (n - 1) as f64,
        };
        let a = pde_drift(params, constants);
        let s2 = params.sigma * params.sigma;
        // v = g(ξ); f_v = f_ξ/g', f_vv = (f_ξξ − (g''/g') f_ξ)/g'².
        let metric = |vi: f64| match grid.stretching {
            Stretching::None => (1.0, 0.0),
            Stretching::Geometric => (vi, vi),
        };
        let coeffs = |vi: f64| {
            let (g1, g2) = metric(vi);
            let a2 = 0.5 * s2 * vi / (g1 * g1);
            let a1 = (a - params.k * vi) / g1 - a2 * g2 / g1;
            (a2, a1, -constants.big_c / vi)
        };
        let (mut lo, mut di, mut up) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 1..n - 1 {
            let (a2, a1, a0) = coeffs(v[i]);
            lo[i] = a2 / (h * h) - a1 / (2.0 * h);
            di[i] = -2.0 * a2 / (h * h) + a0;
            up[i] = a2 / (h * h) + a1 / (2.0 * h);
        }
        let (a2, a1, a0) = coeffs(v[n - 1]);
        let c2 = [-1.0, 4.0, -5.0, 2.0];
        let c1 = [0.0, 1.0, -4.0, 3.0];
        let mut last = [0.0; 4];
        for m in 0..4 {
            last[m] = a2 * c2[m] / (h * h) + a1 * c1[m] / (2.0 * h);
        }
        last[3] += a0;
        let q = regular_exponent(params, constants) * metric(v[0]).0 / v[0];
        let robin = [-3.0 / (2.0 * h) - q, 4.0 / (2.0 * h), -1.0 / (2.0 * h)];
        Self { lo, di, up, last, robin }
    }

    /// `L f` on rows `1..n`; row 0 is left at zero.
    fn apply(&self, f: &[f64], out: &mut [f64]) {
        let n = f.len();
        out[0] = 0.0;
        for i in 1..n - 1 {
            out[i] = self.lo[i] * f[i - 1] + self.di[i] * f[i] + self.up[i] * f[i + 1];
        }
        out[n - 1] = (0..4).map(|m| self.last[m] * f[n - 4 + m]).sum();
    }

    /// Solves `(I − θ dt L) f_new = rhs` on rows `1..n` with the regularity
    /// row at 0, reducing the bordered rows to tridiagonal form.
    fn implicit_solve(&self, rhs: &mut [f64], theta_dt: f64) {
        let n = rhs.len();
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        for i in 1..n - 1 {
            sub[i] = -theta_dt * self.lo[i];
            diag[i] = 1.0 - theta_dt * self.di[i];
            sup[i] = -theta_dt * self.up[i];
        }
        // Row 0: eliminate the entry at column 2 with row 1.
        rhs[0] = 0.0;
        let factor = self.robin[2] / sup[1];
        diag[0] = self.robin[0] - factor * sub[1];
        sup[0] = self.robin[1] - factor * diag[1];
        rhs[0] -= factor * rhs[1];
        // Row n-1: eliminate columns n-4 and n-3 with rows n-3 and n-2.
        let mut r: [f64; 4] = self.last.map(|x| -theta_dt * x);
        r[3] += 1.0;
        let mut b = rhs[n - 1];
        let factor = r[0] / sub[n - 3];
        r[1] -= factor * diag[n - 3];
        r[2] -= factor * sup[n - 3];
        b -= factor * rhs[n - 3];
        let factor = r[1] / sub[n - 2];
        r[2] -= factor * diag[n - 2];
        r[3] -= factor * sup[n - 2];
        b -= factor * rhs[n - 2];
        sub[n - 1] = r[2];
        diag[n - 1] = r[3];
        rhs[n - 1] = b;
        thomas(&sub, &mut diag, &sup, rhs);
    }
}

/// In-place tridiagonal solve; `diag` is overwritten.
fn thomas(sub: &[f64], diag: &mut [f64], sup: &[f64], rhs: &mut [f64]) {
    let n = rhs.len();
    for i in 1..n {
        let w = sub[i] / diag[i - 1];
        diag[i] -= w * sup[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    rhs[n - 1] /= diag[n - 1];
    for i in (0..n - 1).rev() {
        rhs[i] = (rhs[i] - sup[i] * rhs[i + 1]) / diag[i];
    }
}

/// Crank–Nicolson march of `f(·, τ = 0) = 1`. Each of the first
/// [`RANNACHER_STEPS`] steps is replaced by two implicit-Euler half-steps.
pub fn cn_solve(params: &HestonParams, constants: &DerivedConstants, grid: &GridSpec) -> Result<Surface> {
    grid.validate()?;
    let v = grid.v_nodes();
    let tau = grid.tau_nodes();
    let n = v.len();
    let op = Operator::new(params, constants, grid, &v);
    let dt = grid.tau_max / grid.n_tau as f64;

    let mut values = Vec::with_capacity(n * tau.len());
    let mut f = vec![1.0; n];
    values.extend_from_slice(&f);
    let mut lf = vec![0.0; n];
    for step in 1..tau.len() {
        if step <= RANNACHER_STEPS {
            for _ in 0..2 {
                op.implicit_solve(&mut f, 0.5 * dt);
            }
        } else {
            op.apply(&f, &mut lf);
            for i in 0..n {
                f[i] += 0.5 * dt * lf[i];
            }
            op.implicit_solve(&mut f, 0.5 * dt);
        }
        if let Some(i) = f.iter().position(|x| !x.is_finite()) {
            return Err(PdeError::Instability {
                step,
                tau: tau[step],
                v: v[i],
            });
        }
        values.extend_from_slice(&f);
    }
    Ok(Surface { v, tau, values })
}

/// One node of a numerical-vs-closed-form comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub v: f64,
    pub tau: f64,
    pub f_numeric: f64,
    pub f_closed_form: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub max_rel_error: f64,
    pub worst: (f64, f64),
}

/// Compares the surface with the closed form on the interior nodes
/// `0 < i < n_v − 1`, `τ ≥ τ_max/16`.
pub fn compare_closed_form(
    surface: &Surface,
    params: &HestonParams,
    constants: &DerivedConstants,
) -> Result<Comparison> {
    let tau_max = *surface.tau.last().unwrap_or(&0.0);
    let n = surface.v.len();
    let mut rows = Vec::new();
    let mut max = 0.0f64;
    let mut worst = (f64::NAN, f64::NAN);
    for (j, &tau) in surface.tau.iter().enumerate() {
        if tau < tau_max / 16.0 {
            continue;
        }
        for i in 1..n - 1 {
            let v = surface.v[i];
            let exact = policy::value_factor(constants, params, v, tau)?;
            let numeric = surface.at(j, i);
            let rel = ((numeric - exact) / exact).abs();
            if rel > max || worst.0.is_nan() {
                max = max.max(rel);
                worst = (v, tau);
            }
            rows.push(ComparisonRow {
                v,
                tau,
                f_numeric: numeric,
                f_closed_form: exact,
                rel_error: rel,
            });
        }
    }
    Ok(Comparison {
        rows,
        max_rel_error: max,
        worst,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceLevel {
    pub n: usize,
    pub max_rel_error: f64,
    /// `log₂` of the error ratio against the previous (coarser) level.
    pub observed_order: Option<f64>,
}

/// Solves at each resolution `n` (`n_v = n_tau = n`) and records the
/// comparison error and observed order between consecutive levels.
pub fn convergence_study(
    params: &HestonParams,
    constants: &DerivedConstants,
    base: &GridSpec,
    levels: &[usize],
) -> Result<Vec<ConvergenceLevel>> {
    let mut out: Vec<ConvergenceLevel> = Vec::with_capacity(levels.len());
    for &n in levels {
        let grid = base.with_resolution(n, n);
        let surface = cn_solve(params, constants, &grid)?;
        let err = compare_closed_form(&surface, params, constants)?.max_rel_error;
        let observed_order = out.last().map(|prev| {
            (prev.max_rel_error / err).ln() / (n as f64 / prev.n as f64).ln()
        });
        out.push(ConvergenceLevel {
            n,
            max_rel_error: err,
            observed_order,
        });
    }
    Ok(out)
}

/// Writes `v, tau, f_numeric, f_closed_form, rel_error` with 17 significant digits.
pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| PdeError::Io(e.to_string());
    w.write_record(["v", "tau", "f_numeric", "f_closed_form", "rel_error"])
        .map_err(io)?;
    for r in rows {
        w.write_record(
            [r.v, r.tau, r.f_numeric, r.f_closed_form, r.rel_error].map(|x| format!("{x:.16e}")),
        )
        .map_err(io)?;
    }
    w.flush().map_err(|e| PdeError::Io(e.to_string()))
}
