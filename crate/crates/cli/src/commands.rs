//! Command implementations. Each command resolves its inputs into an
//! [`Invocation`] plus a [`ResolvedConfig`]; [`execute`] turns that pair into
//! output bytes, so `rerun` repeats a manifest exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use hestonopt::model::{DerivedConstants, EvaluationPoint, HestonParams, Utility};
use hestonopt::policy::{HestonSolution, PolicyOutput};
use hestonopt::verify_mc::{bond_check, utility_check, McConfig, McEstimate};
use hestonopt::verify_pde::{cn_solve, compare_closed_form, convergence_study, residual_report, GridSpec};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigFile, McSection, ResolvedConfig};
use crate::manifest::{digest_file, sha256_hex, sidecar_path, FileDigest, Invocation, RunManifest};
use crate::{CliError, EvaluateArgs, RerunArgs, SurfaceArgs, VerifyArgs, Which};

/// Horizon of the Monte Carlo checks run by `verify`.
pub const MC_HORIZON: f64 = 0.5;
/// Hedging scalings compared against the optimal control.
pub const MC_SCALINGS: [f64; 3] = [0.0, 0.5, 2.0];
/// Bond test variances as multiples of Θ.
pub const MC_BOND_VARIANCES: [f64; 3] = [0.5, 1.0, 2.0];

pub const SURFACE_HEADER: &str = "v,tau,f,fv_over_f,control_myopic,control_hedging,control_total";

/// Output of one execution; `failure` is set when a verify check failed.
pub struct Executed {
    pub bytes: Vec<u8>,
    pub failure: Option<String>,
}

#[derive(Debug, Serialize)]
struct ConstantsReport {
    #[serde(flatten)]
    constants: DerivedConstants,
    kummer_a: f64,
    kummer_b: f64,
}

#[derive(Debug, Serialize)]
struct EvaluateReport {
    point: EvaluationPoint,
    model: HestonParams,
    utility: Utility,
    constants: ConstantsReport,
    result: PolicyOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerance {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub tolerance: Tolerance,
    /// `null` when not finite.
    pub observed: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: impl Into<String>, observed: f64, lower: Option<f64>, upper: Option<f64>) -> Self {
        let passed = observed.is_finite()
            && lower.is_none_or(|l| observed >= l)
            && upper.is_none_or(|u| observed <= u);
        Self {
            name: name.into(),
            tolerance: Tolerance { lower, upper },
            observed,
            passed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub which: Which,
    pub checks: Vec<Check>,
    pub passed: bool,
}

fn load_and_resolve(
    path: &Path,
    grid: &crate::config::GridSection,
    mc: Option<&McSection>,
) -> Result<(ResolvedConfig, FileDigest), CliError> {
    let (file, bytes) = ConfigFile::load(path)?;
    let grid = file.grid.overlay(grid).resolve(&file.model);
    let mc = match mc {
        Some(flags) => Some(file.mc.overlay(flags).resolve(MC_HORIZON)?),
        None => None,
    };
    let resolved = ResolvedConfig {
        model: file.model,
        utility: file.utility,
        grid,
        mc,
    };
    resolved.validate()?;
    let digest = FileDigest {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
    };
    Ok((resolved, digest))
}

/// Writes `bytes` to `out` and the manifest sidecar next to it.
fn write_with_manifest(
    out: &Path,
    bytes: &[u8],
    invocation: Invocation,
    resolved: ResolvedConfig,
    inputs: Vec<FileDigest>,
    threads: Option<usize>,
) -> Result<RunManifest, CliError> {
    std::fs::write(out, bytes)?;
    let manifest = RunManifest::new(invocation, resolved, inputs, vec![digest_file(out)?], threads);
    manifest.write_sidecar()?;
    Ok(manifest)
}

fn finish(executed: Executed) -> Result<(), CliError> {
    match executed.failure {
        Some(msg) => Err(CliError::ChecksFailed(msg)),
        None => Ok(()),
    }
}

pub fn evaluate(args: &EvaluateArgs, threads: Option<usize>) -> Result<(), CliError> {
    let (resolved, digest) = load_and_resolve(&args.config, &Default::default(), None)?;
    let point = EvaluationPoint {
        w: args.w,
        x: args.x,
        v: args.v,
        t: args.t,
        horizon: args.horizon,
    };
    let invocation = Invocation::Evaluate { point };
    let executed = execute(&invocation, &resolved)?;
    match &args.out {
        Some(out) => {
            write_with_manifest(out, &executed.bytes, invocation, resolved, vec![digest], threads)?;
        }
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&executed.bytes)?;
        }
    }
    finish(executed)
}

pub fn surface(args: &SurfaceArgs, threads: Option<usize>) -> Result<(), CliError> {
    let (resolved, digest) = load_and_resolve(&args.config, &args.grid.section(), None)?;
    let invocation = Invocation::Surface { w: args.w, x: args.x };
    let executed = execute(&invocation, &resolved)?;
    write_with_manifest(&args.out, &executed.bytes, invocation, resolved, vec![digest], threads)?;
    finish(executed)
}

pub fn verify(args: &VerifyArgs, threads: Option<usize>) -> Result<(), CliError> {
    let mc = args.mc_section();
    let mc = (args.which != Which::Pde).then_some(&mc);
    let (resolved, digest) = load_and_resolve(&args.config, &args.grid.section(), mc)?;
    let invocation = Invocation::Verify { which: args.which };
    let executed = execute(&invocation, &resolved)?;
    write_with_manifest(&args.report, &executed.bytes, invocation, resolved, vec![digest], threads)?;
    finish(executed)
}

#[derive(Debug, Serialize)]
struct RerunSummary {
    output: PathBuf,
    sha256: String,
    recorded_sha256: String,
    reproduced: bool,
}

/// Repeats the recorded run and compares the new output digest with the
/// recorded one; a mismatch is a failed check (exit 1).
pub fn rerun(args: &RerunArgs, threads: Option<usize>) -> Result<(), CliError> {
    let recorded = RunManifest::load(&args.manifest)?;
    recorded.resolved_config.validate()?;
    let original = recorded
        .outputs
        .first()
        .ok_or_else(|| CliError::Validation("manifest lists no outputs".into()))?;
    let out = match &args.output_dir {
        Some(dir) => {
            let name = original
                .path
                .file_name()
                .ok_or_else(|| CliError::Validation("recorded output has no file name".into()))?;
            dir.join(name)
        }
        None => original.path.clone(),
    };
    let executed = execute(&recorded.invocation, &recorded.resolved_config)?;
    let manifest = write_with_manifest(
        &out,
        &executed.bytes,
        recorded.invocation.clone(),
        recorded.resolved_config.clone(),
        vec![digest_file(&args.manifest)?],
        threads,
    )?;
    let summary = RerunSummary {
        output: out.clone(),
        sha256: manifest.outputs[0].sha256.clone(),
        recorded_sha256: original.sha256.clone(),
        reproduced: manifest.outputs[0].sha256 == original.sha256,
    };
    println!("{}", serde_json::to_string_pretty(&summary).map_err(|e| CliError::Io(e.to_string()))?);
    if !summary.reproduced {
        return Err(CliError::ChecksFailed(format!(
            "{} differs from the recorded output (manifest sidecar: {})",
            out.display(),
            sidecar_path(&out).display()
        )));
    }
    finish(executed)
}

/// Produces the output bytes of `invocation` under `resolved`.
pub fn execute(invocation: &Invocation, resolved: &ResolvedConfig) -> Result<Executed, CliError> {
    let solution = HestonSolution::new(resolved.model, resolved.utility)?;
    match invocation {
        Invocation::Evaluate { point } => {
            point.validate_for(&resolved.utility)?;
            let result = solution.evaluate(point)?;
            let report = EvaluateReport {
                point: *point,
                model: resolved.model,
                utility: resolved.utility,
                constants: ConstantsReport {
                    constants: solution.constants,
                    kummer_a: solution.constants.kummer_a(),
                    kummer_b: solution.constants.kummer_b(),
                },
                result,
            };
            Ok(Executed {
                bytes: to_json(&report)?,
                failure: None,
            })
        }
        Invocation::Surface { w, x } => Ok(Executed {
            bytes: surface_csv(&solution, &resolved.grid, *w, *x)?.into_bytes(),
            failure: None,
        }),
        Invocation::Verify { which } => {
            let mut checks = Vec::new();
            if *which != Which::Mc {
                checks.extend(pde_checks(&solution, &resolved.grid)?);
            }
            if *which != Which::Pde {
                let cfg = resolved
                    .mc
                    .as_ref()
                    .ok_or_else(|| CliError::Validation("Monte Carlo verification needs an mc section with a seed".into()))?;
                checks.extend(mc_checks(&solution, cfg)?);
            }
            let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
            let failure = (!failed.is_empty()).then(|| format!("failed checks: {}", failed.join(", ")));
            let report = VerifyReport {
                which: *which,
                passed: failed.is_empty(),
                checks,
            };
            Ok(Executed {
                bytes: to_json(&report)?,
                failure,
            })
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// One CSV row per grid node, `τ` outer, `v` inner, all values `{:.16e}`.
pub fn surface_csv(solution: &HestonSolution, grid: &GridSpec, w: f64, x: f64) -> Result<String, CliError> {
    grid.validate()?;
    let v_nodes = grid.v_nodes();
    let rows: Vec<Result<String, CliError>> = grid
        .tau_nodes()
        .par_iter()
        .map(|&tau| {
            let mut block = String::new();
            for &v in &v_nodes {
                let out = solution.evaluate(&EvaluationPoint { w, x, v, t: 0.0, horizon: tau })?;
                writeln!(
                    block,
                    "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                    v, tau, out.f, out.fv_over_f, out.myopic_term, out.hedging_term, out.control
                )
                .expect("writing to a String cannot fail");
            }
            Ok(block)
        })
        .collect();
    let mut csv = String::from(SURFACE_HEADER);
    csv.push('\n');
    for block in rows {
        csv.push_str(&block?);
    }
    Ok(csv)
}

/// Residual points: `v ∈ Θ·{1/4, 1/2, 1, 2, 4}`, `τ ∈ τ_max·{0.1, 0.3, 0.6, 1}`.
pub fn residual_points(params: &HestonParams, tau_max: f64) -> Vec<(f64, f64)> {
    let mut points = Vec::with_capacity(20);
    for s in [0.25, 0.5, 1.0, 2.0, 4.0] {
        for r in [0.1, 0.3, 0.6, 1.0] {
            points.push((s * params.theta, r * tau_max));
        }
    }
    points
}

fn pde_checks(solution: &HestonSolution, grid: &GridSpec) -> Result<Vec<Check>, CliError> {
    let (p, c) = (&solution.params, &solution.constants);
    let n = grid.n_v.min(grid.n_tau);
    if n < 64 {
        return Err(CliError::Validation(format!(
            "verify needs n_v and n_tau of at least 64 for the n/4, n/2, n convergence study, got {} x {}",
            grid.n_v, grid.n_tau
        )));
    }
    let points = residual_points(p, grid.tau_max);
    let mut checks = Vec::new();

    let fine = residual_report(p, c, &points, 1e-4, 1e-4 * grid.tau_max)?;
    checks.push(Check::new("pde.residual.max_abs", fine.max_abs_residual, None, Some(1e-6)));
    let coarse = residual_report(p, c, &points, 0.05, 0.02 * grid.tau_max)?;
    checks.push(Check::new("pde.residual.halving_order", coarse.richardson_order, Some(1.8), Some(2.2)));

    let surface = cn_solve(p, c, grid)?;
    let cmp = compare_closed_form(&surface, p, c)?;
    checks.push(Check::new("pde.crank_nicolson.max_rel_error", cmp.max_rel_error, None, Some(5e-4)));

    let n_v = surface.v.len();
    let violations = (1..surface.tau.len())
        .flat_map(|j| surface.row(j)[1..n_v - 1].iter())
        .filter(|&&f| !(f > 0.0 && f <= 1.0 + 1e-8))
        .count();
    checks.push(Check::new("pde.crank_nicolson.max_principle_violations", violations as f64, None, Some(0.0)));

    let levels = convergence_study(p, c, grid, &[n / 4, n / 2, n])?;
    for level in &levels[1..] {
        let name = format!("pde.crank_nicolson.order_at_n={}", level.n);
        checks.push(Check::new(name, level.observed_order.unwrap_or(f64::NAN), Some(1.8), Some(2.2)));
    }
    Ok(checks)
}

/// Signed `mean / SE`; 0 for an exactly vanishing difference.
fn signed_z(e: &McEstimate) -> f64 {
    if e.mean == 0.0 {
        0.0
    } else {
        e.mean / e.std_error
    }
}

fn mc_checks(solution: &HestonSolution, cfg: &McConfig) -> Result<Vec<Check>, CliError> {
    let (p, u) = (&solution.params, &solution.utility);
    let mut checks = Vec::new();
    for s in MC_BOND_VARIANCES {
        let bond = bond_check(p, u, s * p.theta, MC_HORIZON, cfg)?;
        checks.push(Check::new(format!("mc.bond.z_score_at_v/theta={s}"), bond.z_score, None, Some(3.0)));
    }
    let point = EvaluationPoint {
        w: 1.0,
        x: 1.0,
        v: p.theta,
        t: 0.0,
        horizon: MC_HORIZON,
    };
    let util = utility_check(&point, u, p, cfg, &MC_SCALINGS)?;
    checks.push(Check::new("mc.utility.optimal_z_score", util.optimal_z_score(), None, Some(3.0)));
    for r in &util.results {
        let z = signed_z(&r.diff_vs_optimal);
        checks.push(Check::new(format!("mc.utility.advantage_z_of_scaling={}", r.scaling), z, None, Some(3.0)));
        if p.rho == 0.0 {
            checks.push(Check::new(
                format!("mc.utility.abs_z_of_scaling={}_at_zero_correlation", r.scaling),
                z.abs(),
                None,
                Some(3.0),
            ));
        }
    }
    Ok(checks)
}
