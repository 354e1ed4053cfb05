//! Command-line front end for the `hestonopt` solver: point evaluation,
//! surface sweeps to CSV, the verification suites, and manifest reruns.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hestonopt::model::ModelError;
use hestonopt::policy::PolicyError;
use hestonopt::verify_mc::{McError, Scheme};
use hestonopt::verify_pde::{PdeError, Stretching};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{GridSection, McSection};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{0}")]
    ChecksFailed(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// 2 for rejected input, 3 for numerical failure, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::ChecksFailed(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Model(m) => m.into(),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<PdeError> for CliError {
    fn from(e: PdeError) -> Self {
        match e {
            PdeError::Grid(_) | PdeError::Domain(_) => CliError::Validation(e.to_string()),
            PdeError::Policy(p) => p.into(),
            PdeError::Io(m) => CliError::Io(m),
            PdeError::Instability { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<McError> for CliError {
    fn from(e: McError) -> Self {
        match e {
            McError::Config(_) | McError::Degenerate(_) => CliError::Validation(e.to_string()),
            McError::Model(m) => m.into(),
            McError::Policy(p) => p.into(),
            McError::Io(m) => CliError::Io(m),
            McError::TooManyFlagged { .. } | McError::NonFinite { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

/// Closed-form optimal investment under the Heston model.
///
/// Units: rates are per year, `tau`, `t` and `T` are in years, variance is
/// the annualized instantaneous variance.
#[derive(Debug, Parser)]
#[command(name = "hestonopt", version)]
pub struct Cli {
    /// Worker threads for the parallel stages (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Value factor, Bellman value and optimal control at one state.
    #[command(allow_negative_numbers = true)]
    Evaluate(EvaluateArgs),
    /// Closed-form value and control on a (v, tau) grid, written as CSV.
    #[command(allow_negative_numbers = true)]
    Surface(SurfaceArgs),
    /// PDE and/or Monte Carlo verification with a pass/fail JSON report.
    #[command(allow_negative_numbers = true)]
    Verify(VerifyArgs),
    /// Repeat a run recorded in a manifest and check its output digests.
    Rerun(RerunArgs),
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// JSON config with `model` and `utility` sections.
    #[arg(long)]
    pub config: PathBuf,
    /// Wealth.
    #[arg(long)]
    pub w: f64,
    /// Asset price.
    #[arg(long)]
    pub x: f64,
    /// Variance.
    #[arg(long)]
    pub v: f64,
    /// Current time.
    #[arg(long)]
    pub t: f64,
    /// Horizon `T`.
    #[arg(long = "horizon", visible_alias = "T")]
    pub horizon: f64,
    /// Write the JSON here (plus a manifest sidecar) instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct GridArgs {
    #[arg(long)]
    pub v_min: Option<f64>,
    #[arg(long)]
    pub v_max: Option<f64>,
    /// Number of variance nodes.
    #[arg(long)]
    pub n_v: Option<usize>,
    #[arg(long)]
    pub tau_max: Option<f64>,
    /// Number of time steps (`n_tau + 1` time levels).
    #[arg(long)]
    pub n_tau: Option<usize>,
    /// `none` or `geometric`.
    #[arg(long, value_parser = parse_stretching)]
    pub stretching: Option<Stretching>,
}

impl GridArgs {
    pub fn section(&self) -> GridSection {
        GridSection {
            v_min: self.v_min,
            v_max: self.v_max,
            n_v: self.n_v,
            tau_max: self.tau_max,
            n_tau: self.n_tau,
            stretching: self.stretching,
        }
    }
}

#[derive(Debug, Args)]
pub struct SurfaceArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output CSV; the manifest goes to `<out>.manifest.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Wealth used for the control columns.
    #[arg(long, default_value_t = 1.0)]
    pub w: f64,
    /// Asset price used for the control columns.
    #[arg(long, default_value_t = 1.0)]
    pub x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    Pde,
    Mc,
    All,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum, default_value_t = Which::All)]
    pub which: Which,
    /// JSON report; the manifest goes to `<report>.manifest.json`.
    #[arg(long)]
    pub report: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_paths: Option<usize>,
    /// Total time steps per path.
    #[arg(long)]
    pub n_steps: Option<usize>,
    /// `full-truncation-euler` or `exact-cir`.
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<Scheme>,
    #[arg(long)]
    pub antithetic: Option<bool>,
}

impl VerifyArgs {
    pub fn mc_section(&self) -> McSection {
        McSection {
            n_paths: self.n_paths,
            n_steps: self.n_steps,
            seed: self.seed,
            scheme: self.scheme,
            antithetic: self.antithetic,
        }
    }
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write outputs here under their recorded file names instead of the
    /// recorded paths.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

fn parse_stretching(s: &str) -> Result<Stretching, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

/// Runs `cli`, inside a dedicated thread pool when `--threads` is given.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let threads = cli.threads;
    let work = move || match cli.command {
        Command::Evaluate(a) => commands::evaluate(&a, threads),
        Command::Surface(a) => commands::surface(&a, threads),
        Command::Verify(a) => commands::verify(&a, threads),
        Command::Rerun(a) => commands::rerun(&a, threads),
    };
    match threads {
        Some(0) => Err(CliError::Validation("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Io(e.to_string()))?
            .install(work),
        None => work(),
    }
}
