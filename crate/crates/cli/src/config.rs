//! Run configuration: one JSON file with `model`, `utility`, `grid` and `mc`
//! sections, the latter two optional and field-wise overridable by flags.

use std::path::Path;

use hestonopt::model::{self, HestonParams, Utility};
use hestonopt::verify_mc::{McConfig, Scheme};
use hestonopt::verify_pde::{GridSpec, Stretching};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Default ensemble size of `verify --which mc`.
pub const DEFAULT_PATHS: usize = 100_000;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub v_min: Option<f64>,
    pub v_max: Option<f64>,
    pub n_v: Option<usize>,
    pub tau_max: Option<f64>,
    pub n_tau: Option<usize>,
    pub stretching: Option<Stretching>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub n_paths: Option<usize>,
    pub n_steps: Option<usize>,
    pub seed: Option<u64>,
    pub scheme: Option<Scheme>,
    pub antithetic: Option<bool>,
}

/// The configuration file as written by the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: HestonParams,
    pub utility: Utility,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub mc: McSection,
}

/// Configuration after defaults and flag overrides; this is what manifests record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedConfig {
    pub model: HestonParams,
    pub utility: Utility,
    pub grid: GridSpec,
    /// Present only when the command runs Monte Carlo.
    pub mc: Option<McConfig>,
}

impl GridSection {
    /// Fields set in `over` win.
    pub fn overlay(&self, over: &GridSection) -> GridSection {
        GridSection {
            v_min: over.v_min.or(self.v_min),
            v_max: over.v_max.or(self.v_max),
            n_v: over.n_v.or(self.n_v),
            tau_max: over.tau_max.or(self.tau_max),
            n_tau: over.n_tau.or(self.n_tau),
            stretching: over.stretching.or(self.stretching),
        }
    }

    pub fn resolve(&self, params: &HestonParams) -> GridSpec {
        let d = GridSpec::default_for(params);
        GridSpec {
            v_min: self.v_min.unwrap_or(d.v_min),
            v_max: self.v_max.unwrap_or(d.v_max),
            n_v: self.n_v.unwrap_or(d.n_v),
            tau_max: self.tau_max.unwrap_or(d.tau_max),
            n_tau: self.n_tau.unwrap_or(d.n_tau),
            stretching: self.stretching.unwrap_or(d.stretching),
        }
    }
}

impl McSection {
    pub fn overlay(&self, over: &McSection) -> McSection {
        McSection {
            n_paths: over.n_paths.or(self.n_paths),
            n_steps: over.n_steps.or(self.n_steps),
            seed: over.seed.or(self.seed),
            scheme: over.scheme.or(self.scheme),
            antithetic: over.antithetic.or(self.antithetic),
        }
    }

    /// `n_steps` defaults to 512 per unit of `horizon`; the seed has no default.
    pub fn resolve(&self, horizon: f64) -> Result<McConfig, CliError> {
        let seed = self.seed.ok_or_else(|| {
            CliError::Validation("Monte Carlo runs need an explicit seed (mc.seed in the config or --seed)".into())
        })?;
        let cfg = McConfig {
            n_paths: self.n_paths.unwrap_or(DEFAULT_PATHS),
            n_steps: self.n_steps.unwrap_or_else(|| McConfig::default_steps(horizon)),
            seed,
            scheme: self.scheme.unwrap_or(Scheme::FullTruncationEuler),
            antithetic: self.antithetic.unwrap_or(true),
        };
        cfg.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(cfg)
    }
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let config: ConfigFile = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Validation(format!("cannot parse config {}: {e}", path.display())))?;
        Ok((config, bytes))
    }
}

impl ResolvedConfig {
    /// Model/utility validation with the full violation list.
    pub fn validate(&self) -> Result<(), CliError> {
        model::validate(&self.model, &self.utility).map_err(|v| CliError::Validation(v.to_string()))?;
        self.grid.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        if let Some(mc) = &self.mc {
            mc.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        }
        Ok(())
    }
}
