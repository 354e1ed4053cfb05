//! Run manifests: written next to every output file, enough to repeat the run.

use std::path::{Path, PathBuf};

use hestonopt::model::EvaluationPoint;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ResolvedConfig;
use crate::{CliError, Which};

/// What was run, beyond the resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Invocation {
    Evaluate { point: EvaluationPoint },
    Surface { w: f64, x: f64 },
    Verify { which: Which },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub invocation: Invocation,
    pub resolved_config: ResolvedConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Informational only; outputs do not depend on it.
    pub threads: Option<usize>,
    pub created_utc: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<FileDigest, CliError> {
    let bytes = std::fs::read(path)?;
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
    })
}

/// `<output>.manifest.json`
pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

impl RunManifest {
    pub fn new(
        invocation: Invocation,
        resolved_config: ResolvedConfig,
        inputs: Vec<FileDigest>,
        outputs: Vec<FileDigest>,
        threads: Option<usize>,
    ) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            invocation,
            resolved_config,
            inputs,
            outputs,
            threads,
            created_utc: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("cannot parse manifest {}: {e}", path.display())))
    }

    /// Writes the manifest as the sidecar of its first output.
    pub fn write_sidecar(&self) -> Result<PathBuf, CliError> {
        let first = self
            .outputs
            .first()
            .ok_or_else(|| CliError::Io("manifest without outputs".into()))?;
        let path = sidecar_path(&first.path);
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }
}
