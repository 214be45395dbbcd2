use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<InputDigest>,
    pub seed: Option<u64>,
    pub duration_secs: f64,
    pub outputs: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Collects manifest fields while a command runs.
pub struct Recorder {
    command: String,
    started: Instant,
    pub config: BTreeMap<String, String>,
    inputs: Vec<InputDigest>,
    pub seed: Option<u64>,
    outputs: Vec<String>,
}

impl Recorder {
    pub fn new(command: &str) -> Self {
        Recorder {
            command: command.to_string(),
            started: Instant::now(),
            config: BTreeMap::new(),
            inputs: Vec::new(),
            seed: None,
            outputs: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.to_string(), value.to_string());
    }

    /// Hashes an input; missing files are validation errors.
    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        if !path.exists() {
            return Err(CliError::Validation(format!("{}: no such file or directory", path.display())));
        }
        if path.is_dir() {
            for f in djlab_core::io::split_files(path)? {
                self.input(&f)?;
            }
            return Ok(());
        }
        let sha256 = sha256_file(path)?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn finish(self, path: &Path) -> Result<(), CliError> {
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config,
            inputs: self.inputs,
            seed: self.seed,
            duration_secs: self.started.elapsed().as_secs_f64(),
            outputs: self.outputs,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        djlab_core::io::write_text(path, &(text + "\n"))?;
        Ok(())
    }
}

/// Where the manifest goes: the explicit path, else `djlab_manifest.json`
/// inside `dir`.
pub fn manifest_path(explicit: &Option<PathBuf>, dir: &Path) -> PathBuf {
    explicit.clone().unwrap_or_else(|| dir.join("djlab_manifest.json"))
}
