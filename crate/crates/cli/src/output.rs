//! Atomic artifact writes and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_SCHEMA: &str = "mixdr.manifest/v1";

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    s.into()
}

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Versions {
    pub mixdr: &'static str,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema: &'static str,
    pub command: String,
    /// SHA-256 of the resolved configuration serialized as JSON.
    pub config_hash: String,
    pub config: Value,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<String>,
    pub seed: Option<u64>,
    pub versions: Versions,
    pub wall_time_ms: u128,
}

/// Collects what one command read and wrote.
pub struct Run {
    command: String,
    config: Value,
    seed: Option<u64>,
    inputs: Vec<InputRecord>,
    outputs: Vec<PathBuf>,
    started: Instant,
}

impl Run {
    pub fn new(command: &str, config: Value, seed: Option<u64>) -> Self {
        Run {
            command: command.into(),
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    /// Reads an input file and records its digest.
    pub fn read(&mut self, path: &Path) -> Result<String, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.inputs.push(InputRecord {
            path: path.display().to_string(),
            sha256: sha256_hex(text.as_bytes()),
        });
        Ok(text)
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(path, bytes)?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    /// Writes one manifest next to every output.
    pub fn finish(self) -> Result<(), CliError> {
        let canonical = serde_json::to_vec(&self.config).expect("config serializes");
        let manifest = RunManifest {
            schema: MANIFEST_SCHEMA,
            command: self.command,
            config_hash: sha256_hex(&canonical),
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
            seed: self.seed,
            versions: Versions {
                mixdr: env!("CARGO_PKG_VERSION"),
            },
            wall_time_ms: self.started.elapsed().as_millis(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        for out in &self.outputs {
            write_atomic(&manifest_path(out), text.as_bytes())?;
        }
        Ok(())
    }
}
