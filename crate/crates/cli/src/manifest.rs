//! Provenance records written next to every command's outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const TENSOR_FORMAT: &str = "PST1";

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub tensor_format: String,
    pub config_fingerprint: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    /// File path to SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub config: RunConfig,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Every regular file under `root`, sorted, with its hash.
pub fn hash_tree(root: &Path) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.is_file() {
            out.insert(dir.display().to_string(), sha256_file(&dir)?);
            continue;
        }
        let entries = fs::read_dir(&dir).map_err(|e| CliError::io(format!("listing {}: {e}", dir.display())))?;
        for entry in entries {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.display().to_string(), sha256_file(&path)?);
            }
        }
    }
    Ok(out)
}

/// One digest over a set of file hashes, independent of where the files live.
pub fn combined_digest<'a>(parts: impl IntoIterator<Item = &'a str>) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

/// Collects inputs and outputs of one command and writes the record.
pub struct Recorder {
    command: String,
    started: u64,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            started: unix_now(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input_tree(&mut self, root: &Path) -> CliResult<()> {
        self.inputs.extend(hash_tree(root)?);
        Ok(())
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    pub fn finish(self, cfg: &RunConfig, dest: &Path) -> CliResult<()> {
        let mut outputs = BTreeMap::new();
        for p in &self.outputs {
            outputs.extend(hash_tree(p)?);
        }
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            tensor_format: TENSOR_FORMAT.to_string(),
            config_fingerprint: cfg.fingerprint(),
            started_unix: self.started,
            finished_unix: unix_now(),
            inputs: self.inputs,
            outputs,
            config: cfg.clone(),
        };
        crate::layout::write_json(dest, &manifest)
    }
}
