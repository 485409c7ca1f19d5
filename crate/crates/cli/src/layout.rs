//! File names inside the dataset, model and run directories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const SAE_DIR: &str = "sae";
pub const PCA_DIR: &str = "pca";
pub const SAE_REPORT: &str = "train_report.json";
pub const PROVENANCE: &str = "provenance.json";

pub const PAIRS: &str = "pairs.json";
pub const PARAMS: &str = "params.json";
pub const HISTORY: &str = "history.csv";
pub const STEERED: &str = "steered_velocities.pst";
pub const BASELINE_DIR: &str = "baselines";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_TXT: &str = "metrics.txt";
pub const PER_NODE_CSV: &str = "per_node_frac.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";
pub const SWEEP_DIR: &str = "sweep";
pub const PARETO_CSV: &str = "pareto.csv";
pub const SWEEP_BEST: &str = "best.json";
pub const MANIFEST_DIR: &str = "manifests";

pub fn baseline_json(run: &Path, kind: &str) -> PathBuf {
    run.join(BASELINE_DIR).join(format!("{kind}.json"))
}

pub fn baseline_velocities(run: &Path, kind: &str) -> PathBuf {
    run.join(BASELINE_DIR).join(format!("{kind}_velocities.pst"))
}

pub fn manifest_path(run: &Path, command: &str) -> PathBuf {
    run.join(MANIFEST_DIR).join(format!("{command}.json"))
}

/// Error naming `path` and the command that produces it when it is absent.
pub fn require(path: &Path, producer: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing(path.display(), producer))
    }
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}: {e}", dir.display())))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, text).map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, producer: &str) -> CliResult<T> {
    require(path, producer)?;
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(format!("malformed {}: {e}", path.display())))
}
