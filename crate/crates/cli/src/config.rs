//! Run configuration: one TOML file with a section per pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use phasesteer::datamodel::MapKind;
use phasesteer::objective::{LossWeights, OptimizerConfig};
use phasesteer::oscillation::PairFilterConfig;
use phasesteer::representation::SaeTrainConfig;
use phasesteer::steering::DEFAULT_K_BASIS;
use phasesteer::synthgen::SynthConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteeringConfig {
    /// Spatial modes kept per paired feature.
    pub r: usize,
    /// Cosine dictionary size.
    pub k_basis: usize,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        Self {
            r: 8,
            k_basis: DEFAULT_K_BASIS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PcaConfig {
    /// Number of components; all of them when absent.
    pub components: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub p_values: Vec<usize>,
    pub lambda_mag: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            p_values: vec![4, 5, 6, 7, 8],
            lambda_mag: vec![1e-4, 1e-3, 5e-3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_dir: PathBuf,
    pub model_dir: PathBuf,
    pub run_dir: PathBuf,
    pub representation: MapKind,
    /// Seeds the generator, SAE training and optimizer.
    pub seed: u64,
    /// Target shift in frames; the dataset's own shift when absent.
    pub l_target: Option<i64>,
    pub synthgen: SynthConfig,
    pub sae: SaeTrainConfig,
    pub pca: PcaConfig,
    pub oscillation: PairFilterConfig,
    pub steering: SteeringConfig,
    pub objective: LossWeights,
    pub optimizer: OptimizerConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset_dir: "dataset".into(),
            model_dir: "models".into(),
            run_dir: "run".into(),
            representation: MapKind::Sae,
            seed: 0,
            l_target: None,
            synthgen: SynthConfig::default(),
            sae: SaeTrainConfig::default(),
            pca: PcaConfig::default(),
            oscillation: PairFilterConfig::default(),
            steering: SteeringConfig::default(),
            objective: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub run_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl RunConfig {
    /// Read `path` (defaults when `None`), resolve relative paths against the
    /// file's directory, apply overrides and validate.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| {
                    if e.kind() == std::io::ErrorKind::NotFound {
                        CliError::config(format!("config file {} does not exist", p.display()))
                    } else {
                        CliError::io(format!("reading {}: {e}", p.display()))
                    }
                })?;
                let mut cfg: RunConfig =
                    toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
                let base = p.parent().unwrap_or(Path::new(""));
                for dir in [&mut cfg.dataset_dir, &mut cfg.model_dir, &mut cfg.run_dir] {
                    if dir.is_relative() {
                        *dir = base.join(&*dir);
                    }
                }
                cfg
            }
            None => RunConfig::default(),
        };
        if let Some(dir) = &overrides.run_dir {
            cfg.run_dir = dir.clone();
        }
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        cfg.synthgen.seed = cfg.seed;
        cfg.sae.seed = cfg.seed;
        cfg.optimizer.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.synthgen.validate()?;
        self.oscillation.validate()?;
        self.objective.validate()?;
        self.optimizer.validate()?;
        let s = &self.steering;
        if s.r == 0 || s.k_basis == 0 {
            return Err(CliError::config("steering.r and steering.k_basis must be >= 1"));
        }
        if !(self.sae.val_fraction > 0.0 && self.sae.val_fraction < 1.0) {
            return Err(CliError::config("sae.val_fraction must lie in (0, 1)"));
        }
        if self.pca.components == Some(0) {
            return Err(CliError::config("pca.components must be >= 1"));
        }
        if self.sweep.p_values.is_empty() || self.sweep.p_values.contains(&0) {
            return Err(CliError::config("sweep.p_values must be a non-empty list of counts >= 1"));
        }
        if self.sweep.lambda_mag.is_empty() || self.sweep.lambda_mag.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(CliError::config("sweep.lambda_mag must be a non-empty list of values >= 0"));
        }
        Ok(())
    }

    /// Content hash of every setting that affects results. Directory paths
    /// are left out so identical runs in different places share it.
    pub fn fingerprint(&self) -> String {
        let mut content = self.clone();
        content.dataset_dir = PathBuf::new();
        content.model_dir = PathBuf::new();
        content.run_dir = PathBuf::new();
        let json = serde_json::to_string(&content).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: RunConfig = toml::from_str("representation = \"pca\"\n[steering]\nr = 4\n").unwrap();
        assert_eq!(cfg.representation, MapKind::Pca);
        assert_eq!(cfg.steering.r, 4);
        assert_eq!(cfg.steering.k_basis, DEFAULT_K_BASIS);
        assert_eq!(cfg.objective, LossWeights::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("representaton = \"pca\"\n").is_err());
    }

    #[test]
    fn fingerprint_ignores_paths_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.run_dir = "elsewhere".into();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seed = 3;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
