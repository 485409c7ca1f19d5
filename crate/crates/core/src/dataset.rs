//! Dataset directories: embeddings, decoder, geometry and target on disk.
//!
//! Layout:
//!
//! ```text
//! dataset.json          frame metadata and target shift
//! embeddings.pst        [(H+1) x N x d_emb] steering horizon
//! train_embeddings.pst  [T x N x d_emb] window for fitting representation maps
//! target.pst            [(H+1) x N x d] target velocities
//! positions.pst         [N x 2] node coordinates
//! decoder/decoder.json  frozen decoder manifest and layer files
//! ground_truth.json     planted pairs (synthetic datasets only)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamodel::{read_tensor, write_tensor, EmbeddingSequence, MeshGeometry, Roi, VelocitySequence};
use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_json};
use crate::surrogate::FrozenDecoder;
use crate::synthgen::{shifted_target, SynthConfig, SynthDataset, TruePair};

pub const DATASET_MANIFEST: &str = "dataset.json";
pub const GROUND_TRUTH: &str = "ground_truth.json";
pub const EMBEDDINGS: &str = "embeddings.pst";
pub const TRAIN_EMBEDDINGS: &str = "train_embeddings.pst";
pub const TARGET: &str = "target.pst";
pub const POSITIONS: &str = "positions.pst";
pub const DECODER_DIR: &str = "decoder";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub t0: i64,
    pub train_t0: i64,
    pub dt: f64,
    pub l_target: i64,
    pub roi: Roi,
    pub obstacle_center: (f64, f64),
    pub obstacle_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub true_pairs: Vec<TruePair>,
    pub l_target: i64,
    /// Phase advance `w L` of every planted pair.
    pub phase_shifts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub embeddings: EmbeddingSequence,
    pub train_embeddings: EmbeddingSequence,
    pub target: VelocitySequence,
    pub decoder: FrozenDecoder,
    pub geometry: MeshGeometry,
    pub l_target: i64,
    pub ground_truth: Option<GroundTruth>,
}

impl Dataset {
    /// Package a synthetic dataset with its target at the configured shift.
    pub fn from_synth(ds: &SynthDataset) -> Result<Self> {
        let l = ds.config.l_target;
        Ok(Self {
            embeddings: ds.embeddings.clone(),
            train_embeddings: ds.train_embeddings.clone(),
            target: shifted_target(ds, l)?,
            decoder: ds.decoder.clone(),
            geometry: ds.geometry.clone(),
            l_target: l,
            ground_truth: Some(GroundTruth {
                config: ds.config.clone(),
                true_pairs: ds.true_pairs.clone(),
                l_target: l,
                phase_shifts: ds.true_pairs.iter().map(|p| p.omega * l as f64).collect(),
            }),
        })
    }

    fn check(&self) -> Result<()> {
        let e = &self.embeddings;
        if self.train_embeddings.width() != e.width() || self.train_embeddings.nodes() != e.nodes() {
            return Err(Error::shape("training and horizon embeddings differ in nodes or width"));
        }
        if self.target.frames() != e.frames() || self.target.nodes() != e.nodes() {
            return Err(Error::shape("target does not cover the horizon frames and nodes"));
        }
        if self.geometry.nodes() != e.nodes() {
            return Err(Error::shape("geometry node count differs from embeddings"));
        }
        if self.decoder.d_emb() != e.width() || self.decoder.d_out() != self.target.dim() {
            return Err(Error::shape("decoder widths do not match embeddings and target"));
        }
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.check()?;
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_tensor(dir.join(EMBEDDINGS), self.embeddings.values())?;
        write_tensor(dir.join(TRAIN_EMBEDDINGS), self.train_embeddings.values())?;
        write_tensor(dir.join(TARGET), self.target.values())?;
        write_tensor(dir.join(POSITIONS), self.geometry.positions())?;
        self.decoder.save(dir.join(DECODER_DIR))?;
        let manifest = DatasetManifest {
            t0: self.embeddings.t0,
            train_t0: self.train_embeddings.t0,
            dt: self.embeddings.dt,
            l_target: self.l_target,
            roi: self.geometry.roi,
            obstacle_center: self.geometry.obstacle_center,
            obstacle_radius: self.geometry.obstacle_radius,
        };
        write_json(dir.join(DATASET_MANIFEST), &manifest)?;
        if let Some(gt) = &self.ground_truth {
            write_json(dir.join(GROUND_TRUTH), gt)?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let m: DatasetManifest = read_json(dir.join(DATASET_MANIFEST))?;
        let gt_path = dir.join(GROUND_TRUTH);
        let ground_truth = if gt_path.exists() {
            Some(read_json(gt_path)?)
        } else {
            None
        };
        let ds = Self {
            embeddings: EmbeddingSequence::new(read_tensor(dir.join(EMBEDDINGS))?, m.t0, m.dt)?,
            train_embeddings: EmbeddingSequence::new(read_tensor(dir.join(TRAIN_EMBEDDINGS))?, m.train_t0, m.dt)?,
            target: VelocitySequence::new(read_tensor(dir.join(TARGET))?)?,
            decoder: FrozenDecoder::load(dir.join(DECODER_DIR))?,
            geometry: MeshGeometry::new(read_tensor(dir.join(POSITIONS))?, m.roi, m.obstacle_center, m.obstacle_radius)?,
            l_target: m.l_target,
            ground_truth,
        };
        ds.check()?;
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::generate;

    #[test]
    fn round_trip() {
        let cfg = SynthConfig {
            nodes: 49,
            d_emb: 16,
            n_distractors: 4,
            noise_sigma: 0.05,
            ..Default::default()
        };
        let ds = Dataset::from_synth(&generate(&cfg).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), ds);
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        match Dataset::load(dir.path()) {
            Err(Error::Missing(p)) => assert!(p.ends_with(DATASET_MANIFEST)),
            other => panic!("{other:?}"),
        }
    }
}
