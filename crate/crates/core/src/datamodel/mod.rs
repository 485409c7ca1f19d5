//! Shared tensor and domain types.
//!
//! Sequences are time-major: index order is (frame, node, feature).

mod pst1;
mod tensor;

pub use pst1::{decode, encode, read_tensor, write_tensor, write_tensor_as, DType, MAGIC};
pub use tensor::Tensor;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_rank3(t: &Tensor, what: &str) -> Result<()> {
    if t.rank() != 3 {
        return Err(Error::shape(format!(
            "{what} must be rank 3 (frames x nodes x width), got dims {:?}",
            t.dims()
        )));
    }
    Ok(())
}

/// Frozen node embeddings over a steering horizon, `[(H+1) x N x d_emb]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    values: Tensor,
    /// Absolute index of the first frame.
    pub t0: i64,
    /// Seconds per frame; metadata only.
    pub dt: f64,
}

impl EmbeddingSequence {
    pub fn new(values: Tensor, t0: i64, dt: f64) -> Result<Self> {
        check_rank3(&values, "embedding sequence")?;
        if values.dims()[0] < 3 {
            return Err(Error::shape(format!(
                "horizon needs at least 3 frames (H >= 2), got {}",
                values.dims()[0]
            )));
        }
        Ok(Self { values, t0, dt })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.dims()[0]
    }

    /// H, the horizon length (frames - 1).
    pub fn horizon(&self) -> usize {
        self.frames() - 1
    }

    pub fn nodes(&self) -> usize {
        self.values.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.values.dims()[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Sae,
    Pca,
    Identity,
}

impl std::fmt::Display for MapKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MapKind::Sae => "sae",
            MapKind::Pca => "pca",
            MapKind::Identity => "identity",
        })
    }
}

/// Representation-space activations `[(H+1) x N x D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationTensor {
    values: Tensor,
    map_kind: MapKind,
}

impl RepresentationTensor {
    /// Wrap encoder output. SAE activations must be non-negative.
    pub fn new(values: Tensor, map_kind: MapKind) -> Result<Self> {
        check_rank3(&values, "representation tensor")?;
        if map_kind == MapKind::Sae {
            if let Some(v) = values.data().iter().find(|&&v| v < 0.0) {
                return Err(Error::invalid(format!(
                    "SAE activations must be >= 0, found {v}"
                )));
            }
        }
        Ok(Self { values, map_kind })
    }

    /// Wrap an edited tensor. Edited SAE activations may leave the ReLU range,
    /// so the sign check is skipped.
    pub fn edited(values: Tensor, map_kind: MapKind) -> Result<Self> {
        check_rank3(&values, "representation tensor")?;
        Ok(Self { values, map_kind })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }

    pub fn map_kind(&self) -> MapKind {
        self.map_kind
    }

    pub fn frames(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn nodes(&self) -> usize {
        self.values.dims()[1]
    }

    pub fn features(&self) -> usize {
        self.values.dims()[2]
    }

    /// Space-time matrix of one feature, `[(H+1) x N]` row-major.
    pub fn feature_field(&self, f: usize) -> Result<Vec<f64>> {
        if f >= self.features() {
            return Err(Error::invalid(format!(
                "feature {f} out of range (D = {})",
                self.features()
            )));
        }
        let d = self.features();
        Ok(self.values.data().iter().skip(f).step_by(d).copied().collect())
    }
}

/// Decoded state sequence `[(H+1) x N x d]`; `d = 2` for planar velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocitySequence {
    values: Tensor,
}

impl VelocitySequence {
    pub fn new(values: Tensor) -> Result<Self> {
        check_rank3(&values, "velocity sequence")?;
        Ok(Self { values })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn nodes(&self) -> usize {
        self.values.dims()[1]
    }

    pub fn dim(&self) -> usize {
        self.values.dims()[2]
    }

    /// One velocity component over all frames and nodes, `[(H+1) * N]`.
    pub fn component(&self, c: usize) -> Vec<f64> {
        let d = self.dim();
        self.values.data().iter().skip(c).step_by(d).copied().collect()
    }

    pub fn same_shape(&self, other: &VelocitySequence) -> Result<()> {
        if self.values.dims() != other.values.dims() {
            return Err(Error::shape(format!(
                "velocity sequences differ in shape: {:?} vs {:?}",
                self.values.dims(),
                other.values.dims()
            )));
        }
        Ok(())
    }
}

/// Axis-aligned rectangle, inclusive on every edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Roi {
    /// The downstream wake window.
    pub const WAKE: Roi = Roi {
        x_min: 0.4,
        x_max: 1.4,
        y_min: 0.10,
        y_max: 0.31,
    };

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshGeometry {
    positions: Tensor,
    pub roi: Roi,
    pub obstacle_center: (f64, f64),
    pub obstacle_radius: f64,
}

impl MeshGeometry {
    pub fn new(
        positions: Tensor,
        roi: Roi,
        obstacle_center: (f64, f64),
        obstacle_radius: f64,
    ) -> Result<Self> {
        if positions.rank() != 2 || positions.dims()[1] != 2 {
            return Err(Error::shape(format!(
                "positions must be [N x 2], got {:?}",
                positions.dims()
            )));
        }
        if !(roi.x_min < roi.x_max && roi.y_min < roi.y_max) {
            return Err(Error::invalid(format!("degenerate ROI {roi:?}")));
        }
        let mut pts: Vec<(f64, f64, usize)> = positions
            .data()
            .chunks_exact(2)
            .enumerate()
            .map(|(i, p)| (p[0], p[1], i))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        // duplicates need |dx| <= tol, so only a window in x-sorted order is checked
        const TOL: f64 = 1e-12;
        for a in 0..pts.len() {
            for b in pts.iter().skip(a + 1) {
                if b.0 - pts[a].0 > TOL {
                    break;
                }
                if (b.1 - pts[a].1).abs() <= TOL {
                    return Err(Error::invalid(format!(
                        "nodes {} and {} share a position",
                        pts[a].2, b.2
                    )));
                }
            }
        }
        Ok(Self {
            positions,
            roi,
            obstacle_center,
            obstacle_radius,
        })
    }

    pub fn positions(&self) -> &Tensor {
        &self.positions
    }

    pub fn nodes(&self) -> usize {
        self.positions.dims()[0]
    }

    pub fn position(&self, n: usize) -> (f64, f64) {
        (self.positions.get2(n, 0), self.positions.get2(n, 1))
    }
}

/// Nodes inside the geometry's ROI rectangle (bounds inclusive).
pub fn roi_mask(geom: &MeshGeometry) -> Vec<bool> {
    geom.positions
        .data()
        .chunks_exact(2)
        .map(|p| geom.roi.contains(p[0], p[1]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(points: &[(f64, f64)]) -> MeshGeometry {
        let data = points.iter().flat_map(|&(x, y)| [x, y]).collect();
        MeshGeometry::new(
            Tensor::new(vec![points.len(), 2], data).unwrap(),
            Roi::WAKE,
            (0.2, 0.2),
            0.05,
        )
        .unwrap()
    }

    #[test]
    fn roi_examples() {
        let g = geom(&[(0.9, 0.2), (0.0, 0.0), (0.4, 0.10), (1.4, 0.31), (1.41, 0.2)]);
        assert_eq!(roi_mask(&g), vec![true, false, true, true, false]);
    }

    #[test]
    fn roi_mask_permutes_with_nodes() {
        let pts = [(0.5, 0.2), (0.1, 0.1), (1.2, 0.3), (1.5, 0.2)];
        let m = roi_mask(&geom(&pts));
        let perm = [2, 0, 3, 1];
        let permuted: Vec<_> = perm.iter().map(|&i| pts[i]).collect();
        let mp = roi_mask(&geom(&permuted));
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(mp[k], m[i]);
        }
    }

    #[test]
    fn duplicate_nodes_rejected() {
        let t = Tensor::new(vec![3, 2], vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(MeshGeometry::new(t, Roi::WAKE, (0.0, 0.0), 0.1).is_err());
    }

    #[test]
    fn degenerate_roi_rejected() {
        let t = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let roi = Roi {
            x_min: 1.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0,
        };
        assert!(MeshGeometry::new(t, roi, (0.0, 0.0), 0.1).is_err());
    }

    #[test]
    fn non_finite_tensor_rejected() {
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn sae_tensor_must_be_non_negative() {
        let t = Tensor::new(vec![1, 1, 2], vec![0.5, -0.1]).unwrap();
        assert!(RepresentationTensor::new(t.clone(), MapKind::Sae).is_err());
        assert!(RepresentationTensor::new(t.clone(), MapKind::Pca).is_ok());
        assert!(RepresentationTensor::edited(t, MapKind::Sae).is_ok());
    }

    #[test]
    fn horizon_needs_three_frames() {
        let t = Tensor::zeros(vec![2, 4, 3]).unwrap();
        assert!(EmbeddingSequence::new(t, 0, 1.0).is_err());
    }
}
