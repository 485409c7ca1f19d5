//! Representation maps `g` from embeddings to steering space and their
//! inverses: sparse autoencoder, PCA rotation and identity.
//!
//! Every inverse is affine, `g^-1(x) = x A + c`, which the steering code uses
//! to push feature edits into embedding space without a full re-decode.

mod pca;
mod sae;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use pca::{pca_fit, PcaModel};
pub use sae::{sae_train, SaeModel, SaeTrainConfig, SaeTrainReport};

use crate::datamodel::{read_tensor, write_tensor, EmbeddingSequence, MapKind, RepresentationTensor, Tensor};
use crate::error::{Error, Result};
use crate::fsutil::{read_json, write_json};
use sae::{row_major, rows_of};

pub const MODEL_MANIFEST: &str = "representation.json";

#[derive(Debug, Clone, PartialEq)]
pub enum RepresentationMap {
    Sae(SaeModel),
    Pca(PcaModel),
    Identity { width: usize },
}

impl RepresentationMap {
    pub fn kind(&self) -> MapKind {
        match self {
            RepresentationMap::Sae(_) => MapKind::Sae,
            RepresentationMap::Pca(_) => MapKind::Pca,
            RepresentationMap::Identity { .. } => MapKind::Identity,
        }
    }

    pub fn d_emb(&self) -> usize {
        match self {
            RepresentationMap::Sae(m) => m.d_emb(),
            RepresentationMap::Pca(m) => m.d_emb(),
            RepresentationMap::Identity { width } => *width,
        }
    }

    /// D, the number of representation features.
    pub fn width(&self) -> usize {
        match self {
            RepresentationMap::Sae(m) => m.d_hid(),
            RepresentationMap::Pca(m) => m.width(),
            RepresentationMap::Identity { width } => *width,
        }
    }

    /// Map row-major rows `[m x d_emb]` to `[m x D]`.
    pub fn encode_rows(&self, h: &[f64]) -> Result<Vec<f64>> {
        let d = self.d_emb();
        if h.len() % d != 0 {
            return Err(Error::shape(format!("{} values are not rows of width {d}", h.len())));
        }
        let m = h.len() / d;
        Ok(match self {
            RepresentationMap::Sae(s) => row_major(&s.encode_matrix(&DMatrix::from_row_slice(m, d, h))),
            RepresentationMap::Pca(p) => row_major(&p.project_matrix(&DMatrix::from_row_slice(m, d, h))),
            RepresentationMap::Identity { .. } => h.to_vec(),
        })
    }

    /// Map row-major rows `[m x D]` back to `[m x d_emb]`.
    pub fn decode_rows(&self, x: &[f64]) -> Result<Vec<f64>> {
        let w = self.width();
        if x.len() % w != 0 {
            return Err(Error::shape(format!("{} values are not rows of width {w}", x.len())));
        }
        let m = x.len() / w;
        Ok(match self {
            RepresentationMap::Sae(s) => row_major(&s.decode_matrix(&DMatrix::from_row_slice(m, w, x))),
            RepresentationMap::Pca(p) => row_major(&p.reconstruct_matrix(&DMatrix::from_row_slice(m, w, x))),
            RepresentationMap::Identity { .. } => x.to_vec(),
        })
    }

    pub fn forward(&self, embs: &EmbeddingSequence) -> Result<RepresentationTensor> {
        let v = embs.values();
        rows_of(v, self.d_emb(), "embedding sequence")?;
        let out = self.encode_rows(v.data())?;
        RepresentationTensor::new(
            Tensor::new(vec![embs.frames(), embs.nodes(), self.width()], out)?,
            self.kind(),
        )
    }

    /// Embedding values `[(H+1) x N x d_emb]` for a representation tensor.
    pub fn inverse_values(&self, x: &RepresentationTensor) -> Result<Tensor> {
        rows_of(x.values(), self.width(), "representation tensor")?;
        let out = self.decode_rows(x.values().data())?;
        Tensor::new(vec![x.frames(), x.nodes(), self.d_emb()], out)
    }

    pub fn inverse(&self, x: &RepresentationTensor, t0: i64, dt: f64) -> Result<EmbeddingSequence> {
        EmbeddingSequence::new(self.inverse_values(x)?, t0, dt)
    }

    /// `(A, c)` with `g^-1(x) = x A + c`; `A` is row-major `[D x d_emb]`.
    pub fn affine_inverse(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            RepresentationMap::Sae(s) => (row_major(&s.w_dec), s.b_dec.as_slice().to_vec()),
            RepresentationMap::Pca(p) => (
                row_major(&p.components.transpose()),
                p.mean.as_slice().to_vec(),
            ),
            RepresentationMap::Identity { width } => {
                let mut a = vec![0.0; width * width];
                for i in 0..*width {
                    a[i * width + i] = 1.0;
                }
                (a, vec![0.0; *width])
            }
        }
    }

    /// Per-feature decoder-side weight: SAE decoder row norm, PCA loading
    /// norm (square root of the component variance), 1 for identity.
    pub fn decoder_strengths(&self) -> Vec<f64> {
        match self {
            RepresentationMap::Sae(s) => s.w_dec.row_iter().map(|r| r.norm()).collect(),
            RepresentationMap::Pca(p) => p.explained_variance.iter().map(|v| v.max(0.0).sqrt()).collect(),
            RepresentationMap::Identity { width } => vec![1.0; *width],
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = Vec::new();
        let mut put = |name: &str, dims: Vec<usize>, data: Vec<f64>| -> Result<()> {
            let file = format!("{name}.pst");
            write_tensor(dir.join(&file), &Tensor::new(dims, data)?)?;
            files.push(file);
            Ok(())
        };
        let (kappa, lambda) = match self {
            RepresentationMap::Sae(s) => {
                put("w_enc", vec![s.d_emb(), s.d_hid()], row_major(&s.w_enc))?;
                put("b_enc", vec![s.d_hid()], s.b_enc.as_slice().to_vec())?;
                put("w_dec", vec![s.d_hid(), s.d_emb()], row_major(&s.w_dec))?;
                put("b_dec", vec![s.d_emb()], s.b_dec.as_slice().to_vec())?;
                (Some(s.kappa), Some(s.lambda))
            }
            RepresentationMap::Pca(p) => {
                put("mean", vec![p.d_emb()], p.mean.as_slice().to_vec())?;
                put("components", vec![p.d_emb(), p.width()], row_major(&p.components))?;
                put(
                    "explained_variance",
                    vec![p.width()],
                    p.explained_variance.as_slice().to_vec(),
                )?;
                (None, None)
            }
            RepresentationMap::Identity { .. } => (None, None),
        };
        let manifest = ModelManifest {
            kind: self.kind(),
            d_emb: self.d_emb(),
            width: self.width(),
            kappa,
            lambda,
            files,
        };
        write_json(dir.join(MODEL_MANIFEST), &manifest)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(MODEL_MANIFEST);
        let man: ModelManifest = read_json(&manifest_path)?;
        let get = |name: &str, dims: &[usize]| -> Result<Tensor> {
            let t = read_tensor(dir.join(format!("{name}.pst")))?;
            if t.dims() != dims {
                return Err(Error::Format {
                    path: dir.join(format!("{name}.pst")),
                    reason: format!("dims {:?}, manifest implies {dims:?}", t.dims()),
                });
            }
            Ok(t)
        };
        let (d, w) = (man.d_emb, man.width);
        Ok(match man.kind {
            MapKind::Sae => {
                let kappa = man.kappa.unwrap_or(w / d.max(1));
                RepresentationMap::Sae(SaeModel {
                    w_enc: DMatrix::from_row_slice(d, w, get("w_enc", &[d, w])?.data()),
                    b_enc: DVector::from_vec(get("b_enc", &[w])?.into_data()),
                    w_dec: DMatrix::from_row_slice(w, d, get("w_dec", &[w, d])?.data()),
                    b_dec: DVector::from_vec(get("b_dec", &[d])?.into_data()),
                    kappa,
                    lambda: man.lambda.unwrap_or(0.0),
                })
            }
            MapKind::Pca => RepresentationMap::Pca(PcaModel {
                mean: DVector::from_vec(get("mean", &[d])?.into_data()),
                components: DMatrix::from_row_slice(d, w, get("components", &[d, w])?.data()),
                explained_variance: DVector::from_vec(get("explained_variance", &[w])?.into_data()),
            }),
            MapKind::Identity => {
                if d != w {
                    return Err(Error::Format {
                        path: manifest_path,
                        reason: format!("identity map with d_emb {d} != width {w}"),
                    });
                }
                RepresentationMap::Identity { width: w }
            }
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    kind: MapKind,
    d_emb: usize,
    width: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    kappa: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    lambda: Option<f64>,
    files: Vec<String>,
}

/// All node-frame vectors of a sequence as samples `[(H+1)N x d_emb]`.
pub fn samples_of(embs: &EmbeddingSequence) -> Result<Tensor> {
    let v = embs.values();
    Tensor::new(vec![embs.frames() * embs.nodes(), embs.width()], v.data().to_vec())
}
