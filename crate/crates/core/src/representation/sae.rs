//! Sparse autoencoder with a pre-centered ReLU encoder and unit-norm decoder
//! rows.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    /// `[d_emb x d_hid]`
    pub w_enc: DMatrix<f64>,
    pub b_enc: DVector<f64>,
    /// `[d_hid x d_emb]`, rows unit norm.
    pub w_dec: DMatrix<f64>,
    pub b_dec: DVector<f64>,
    pub kappa: usize,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaeTrainConfig {
    pub kappa: usize,
    pub lambda: f64,
    pub lr: f64,
    pub batch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Fraction of samples held out for early stopping.
    pub val_fraction: f64,
}

impl Default for SaeTrainConfig {
    fn default() -> Self {
        Self {
            kappa: 8,
            lambda: 3e-4,
            lr: 1e-3,
            batch: 128,
            max_epochs: 40,
            patience: 5,
            seed: 0,
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaeTrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_loss: Vec<f64>,
    pub val_recon: Vec<f64>,
    /// Largest `| ||row|| - 1 |` over decoder rows after any step.
    pub max_row_norm_error: f64,
    /// Validation relative reconstruction error `||h_hat - h|| / ||h - mean||` of the returned model.
    pub val_relative_error: f64,
    /// Fraction of exactly-zero code entries on the validation split.
    pub val_zero_fraction: f64,
}

impl SaeModel {
    pub fn d_emb(&self) -> usize {
        self.w_enc.nrows()
    }

    pub fn d_hid(&self) -> usize {
        self.w_enc.ncols()
    }

    /// Codes for row-major samples `[m x d_emb]`.
    pub fn encode_matrix(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        let mut pre = h * &self.w_enc;
        let shift = self.b_enc.transpose() - self.b_dec.transpose() * &self.w_enc;
        for mut row in pre.row_iter_mut() {
            row += &shift;
            row.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        pre
    }

    pub fn decode_matrix(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = z * &self.w_dec;
        let b = self.b_dec.transpose();
        for mut row in out.row_iter_mut() {
            row += &b;
        }
        out
    }

    /// Encode over the last axis of `h`.
    pub fn encode(&self, h: &Tensor) -> Result<Tensor> {
        let m = rows_of(h, self.d_emb(), "SAE encoder input")?;
        let z = self.encode_matrix(&DMatrix::from_row_slice(m, self.d_emb(), h.data()));
        let mut dims = h.dims().to_vec();
        *dims.last_mut().expect("rank >= 1") = self.d_hid();
        Tensor::new(dims, row_major(&z))
    }

    /// Decode over the last axis of `z`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let m = rows_of(z, self.d_hid(), "SAE decoder input")?;
        let h = self.decode_matrix(&DMatrix::from_row_slice(m, self.d_hid(), z.data()));
        let mut dims = z.dims().to_vec();
        *dims.last_mut().expect("rank >= 1") = self.d_emb();
        Tensor::new(dims, row_major(&h))
    }

    pub fn row_norm_error(&self) -> f64 {
        row_norm_error(&self.w_dec)
    }
}

pub(crate) fn rows_of(t: &Tensor, width: usize, what: &str) -> Result<usize> {
    if t.last_dim() != width {
        return Err(Error::shape(format!(
            "{what} has last dim {}, expected {width}",
            t.last_dim()
        )));
    }
    Ok(t.len() / width)
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn row_norm_error(w: &DMatrix<f64>) -> f64 {
    w.row_iter()
        .map(|r| (r.norm() - 1.0).abs())
        .fold(0.0, f64::max)
}

fn normalize_rows(w: &mut DMatrix<f64>) {
    for mut row in w.row_iter_mut() {
        let n = row.norm();
        if n > 0.0 {
            row /= n;
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// Fixed-order Adam update over several parameter blocks sharing one step count.
fn adam_step(states: &mut [&mut Adam], params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    for ((st, p), g) in states.iter_mut().zip(params.iter_mut()).zip(grads) {
        st.step += 1;
        let c1 = 1.0 - B1.powi(st.step);
        let c2 = 1.0 - B2.powi(st.step);
        for k in 0..p.len() {
            st.m[k] = B1 * st.m[k] + (1.0 - B1) * g[k];
            st.v[k] = B2 * st.v[k] + (1.0 - B2) * g[k] * g[k];
            p[k] -= lr * (st.m[k] / c1) / ((st.v[k] / c2).sqrt() + EPS);
        }
    }
}

fn gather(samples: &[f64], width: usize, idx: &[usize]) -> DMatrix<f64> {
    let mut data = Vec::with_capacity(idx.len() * width);
    for &i in idx {
        data.extend_from_slice(&samples[i * width..(i + 1) * width]);
    }
    DMatrix::from_row_slice(idx.len(), width, &data)
}

/// Reconstruction error summed over samples and coordinates, plus the count
/// of exactly-zero code entries.
fn evaluate(model: &SaeModel, h: &DMatrix<f64>) -> (f64, usize) {
    let z = model.encode_matrix(h);
    let zeros = z.iter().filter(|&&v| v == 0.0).count();
    let rec = model.decode_matrix(&z);
    ((rec - h).norm_squared(), zeros)
}

/// Train on row-major samples `[M x d_emb]`.
pub fn sae_train(samples: &Tensor, cfg: &SaeTrainConfig) -> Result<(SaeModel, SaeTrainReport)> {
    if samples.rank() != 2 {
        return Err(Error::shape("SAE samples must be [M x d_emb]"));
    }
    let (m, d) = (samples.dims()[0], samples.dims()[1]);
    if cfg.kappa == 0 || cfg.batch == 0 || cfg.lr <= 0.0 || cfg.lambda < 0.0 {
        return Err(Error::Config(format!("invalid SAE training config {cfg:?}")));
    }
    if !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
    }
    if m < cfg.batch {
        return Err(Error::invalid(format!(
            "need at least batch = {} samples, got {m}",
            cfg.batch
        )));
    }
    let d_hid = cfg.kappa * d;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    let n_val = if cfg.val_fraction > 0.0 {
        ((m as f64 * cfg.val_fraction).round() as usize).clamp(1, m - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let data = samples.data();
    let val = gather(data, d, if n_val > 0 { val_idx } else { &train_idx });

    let mut mean = DVector::zeros(d);
    for &i in &train_idx {
        for k in 0..d {
            mean[k] += data[i * d + k];
        }
    }
    mean /= train_idx.len() as f64;

    let scale = 1.0 / (d as f64).sqrt();
    let w_enc = DMatrix::from_fn(d, d_hid, |_, _| rng.gen_range(-scale..scale));
    let mut w_dec = DMatrix::from_fn(d_hid, d, |_, _| rng.gen_range(-scale..scale));
    normalize_rows(&mut w_dec);
    let mut model = SaeModel {
        w_enc,
        b_enc: DVector::zeros(d_hid),
        w_dec,
        b_dec: mean,
        kappa: cfg.kappa,
        lambda: cfg.lambda,
    };

    let mut opt = [
        Adam::new(d * d_hid),
        Adam::new(d_hid),
        Adam::new(d_hid * d),
        Adam::new(d),
    ];
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut train_hist = Vec::new();
    let mut val_hist = Vec::new();
    let mut max_norm_err = model.row_norm_error();

    for epoch in 0..cfg.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in train_idx.chunks(cfg.batch) {
            let h = gather(data, d, chunk);
            let bsz = chunk.len() as f64;
            let shift = model.b_enc.transpose() - model.b_dec.transpose() * &model.w_enc;
            let mut pre = &h * &model.w_enc;
            for mut row in pre.row_iter_mut() {
                row += &shift;
            }
            let z = pre.map(|v| v.max(0.0));
            let mut e = &z * &model.w_dec;
            for (mut row, hrow) in e.row_iter_mut().zip(h.row_iter()) {
                row += model.b_dec.transpose() - hrow;
            }
            let loss = e.norm_squared() / bsz + cfg.lambda * z.sum() / bsz;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "SAE loss became non-finite at epoch {epoch} (lr {}, lambda {})",
                    cfg.lr, cfg.lambda
                )));
            }
            epoch_loss += loss * bsz;

            let g_out = e * (2.0 / bsz);
            let g_wdec = z.transpose() * &g_out;
            let g_bdec_out = g_out.row_sum().transpose();
            let mut g_pre = &g_out * model.w_dec.transpose();
            let l1 = cfg.lambda / bsz;
            for (g, p) in g_pre.iter_mut().zip(pre.iter()) {
                *g = if *p > 0.0 { *g + l1 } else { 0.0 };
            }
            let g_benc = g_pre.row_sum().transpose();
            let mut centered = h;
            for mut row in centered.row_iter_mut() {
                row -= model.b_dec.transpose();
            }
            let g_wenc = centered.transpose() * &g_pre;
            let g_bdec = g_bdec_out - &model.w_enc * &g_benc;

            let [a0, a1, a2, a3] = &mut opt;
            adam_step(
                &mut [a0, a1, a2, a3],
                &mut [
                    model.w_enc.as_mut_slice(),
                    model.b_enc.as_mut_slice(),
                    model.w_dec.as_mut_slice(),
                    model.b_dec.as_mut_slice(),
                ],
                &[
                    g_wenc.as_slice(),
                    g_benc.as_slice(),
                    g_wdec.as_slice(),
                    g_bdec.as_slice(),
                ],
                cfg.lr,
            );
            normalize_rows(&mut model.w_dec);
            max_norm_err = max_norm_err.max(model.row_norm_error());
        }
        train_hist.push(epoch_loss / train_idx.len() as f64);
        let (val_err, _) = evaluate(&model, &val);
        let val_err = val_err / val.nrows() as f64;
        if !val_err.is_finite() {
            return Err(Error::Numerical(format!(
                "SAE validation loss became non-finite at epoch {epoch}"
            )));
        }
        val_hist.push(val_err);
        if val_err < best_val {
            best_val = val_err;
            best = model.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    let (err, zeros) = evaluate(&best, &val);
    let mut spread = 0.0;
    let vmean = val.row_mean();
    for row in val.row_iter() {
        spread += (row - &vmean).norm_squared();
    }
    let report = SaeTrainReport {
        epochs_run: train_hist.len(),
        best_epoch,
        train_loss: train_hist,
        val_recon: val_hist,
        max_row_norm_error: max_norm_err,
        val_relative_error: if spread > 0.0 { (err / spread).sqrt() } else { err.sqrt() },
        val_zero_fraction: zeros as f64 / (val.nrows() * d_hid) as f64,
    };
    Ok((best, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> SaeModel {
        SaeModel {
            w_enc: DMatrix::identity(3, 3),
            b_enc: DVector::zeros(3),
            w_dec: DMatrix::identity(3, 3),
            b_dec: DVector::zeros(3),
            kappa: 1,
            lambda: 0.0,
        }
    }

    #[test]
    fn encoder_centering_cancels_input() {
        let mut m = tiny_model();
        m.b_dec = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let h = Tensor::new(vec![1, 3], vec![0.3, -1.0, 2.0]).unwrap();
        assert_eq!(m.encode(&h).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn encoder_clamps_negatives() {
        let h = Tensor::new(vec![1, 3], vec![-1.0, 2.0, 0.5]).unwrap();
        assert_eq!(tiny_model().encode(&h).unwrap().data(), &[0.0, 2.0, 0.5]);
    }

    #[test]
    fn decoder_examples() {
        let mut m = tiny_model();
        m.w_dec = DMatrix::from_row_slice(3, 3, &[0.6, 0.8, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        m.b_dec = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let zero = Tensor::new(vec![1, 3], vec![0.0; 3]).unwrap();
        assert_eq!(m.decode(&zero).unwrap().data(), &[1.0, 2.0, 3.0]);
        let one_hot = Tensor::new(vec![1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(m.decode(&one_hot).unwrap().data(), &[1.6, 2.8, 3.0]);
        assert!(m.decode(&Tensor::new(vec![1, 2], vec![0.0; 2]).unwrap()).is_err());
    }

    #[test]
    fn tiny_sample_pool_rejected() {
        let s = Tensor::new(vec![4, 2], vec![0.5; 8]).unwrap();
        assert!(sae_train(&s, &SaeTrainConfig::default()).is_err());
    }
}
