//! Synthetic datasets with planted quadrature oscillations.
//!
//! Latent features `(2m, 2m+1)` carry `A cos(w t + psi) g_m(n)` and
//! `A sin(w t + psi) g_m(n)` with a Gaussian footprint `g_m` in the wake
//! window; the remaining latents are slow drifts. Embeddings are a fixed
//! mixing of the latents plus noise, and the linear decoder reads velocity
//! from the planted pairs only, so a rotation by `w L` of every planted pair
//! reproduces the target shifted by `L` frames exactly.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datamodel::{EmbeddingSequence, MeshGeometry, Roi, Tensor, VelocitySequence};
use crate::error::{Error, Result};
use crate::surrogate::FrozenDecoder;

pub const DOMAIN: (f64, f64) = (1.6, 0.41);
pub const OBSTACLE_CENTER: (f64, f64) = (0.2, 0.2);
pub const OBSTACLE_RADIUS: f64 = 0.05;

/// Velocity loading `(u_x, u_y)` of the cosine and sine latent of every pair.
const COS_LOADING: [f64; 2] = [1.0, 0.4];
const SIN_LOADING: [f64; 2] = [-0.3, 1.0];
const FREESTREAM: [f64; 2] = [1.0, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mixing {
    Orthonormal,
    RandomDense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Requested grid size; nodes inside the obstacle are dropped.
    pub nodes: usize,
    pub horizon: usize,
    pub d_emb: usize,
    pub n_pairs_true: usize,
    pub n_distractors: usize,
    /// Radians per frame, one per planted pair.
    pub frequencies: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// RMS of each drift latent over the horizon.
    pub distractor_amplitude: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub mixing: Mixing,
    pub l_target: i64,
    /// Absolute index of the first horizon frame.
    pub t0: i64,
    /// Frames `0..train_frames` form the representation training window.
    pub train_frames: usize,
    pub dt: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let h = 120usize;
        let cycles = |k: f64| 2.0 * PI * k / (h + 1) as f64;
        Self {
            nodes: 400,
            horizon: h,
            d_emb: 32,
            n_pairs_true: 3,
            n_distractors: 10,
            frequencies: vec![cycles(1.0), cycles(1.0), cycles(2.0)],
            amplitudes: vec![3.0, 2.4, 1.8],
            distractor_amplitude: 0.05,
            noise_sigma: 0.0,
            seed: 0,
            mixing: Mixing::RandomDense,
            l_target: 8,
            t0: 140,
            train_frames: 121,
            dt: 0.01,
        }
    }
}

impl SynthConfig {
    pub fn d_true(&self) -> usize {
        2 * self.n_pairs_true + self.n_distractors
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.nodes == 0 || self.horizon < 2 || self.d_emb == 0 {
            return bad("nodes, horizon >= 2 and d_emb must be positive".into());
        }
        if self.d_true() == 0 || self.d_true() > self.d_emb {
            return bad(format!(
                "2 * n_pairs_true + n_distractors = {} must lie in 1..={} (d_emb)",
                self.d_true(),
                self.d_emb
            ));
        }
        if self.frequencies.len() != self.n_pairs_true || self.amplitudes.len() != self.n_pairs_true {
            return bad(format!(
                "need {} frequencies and amplitudes, got {} and {}",
                self.n_pairs_true,
                self.frequencies.len(),
                self.amplitudes.len()
            ));
        }
        if let Some(w) = self.frequencies.iter().find(|&&w| !(w > 0.0 && w < PI)) {
            return bad(format!("frequency {w} outside (0, pi)"));
        }
        if self.amplitudes.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return bad("amplitudes must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be >= 0".into());
        }
        if !(self.distractor_amplitude >= 0.0 && self.distractor_amplitude.is_finite()) {
            return bad("distractor_amplitude must be >= 0".into());
        }
        if self.train_frames < 1 {
            return bad("train_frames must be >= 1".into());
        }
        check_shift(self.l_target, self.horizon)
    }
}

fn check_shift(l: i64, horizon: usize) -> Result<()> {
    if 2 * l.unsigned_abs() >= horizon as u64 {
        return Err(Error::invalid(format!(
            "|L_target| = {} must be below H/2 = {}",
            l.abs(),
            horizon as f64 / 2.0
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruePair {
    pub i: usize,
    pub j: usize,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq)]
/// Quadratic trend plus cosines with periods far longer than the horizon.
/// The trend's time axis is normalized over every frame the generator can
/// touch, so training and horizon windows see drifts of similar size.
struct Drift {
    poly: [f64; 3],
    waves: Vec<(f64, f64, f64)>,
    scale: f64,
    center: f64,
    half: f64,
}

impl Drift {
    fn raw(&self, t: f64) -> f64 {
        let tau = (t - self.center) / self.half;
        let p = self.poly[0] + self.poly[1] * tau + self.poly[2] * tau * tau;
        p + self.waves.iter().map(|(a, nu, ph)| a * (nu * t + ph).cos()).sum::<f64>()
    }
}

/// Analytic latent process, evaluable at any absolute frame.
#[derive(Debug, Clone, PartialEq)]
struct LatentModel {
    phases: Vec<f64>,
    /// `[N x D_true]` spatial footprints.
    footprints: Vec<f64>,
    drifts: Vec<Drift>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub config: SynthConfig,
    pub embeddings: EmbeddingSequence,
    /// Embeddings over the training window, for fitting representation maps.
    pub train_embeddings: EmbeddingSequence,
    pub decoder: FrozenDecoder,
    pub geometry: MeshGeometry,
    pub true_pairs: Vec<TruePair>,
    pub true_latents: Tensor,
    /// Row-major `[D_true x d_emb]`.
    pub mixing: Vec<f64>,
    /// Row-major `[D_true x 2]`: velocity read from each latent.
    pub latent_loadings: Vec<f64>,
    model: LatentModel,
}

/// Cell-centered grid over the domain, minus the obstacle disk.
pub fn grid_geometry(requested: usize) -> Result<MeshGeometry> {
    let nx = (requested as f64).sqrt().ceil() as usize;
    let ny = requested.div_ceil(nx);
    let mut pts = Vec::with_capacity(2 * requested);
    for k in 0..requested {
        let (ix, iy) = (k % nx, k / nx);
        let x = (ix as f64 + 0.5) * DOMAIN.0 / nx as f64;
        let y = (iy as f64 + 0.5) * DOMAIN.1 / ny as f64;
        let (dx, dy) = (x - OBSTACLE_CENTER.0, y - OBSTACLE_CENTER.1);
        if dx.hypot(dy) <= OBSTACLE_RADIUS {
            continue;
        }
        pts.extend([x, y]);
    }
    if pts.is_empty() {
        return Err(Error::Config("grid has no nodes outside the obstacle".into()));
    }
    MeshGeometry::new(
        Tensor::new(vec![pts.len() / 2, 2], pts)?,
        Roi::WAKE,
        OBSTACLE_CENTER,
        OBSTACLE_RADIUS,
    )
}

fn gaussian(p: (f64, f64), c: (f64, f64), s: (f64, f64)) -> f64 {
    let (dx, dy) = ((p.0 - c.0) / s.0, (p.1 - c.1) / s.1);
    (-0.5 * (dx * dx + dy * dy)).exp()
}

fn mixing_matrix(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<DMatrix<f64>> {
    let (k, d) = (cfg.d_true(), cfg.d_emb);
    let gauss = DMatrix::from_fn(k, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut m = match cfg.mixing {
        Mixing::RandomDense => gauss,
        Mixing::Orthonormal => {
            // orthonormal rows from the QR factor of the transpose
            let q = gauss.transpose().qr().q();
            q.columns(0, k).transpose()
        }
    };
    for mut row in m.row_iter_mut() {
        let n = row.norm();
        if n == 0.0 {
            return Err(Error::Numerical("degenerate mixing row".into()));
        }
        row /= n;
    }
    if cfg.mixing == Mixing::RandomDense {
        for c in 0..d {
            let nonzero = m.column(c).iter().filter(|v| **v != 0.0).count();
            if (nonzero as f64) < 0.8 * k as f64 {
                return Err(Error::Numerical(format!(
                    "embedding coordinate {c} loads on only {nonzero}/{k} latents"
                )));
            }
        }
    }
    Ok(m)
}

impl LatentModel {
    fn build(cfg: &SynthConfig, geom: &MeshGeometry, rng: &mut ChaCha8Rng) -> Self {
        let p = cfg.n_pairs_true;
        let d_true = cfg.d_true();
        let phases: Vec<f64> = (0..p).map(|_| rng.gen_range(-PI..PI)).collect();
        let roi = Roi::WAKE;
        let sigma = (0.1 * DOMAIN.0, 0.1 * DOMAIN.1);
        let y_mid = 0.5 * (roi.y_min + roi.y_max);
        let y_off = 0.2 * (roi.y_max - roi.y_min);
        let mut centers = Vec::new();
        for m in 0..p {
            let x = roi.x_min + (m as f64 + 0.5) * (roi.x_max - roi.x_min) / p as f64;
            let y = if m % 2 == 0 { y_mid - y_off } else { y_mid + y_off };
            centers.push((x, y));
        }
        // weaker pairs spread wider so every pair has the same node-averaged
        // amplitude while carrying a distinct share of the energy
        let a_ref = cfg.amplitudes.iter().copied().fold(0.0, f64::max);
        let widths: Vec<(f64, f64)> = cfg
            .amplitudes
            .iter()
            .map(|a| {
                let s = if *a > 0.0 { (a_ref / a).sqrt() } else { 1.0 };
                (sigma.0 * s, sigma.1 * s)
            })
            .collect();
        let mut broad = Vec::new();
        for _ in 0..cfg.n_distractors {
            let c = (rng.gen_range(0.0..DOMAIN.0), rng.gen_range(0.0..DOMAIN.1));
            broad.push(c);
        }
        let n = geom.nodes();
        let mut footprints = vec![0.0; n * d_true];
        for node in 0..n {
            let pos = geom.position(node);
            for m in 0..p {
                let g = gaussian(pos, centers[m], widths[m]);
                footprints[node * d_true + 2 * m] = g;
                footprints[node * d_true + 2 * m + 1] = g;
            }
            for (q, &c) in broad.iter().enumerate() {
                footprints[node * d_true + 2 * p + q] = gaussian(pos, c, (0.3, 0.15));
            }
        }
        let w_min = cfg.frequencies.iter().copied().fold(f64::INFINITY, f64::min);
        let w_min = if w_min.is_finite() { w_min } else { 2.0 * PI / cfg.horizon as f64 };
        // frames 0 ..= t0 + H + H/2 cover training, horizon and any shift
        let last = (cfg.t0 + cfg.horizon as i64 + cfg.horizon as i64 / 2).max(1) as f64;
        let (center, half) = (last / 2.0, last / 2.0);
        let mut drifts = Vec::new();
        for _ in 0..cfg.n_distractors {
            let poly = [
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            ];
            // band-limited component far below the slowest planted frequency
            let waves = (0..3)
                .map(|_| {
                    (
                        rng.sample::<f64, _>(StandardNormal),
                        rng.gen_range(0.05..0.3) * w_min,
                        rng.gen_range(-PI..PI),
                    )
                })
                .collect();
            let mut d = Drift {
                poly,
                waves,
                scale: 1.0,
                center,
                half,
            };
            let frames = cfg.horizon + 1;
            let rms = ((0..frames)
                .map(|k| d.raw(cfg.t0 as f64 + k as f64).powi(2))
                .sum::<f64>()
                / frames as f64)
                .sqrt();
            d.scale = if rms > 0.0 { cfg.distractor_amplitude / rms } else { 0.0 };
            drifts.push(d);
        }
        Self {
            phases,
            footprints,
            drifts,
        }
    }

    /// Temporal factor of every latent at absolute frame `t`.
    fn temporal(&self, cfg: &SynthConfig, t: i64) -> Vec<f64> {
        let t = t as f64;
        let mut out = Vec::with_capacity(cfg.d_true());
        for m in 0..cfg.n_pairs_true {
            let arg = cfg.frequencies[m] * t + self.phases[m];
            out.push(cfg.amplitudes[m] * arg.cos());
            out.push(cfg.amplitudes[m] * arg.sin());
        }
        for d in &self.drifts {
            out.push(d.scale * d.raw(t));
        }
        out
    }

    /// Latents `[N x D_true]` at absolute frame `t`.
    fn frame(&self, cfg: &SynthConfig, t: i64) -> Vec<f64> {
        let temporal = self.temporal(cfg, t);
        self.footprints
            .chunks_exact(temporal.len())
            .flat_map(|fp| fp.iter().zip(&temporal).map(|(g, c)| g * c))
            .collect()
    }
}

/// Independent Gaussian noise stream for one absolute frame.
fn frame_noise(seed: u64, t: i64, len: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; len];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((t as u64) ^ (1u64 << 63));
    (0..len).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
}

impl SynthDataset {
    pub fn d_true(&self) -> usize {
        self.config.d_true()
    }

    /// Latents over absolute frames `start..start + frames`, `[frames x N x D_true]`.
    pub fn latents(&self, start: i64, frames: usize) -> Result<Tensor> {
        let n = self.geometry.nodes();
        let mut data = Vec::with_capacity(frames * n * self.d_true());
        for k in 0..frames {
            data.extend(self.model.frame(&self.config, start + k as i64));
        }
        Tensor::new(vec![frames, n, self.d_true()], data)
    }

    /// Mixed, noisy embeddings over absolute frames `start..start + frames`.
    pub fn embeddings_at(&self, start: i64, frames: usize) -> Result<Tensor> {
        let (n, k, d) = (self.geometry.nodes(), self.d_true(), self.config.d_emb);
        let mix = DMatrix::from_row_slice(k, d, &self.mixing);
        let mut data = Vec::with_capacity(frames * n * d);
        for f in 0..frames {
            let t = start + f as i64;
            let z = DMatrix::from_row_slice(n, k, &self.model.frame(&self.config, t));
            let e = z * &mix;
            let noise = frame_noise(self.config.seed, t, n * d, self.config.noise_sigma);
            let rows = e.transpose();
            data.extend(rows.as_slice().iter().zip(&noise).map(|(a, b)| a + b));
        }
        Tensor::new(vec![frames, n, d], data)
    }

    /// Embeddings with the true latents as features and a decoder reading
    /// velocity straight from them.
    pub fn latent_view(&self) -> Result<(EmbeddingSequence, FrozenDecoder)> {
        let c = &self.config;
        let emb = EmbeddingSequence::new(self.latents(c.t0, c.horizon + 1)?, c.t0, c.dt)?;
        let dec = FrozenDecoder::linear(self.latent_loadings.clone(), FREESTREAM.to_vec(), self.d_true(), 2)?;
        Ok((emb, dec))
    }

    /// Latent indices of the cosine and sine member of planted pair `m`.
    pub fn pair_latent(&self, m: usize) -> (usize, usize) {
        (2 * m, 2 * m + 1)
    }
}

/// Build a dataset from a validated config.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let geometry = grid_geometry(cfg.nodes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mix = mixing_matrix(cfg, &mut rng)?;
    let model = LatentModel::build(cfg, &geometry, &mut rng);
    let k = cfg.d_true();

    let mut loadings = vec![0.0; k * 2];
    for m in 0..cfg.n_pairs_true {
        loadings[(2 * m) * 2..(2 * m) * 2 + 2].copy_from_slice(&COS_LOADING);
        loadings[(2 * m + 1) * 2..(2 * m + 1) * 2 + 2].copy_from_slice(&SIN_LOADING);
    }
    // decoder(h) = h M^+ L + b, so decoder(z M) = z L + b
    let pinv = mix
        .clone()
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Numerical(format!("mixing pseudo-inverse failed: {e}")))?;
    let l = DMatrix::from_row_slice(k, 2, &loadings);
    let a_dec = pinv * l;
    let decoder = FrozenDecoder::linear(
        a_dec.transpose().as_slice().to_vec(),
        FREESTREAM.to_vec(),
        cfg.d_emb,
        2,
    )?;
    let true_pairs = (0..cfg.n_pairs_true)
        .map(|m| TruePair {
            i: 2 * m,
            j: 2 * m + 1,
            omega: cfg.frequencies[m],
        })
        .collect();
    let mut ds = SynthDataset {
        config: cfg.clone(),
        embeddings: EmbeddingSequence::new(Tensor::zeros(vec![3, 1, 1])?, 0, 1.0)?,
        train_embeddings: EmbeddingSequence::new(Tensor::zeros(vec![3, 1, 1])?, 0, 1.0)?,
        decoder,
        geometry,
        true_pairs,
        true_latents: Tensor::zeros(vec![1])?,
        mixing: mix.transpose().as_slice().to_vec(),
        latent_loadings: loadings,
        model,
    };
    let frames = cfg.horizon + 1;
    ds.true_latents = ds.latents(cfg.t0, frames)?;
    ds.embeddings = EmbeddingSequence::new(ds.embeddings_at(cfg.t0, frames)?, cfg.t0, cfg.dt)?;
    let train_frames = cfg.train_frames.max(3);
    ds.train_embeddings = EmbeddingSequence::new(ds.embeddings_at(0, train_frames)?, 0, cfg.dt)?;
    Ok(ds)
}

/// Decode of the embeddings at `t + L` for every horizon frame `t`.
pub fn shifted_target(ds: &SynthDataset, l_target: i64) -> Result<VelocitySequence> {
    check_shift(l_target, ds.config.horizon)?;
    let c = &ds.config;
    let emb = ds.embeddings_at(c.t0 + l_target, c.horizon + 1)?;
    ds.decoder.decode_values(&emb)
}

/// Target for the latent view: the latent decoder applied at `t + L`.
pub fn shifted_latent_target(ds: &SynthDataset, l_target: i64) -> Result<VelocitySequence> {
    check_shift(l_target, ds.config.horizon)?;
    let c = &ds.config;
    let (_, dec) = ds.latent_view()?;
    dec.decode_values(&ds.latents(c.t0 + l_target, c.horizon + 1)?)
}
