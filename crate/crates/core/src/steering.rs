//! Phase offsets, pairwise coefficient rotation and reassembly of the
//! steered representation.
//!
//! Pair `k` gets `dphi_k(t) = a_k t + b_k + (B w_k)_t` over the local frame
//! index `t = 0..H`, where `B` holds unit-norm cosines
//! `cos(2 pi m t / (H+1))`, `m = 1..K`. Every mode of the pair is rotated by
//! the same angle; positive angles advance the leading feature `i`.

use serde::{Deserialize, Serialize};

use crate::datamodel::{RepresentationTensor, Tensor, VelocitySequence};
use crate::error::{Error, Result};
use crate::modes::{decompose, ModeDecomposition};
use crate::representation::RepresentationMap;
use crate::surrogate::FrozenDecoder;

pub const DEFAULT_K_BASIS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct CosineDictionary {
    frames: usize,
    k: usize,
    /// Row-major `[(H+1) x K]`.
    b: Vec<f64>,
}

impl CosineDictionary {
    pub fn new(frames: usize, k: usize) -> Result<Self> {
        if frames < 2 {
            return Err(Error::invalid("dictionary needs at least 2 frames"));
        }
        let mut b = vec![0.0; frames * k];
        for m in 0..k {
            let w = 2.0 * std::f64::consts::PI * (m + 1) as f64 / frames as f64;
            let col: Vec<f64> = (0..frames).map(|t| (w * t as f64).cos()).collect();
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Degenerate(format!("cosine column {m} vanishes")));
            }
            for t in 0..frames {
                b[t * k + m] = col[t] / norm;
            }
        }
        Ok(Self { frames, k, b })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, t: usize, m: usize) -> f64 {
        self.b[t * self.k + m]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairParams {
    pub a: f64,
    pub b: f64,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringParams {
    pub pairs: Vec<PairParams>,
}

impl SteeringParams {
    /// Identity steering for `p` pairs.
    pub fn zeros(p: usize, k: usize) -> Self {
        Self {
            pairs: vec![
                PairParams {
                    a: 0.0,
                    b: 0.0,
                    w: vec![0.0; k],
                };
                p
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Flat layout `[a_0, b_0, w_0..., a_1, ...]`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.pairs
            .iter()
            .flat_map(|p| [p.a, p.b].into_iter().chain(p.w.iter().copied()))
            .collect()
    }

    pub fn from_vec(v: &[f64], p: usize, k: usize) -> Result<Self> {
        if v.len() != p * (k + 2) {
            return Err(Error::shape(format!(
                "{} parameters do not fit {p} pairs with {k} basis weights",
                v.len()
            )));
        }
        Ok(Self {
            pairs: v
                .chunks_exact(k + 2)
                .map(|c| PairParams {
                    a: c[0],
                    b: c[1],
                    w: c[2..].to_vec(),
                })
                .collect(),
        })
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        for (idx, p) in self.pairs.iter().enumerate() {
            if p.w.len() != k {
                return Err(Error::shape(format!(
                    "pair {idx} has {} basis weights, dictionary has {k}",
                    p.w.len()
                )));
            }
            if !p.a.is_finite() || !p.b.is_finite() || p.w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("pair {idx} has non-finite parameters")));
            }
        }
        Ok(())
    }
}

/// `dphi_k(t)` for `t = 0..H`.
pub fn phase_offset(params: &SteeringParams, dict: &CosineDictionary, k: usize) -> Result<Vec<f64>> {
    let p = params
        .pairs
        .get(k)
        .ok_or_else(|| Error::invalid(format!("pair {k} out of range ({})", params.len())))?;
    if p.w.len() != dict.k() {
        return Err(Error::shape("basis weights do not match dictionary width"));
    }
    Ok(pair_offset(p, dict))
}

pub(crate) fn pair_offset(p: &PairParams, dict: &CosineDictionary) -> Vec<f64> {
    (0..dict.frames())
        .map(|t| {
            let basis: f64 = p.w.iter().enumerate().map(|(m, w)| dict.get(t, m) * w).sum();
            p.a * t as f64 + p.b + basis
        })
        .collect()
}

/// Rotate coefficient matrices `[(H+1) x r]` of the two features of a pair.
pub fn rotate_coeffs(ci: &[f64], cj: &[f64], r: usize, dphi: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if ci.len() != cj.len() || ci.len() != dphi.len() * r {
        return Err(Error::shape(format!(
            "coefficients {}/{} do not match {} frames x rank {r}",
            ci.len(),
            cj.len(),
            dphi.len()
        )));
    }
    let mut oi = vec![0.0; ci.len()];
    let mut oj = vec![0.0; cj.len()];
    for (t, &phi) in dphi.iter().enumerate() {
        if phi == 0.0 {
            oi[t * r..(t + 1) * r].copy_from_slice(&ci[t * r..(t + 1) * r]);
            oj[t * r..(t + 1) * r].copy_from_slice(&cj[t * r..(t + 1) * r]);
            continue;
        }
        let (s, c) = phi.sin_cos();
        for k in t * r..(t + 1) * r {
            oi[k] = c * ci[k] - s * cj[k];
            oj[k] = s * ci[k] + c * cj[k];
        }
    }
    Ok((oi, oj))
}

pub fn rotate_pair(
    md_i: &ModeDecomposition,
    md_j: &ModeDecomposition,
    dphi: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if md_i.rank() != md_j.rank() || md_i.frames() != md_j.frames() {
        return Err(Error::shape("pair decompositions differ in rank or horizon"));
    }
    rotate_coeffs(&md_i.coeffs, &md_j.coeffs, md_i.rank(), dphi)
}

/// Mode decompositions of both features of one selected pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairModes {
    pub i: usize,
    pub j: usize,
    pub md_i: ModeDecomposition,
    pub md_j: ModeDecomposition,
}

impl PairModes {
    pub fn build(x: &RepresentationTensor, i: usize, j: usize, r: usize) -> Result<Self> {
        if i == j {
            return Err(Error::invalid("a pair needs two distinct features"));
        }
        Ok(Self {
            i,
            j,
            md_i: decompose(x, i, r)?,
            md_j: decompose(x, j, r)?,
        })
    }

    pub fn rank(&self) -> usize {
        self.md_i.rank()
    }
}

/// Decompose every pair at rank `r`.
pub fn build_pair_modes(x: &RepresentationTensor, pairs: &[(usize, usize)], r: usize) -> Result<Vec<PairModes>> {
    let mut seen = std::collections::BTreeSet::new();
    for &(i, j) in pairs {
        if !seen.insert(i) || !seen.insert(j) {
            return Err(Error::invalid(format!("feature reused across pairs at ({i}, {j})")));
        }
    }
    pairs.iter().map(|&(i, j)| PairModes::build(x, i, j, r)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteeredState {
    pub x_prime: RepresentationTensor,
    pub u_steer: VelocitySequence,
    /// Row-major `[P x (H+1)]`.
    pub phase_trajectories: Vec<f64>,
}

/// `X'` with the paired features replaced by their rotated reconstructions.
pub fn steer_representation(
    x: &RepresentationTensor,
    pairs: &[PairModes],
    params: &SteeringParams,
    dict: &CosineDictionary,
) -> Result<(RepresentationTensor, Vec<f64>)> {
    if params.len() != pairs.len() {
        return Err(Error::shape(format!(
            "{} parameter sets for {} pairs",
            params.len(),
            pairs.len()
        )));
    }
    params.validate(dict.k())?;
    if dict.frames() != x.frames() {
        return Err(Error::shape("dictionary horizon differs from representation"));
    }
    let (frames, nodes, d) = (x.frames(), x.nodes(), x.features());
    let mut data = x.values().data().to_vec();
    let mut traj = Vec::with_capacity(pairs.len() * frames);
    for (pm, p) in pairs.iter().zip(&params.pairs) {
        if pm.i >= d || pm.j >= d {
            return Err(Error::invalid(format!("pair ({}, {}) out of range", pm.i, pm.j)));
        }
        if pm.md_i.frames() != frames || pm.md_i.nodes() != nodes {
            return Err(Error::shape("decomposition does not match representation"));
        }
        let dphi = pair_offset(p, dict);
        let (ci, cj) = rotate_pair(&pm.md_i, &pm.md_j, &dphi)?;
        for (f, md, c) in [(pm.i, &pm.md_i, ci), (pm.j, &pm.md_j, cj)] {
            let field = md.reconstruct(&c)?;
            for (k, v) in field.into_iter().enumerate() {
                data[k * d + f] = v;
            }
        }
        traj.extend(dphi);
    }
    let xp = RepresentationTensor::edited(Tensor::new(vec![frames, nodes, d], data)?, x.map_kind())?;
    Ok((xp, traj))
}

/// Rotate, reassemble, invert the representation map and decode.
pub fn apply_steering(
    x: &RepresentationTensor,
    pairs: &[PairModes],
    params: &SteeringParams,
    dict: &CosineDictionary,
    map: &RepresentationMap,
    decoder: &FrozenDecoder,
) -> Result<SteeredState> {
    let (x_prime, phase_trajectories) = steer_representation(x, pairs, params, dict)?;
    let emb = map.inverse_values(&x_prime)?;
    let u_steer = decoder.decode_values(&emb)?;
    Ok(SteeredState {
        x_prime,
        u_steer,
        phase_trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn dictionary_columns_are_unit_cosines() {
        let d = CosineDictionary::new(121, 6).unwrap();
        for m in 0..6 {
            let n: f64 = (0..121).map(|t| d.get(t, m).powi(2)).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
        let w = 2.0 * std::f64::consts::PI / 121.0;
        let raw: Vec<f64> = (0..121).map(|t| (w * t as f64).cos()).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        for t in 0..121 {
            assert!((d.get(t, 0) - raw[t] / norm).abs() < 1e-14);
        }
    }

    #[test]
    fn phase_offset_examples() {
        let d = CosineDictionary::new(11, 3).unwrap();
        let mut p = SteeringParams::zeros(1, 3);
        p.pairs[0].b = 0.7;
        assert_eq!(phase_offset(&p, &d, 0).unwrap(), vec![0.7; 11]);
        p.pairs[0].b = 0.0;
        p.pairs[0].a = 0.01;
        let ramp = phase_offset(&p, &d, 0).unwrap();
        for (t, v) in ramp.iter().enumerate() {
            assert!((v - 0.01 * t as f64).abs() < 1e-15);
        }
        p.pairs[0].a = 0.0;
        p.pairs[0].w[0] = 1.0;
        let col = phase_offset(&p, &d, 0).unwrap();
        for t in 0..11 {
            assert_eq!(col[t], d.get(t, 0));
        }
        assert!(phase_offset(&p, &d, 1).is_err());
    }

    #[test]
    fn rotation_examples() {
        let ci = vec![1.0, 2.0, -0.5, 0.25];
        let cj = vec![0.3, -1.0, 4.0, 0.0];
        let (a, b) = rotate_coeffs(&ci, &cj, 2, &[0.0, 0.0]).unwrap();
        assert_eq!((a, b), (ci.clone(), cj.clone()));
        let (a, b) = rotate_coeffs(&ci, &cj, 2, &[FRAC_PI_2, FRAC_PI_2]).unwrap();
        for k in 0..4 {
            assert!((a[k] + cj[k]).abs() < 1e-15);
            assert!((b[k] - ci[k]).abs() < 1e-15);
        }
        assert!(rotate_coeffs(&ci, &cj, 2, &[0.0]).is_err());
    }

    #[test]
    fn rotation_shifts_planted_oscillation() {
        let (w, l) = (2.0 * std::f64::consts::PI / 24.0, 8.0);
        let frames = 50;
        let ci: Vec<f64> = (0..frames).map(|t| (w * t as f64).cos()).collect();
        let cj: Vec<f64> = (0..frames).map(|t| (w * t as f64).sin()).collect();
        let (a, b) = rotate_coeffs(&ci, &cj, 1, &vec![w * l; frames]).unwrap();
        for t in 0..frames {
            assert!((a[t] - (w * (t as f64 + l)).cos()).abs() < 1e-10);
            assert!((b[t] - (w * (t as f64 + l)).sin()).abs() < 1e-10);
        }
    }

    #[test]
    fn flat_params_round_trip() {
        let v: Vec<f64> = (0..16).map(|i| i as f64 * 0.5).collect();
        let p = SteeringParams::from_vec(&v, 2, 6).unwrap();
        assert_eq!(p.pairs[1].a, 4.0);
        assert_eq!(p.to_vec(), v);
        assert!(SteeringParams::from_vec(&v, 3, 6).is_err());
    }
}
