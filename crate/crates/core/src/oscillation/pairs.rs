use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::hilbert::{analyze_features, phase_locking, FeatureSignal};
use crate::datamodel::RepresentationTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairFilterConfig {
    /// Minimum across-feature z-score of both envelope means.
    pub z_amp_min: f64,
    /// Relative frequency tolerance.
    pub eps_omega_rel: f64,
    /// Allowed distance of the mean phase difference from +pi/2.
    pub quad_tol: f64,
    pub coherence_min: f64,
    /// Frames dropped at each end when estimating frequency. Boundary
    /// ringing of the DFT Hilbert transform lasts about one period.
    pub edge_guard: usize,
    pub top_p: usize,
}

impl Default for PairFilterConfig {
    fn default() -> Self {
        Self {
            z_amp_min: 1.0,
            eps_omega_rel: 0.10,
            quad_tol: std::f64::consts::PI / 8.0,
            coherence_min: 0.6,
            edge_guard: 12,
            top_p: 8,
        }
    }
}

impl PairFilterConfig {
    pub fn validate(&self) -> Result<()> {
        let thresholds = [
            ("z_amp_min", self.z_amp_min),
            ("eps_omega_rel", self.eps_omega_rel),
            ("quad_tol", self.quad_tol),
            ("coherence_min", self.coherence_min),
        ];
        for (name, v) in thresholds {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        if self.top_p == 0 {
            return Err(Error::Config("top_p must be >= 1".into()));
        }
        Ok(())
    }
}

/// A pair that passed the hard filters, oriented so `i` leads `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCandidate {
    pub i: usize,
    pub j: usize,
    pub omega: f64,
    pub coherence: f64,
    pub mean_phase_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillatoryPair {
    pub i: usize,
    pub j: usize,
    pub omega: f64,
    pub coherence: f64,
    pub mean_phase_diff: f64,
    pub amplitude_score: f64,
    pub decoder_score: f64,
    pub footprint_score: f64,
    pub rank_score: f64,
}

fn z_scores(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd == 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / sd).collect()
}

/// Apply the amplitude, frequency and quadrature filters to every feature pair.
pub fn filter_pairs(x: &RepresentationTensor, cfg: &PairFilterConfig) -> Result<Vec<PairCandidate>> {
    if x.features() < 2 {
        return Ok(Vec::new());
    }
    let signals = analyze_features(x, cfg.edge_guard)?;
    Ok(filter_signals(&signals, cfg))
}

/// Filters over precomputed feature signals.
pub fn filter_signals(signals: &[FeatureSignal], cfg: &PairFilterConfig) -> Vec<PairCandidate> {
    let means: Vec<f64> = signals.iter().map(FeatureSignal::mean_envelope).collect();
    let z = z_scores(&means);
    let strong: Vec<usize> = (0..signals.len()).filter(|&f| z[f] >= cfg.z_amp_min).collect();
    let mut out = Vec::new();
    for (a, &fi) in strong.iter().enumerate() {
        for &fj in &strong[a + 1..] {
            let (si, sj) = (&signals[fi], &signals[fj]);
            let top = si.omega_hat.max(sj.omega_hat);
            if (si.omega_hat - sj.omega_hat).abs() >= cfg.eps_omega_rel * top {
                continue;
            }
            let (coherence, diff) = phase_locking(&si.phase, &sj.phase);
            if coherence < cfg.coherence_min {
                continue;
            }
            let (i, j, diff) = if (diff - FRAC_PI_2).abs() <= cfg.quad_tol {
                (fi, fj, diff)
            } else if (diff + FRAC_PI_2).abs() <= cfg.quad_tol {
                (fj, fi, -diff)
            } else {
                continue;
            };
            out.push(PairCandidate {
                i,
                j,
                omega: 0.5 * (si.omega_hat + sj.omega_hat),
                coherence,
                mean_phase_diff: diff,
            });
        }
    }
    out
}

/// Per-node mean square of feature `f` over the horizon.
pub fn energy_map(x: &RepresentationTensor, f: usize) -> Result<Vec<f64>> {
    let field = x.feature_field(f)?;
    let (frames, nodes) = (x.frames(), x.nodes());
    let mut e = vec![0.0; nodes];
    for row in field.chunks_exact(nodes) {
        for (en, v) in e.iter_mut().zip(row) {
            *en += v * v;
        }
    }
    e.iter_mut().for_each(|v| *v /= frames as f64);
    Ok(e)
}

/// Cosine similarity of two energy maps; zero when either map vanishes.
pub fn footprint_coherence(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) || span <= 1e-12 * hi.abs().max(lo.abs()) {
        return vec![1.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / span).collect()
}

/// Raw per-candidate metrics before normalization:
/// (coherence, amplitude, decoder strength, footprint).
pub type PairMetrics = (f64, f64, f64, f64);

/// Combine raw metrics into rank scores: min-max normalize each metric over
/// the candidates, then take the geometric mean.
pub fn combine_scores(metrics: &[PairMetrics]) -> Vec<f64> {
    let col = |k: usize| -> Vec<f64> {
        metrics
            .iter()
            .map(|m| match k {
                0 => m.0,
                1 => m.1,
                2 => m.2,
                _ => m.3.clamp(0.0, 1.0),
            })
            .collect()
    };
    let norm: Vec<Vec<f64>> = (0..4).map(|k| min_max(&col(k))).collect();
    (0..metrics.len())
        .map(|c| (norm[0][c] * norm[1][c] * norm[2][c] * norm[3][c]).powf(0.25))
        .collect()
}

/// Score the candidates, sort them and keep the best `top_p` with no feature
/// used twice.
///
/// `decoder_strength[f]` is the decoder-side weight of feature `f` under the
/// current representation map.
pub fn rank_pairs(
    candidates: &[PairCandidate],
    x: &RepresentationTensor,
    decoder_strength: &[f64],
    cfg: &PairFilterConfig,
) -> Result<Vec<OscillatoryPair>> {
    if decoder_strength.len() != x.features() {
        return Err(Error::shape(format!(
            "decoder strengths cover {} features, representation has {}",
            decoder_strength.len(),
            x.features()
        )));
    }
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let signals = analyze_features(x, cfg.edge_guard)?;
    let mut energies: Vec<Option<Vec<f64>>> = vec![None; x.features()];
    let mut metrics = Vec::with_capacity(candidates.len());
    for c in candidates {
        for f in [c.i, c.j] {
            if energies[f].is_none() {
                energies[f] = Some(energy_map(x, f)?);
            }
        }
        let amp = 0.5 * (signals[c.i].mean_envelope() + signals[c.j].mean_envelope());
        let dec = 0.5 * (decoder_strength[c.i] + decoder_strength[c.j]);
        let foot = footprint_coherence(
            energies[c.i].as_deref().unwrap_or_default(),
            energies[c.j].as_deref().unwrap_or_default(),
        );
        let (coh, _) = phase_locking(&signals[c.i].phase, &signals[c.j].phase);
        metrics.push((coh, amp, dec, foot));
    }
    let scores = combine_scores(&metrics);
    let mut ranked: Vec<OscillatoryPair> = candidates
        .iter()
        .zip(&metrics)
        .zip(&scores)
        .map(|((c, m), &s)| OscillatoryPair {
            i: c.i,
            j: c.j,
            omega: c.omega,
            coherence: m.0,
            mean_phase_diff: c.mean_phase_diff,
            amplitude_score: m.1,
            decoder_score: m.2,
            footprint_score: m.3,
            rank_score: s,
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.rank_score
            .total_cmp(&a.rank_score)
            .then((a.i, a.j).cmp(&(b.i, b.j)))
    });
    Ok(select_disjoint(ranked, cfg.top_p))
}

/// Greedy walk down a ranked list keeping pairs whose features are unused.
pub fn select_disjoint(ranked: Vec<OscillatoryPair>, top_p: usize) -> Vec<OscillatoryPair> {
    let mut used = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for p in ranked {
        if out.len() == top_p {
            break;
        }
        if used.contains(&p.i) || used.contains(&p.j) {
            continue;
        }
        used.insert(p.i);
        used.insert(p.j);
        out.push(p);
    }
    out
}

/// Filter then rank in one call.
pub fn identify_pairs(
    x: &RepresentationTensor,
    decoder_strength: &[f64],
    cfg: &PairFilterConfig,
) -> Result<Vec<OscillatoryPair>> {
    cfg.validate()?;
    let candidates = filter_pairs(x, cfg)?;
    rank_pairs(&candidates, x, decoder_strength, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{MapKind, Tensor};
    use std::f64::consts::PI;

    /// Features given as closures of (t, node); the field is `f(t) * g(node)`.
    fn tensor(frames: usize, nodes: usize, feats: &[&dyn Fn(usize, usize) -> f64]) -> RepresentationTensor {
        let d = feats.len();
        let mut data = vec![0.0; frames * nodes * d];
        for t in 0..frames {
            for n in 0..nodes {
                for (f, func) in feats.iter().enumerate() {
                    data[(t * nodes + n) * d + f] = func(t, n);
                }
            }
        }
        RepresentationTensor::new(Tensor::new(vec![frames, nodes, d], data).unwrap(), MapKind::Identity)
            .unwrap()
    }

    fn cand(i: usize, j: usize) -> PairCandidate {
        PairCandidate {
            i,
            j,
            omega: 0.3,
            coherence: 1.0,
            mean_phase_diff: FRAC_PI_2,
        }
    }

    #[test]
    fn energy_map_examples() {
        let x = tensor(10, 3, &[&|_, _| 0.0, &|_, n| if n == 0 { 1.0 } else { 0.0 }]);
        assert_eq!(energy_map(&x, 0).unwrap(), vec![0.0; 3]);
        assert_eq!(energy_map(&x, 1).unwrap(), vec![1.0, 0.0, 0.0]);
        assert!(energy_map(&x, 2).is_err());
    }

    #[test]
    fn frequency_mismatch_excluded() {
        let x = tensor(
            121,
            2,
            &[&|t, _| (0.3 * t as f64).cos(), &|t, _| (0.6 * t as f64).sin()],
        );
        let cfg = PairFilterConfig {
            z_amp_min: 0.0,
            ..Default::default()
        };
        assert!(filter_pairs(&x, &cfg).unwrap().is_empty());
    }

    #[test]
    fn duplicated_feature_fails_quadrature() {
        let w = 2.0 * PI / 20.0;
        let x = tensor(120, 2, &[&|t, _| (w * t as f64).cos(), &|t, _| (w * t as f64).cos()]);
        let cfg = PairFilterConfig {
            z_amp_min: 0.0,
            ..Default::default()
        };
        assert!(filter_pairs(&x, &cfg).unwrap().is_empty());
    }

    #[test]
    fn quadrature_pair_is_oriented() {
        let w = 2.0 * PI / 24.0;
        // feature 1 leads feature 0 by a quarter turn
        let x = tensor(
            120,
            3,
            &[&|t, _| (w * t as f64).sin(), &|t, _| (w * t as f64).cos(), &|_, _| 0.0],
        );
        let cfg = PairFilterConfig {
            z_amp_min: 0.0,
            ..Default::default()
        };
        let c = filter_pairs(&x, &cfg).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].i, c[0].j), (1, 0));
        assert!((c[0].mean_phase_diff - FRAC_PI_2).abs() < 1e-6);
        assert!(c[0].coherence > 0.999);
        assert!((c[0].omega - w).abs() / w < 0.02);
    }

    #[test]
    fn hilbert_shifted_sinusoid_is_coherent() {
        let w = 0.37;
        let x = tensor(
            101,
            1,
            &[&|t, _| (w * t as f64).cos(), &|t, _| (w * t as f64).sin()],
        );
        let s = analyze_features(&x, 5).unwrap();
        assert!(phase_locking(&s[0].phase, &s[1].phase).0 >= 0.95);
    }

    #[test]
    fn single_candidate_returned() {
        let x = tensor(16, 2, &[&|t, _| t as f64, &|_, n| n as f64]);
        let cfg = PairFilterConfig::default();
        let out = rank_pairs(&[cand(0, 1)], &x, &[1.0, 1.0], &cfg).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].i, out[0].j), (0, 1));
    }

    #[test]
    fn co_localized_pair_ranks_first() {
        let mut m = vec![(0.9, 1.0, 1.0, 0.0), (0.9, 1.0, 1.0, 1.0)];
        let s = combine_scores(&m);
        assert!(s[1] > s[0]);
        m.swap(0, 1);
        let s = combine_scores(&m);
        assert!(s[0] > s[1]);
    }

    #[test]
    fn amplitude_scaling_preserves_order() {
        let m = vec![
            (0.9, 1.0, 1.0, 0.8),
            (0.8, 3.0, 0.5, 0.9),
            (0.95, 2.0, 0.7, 0.7),
        ];
        let scaled: Vec<_> = m.iter().map(|&(a, b, c, d)| (a, 7.5 * b, c, d)).collect();
        let order = |s: Vec<f64>| {
            let mut idx: Vec<usize> = (0..s.len()).collect();
            idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
            idx
        };
        assert_eq!(order(combine_scores(&m)), order(combine_scores(&scaled)));
    }

    #[test]
    fn disjoint_selection_skips_reused_features() {
        let mk = |i, j, s| OscillatoryPair {
            i,
            j,
            omega: 0.1,
            coherence: 1.0,
            mean_phase_diff: FRAC_PI_2,
            amplitude_score: 1.0,
            decoder_score: 1.0,
            footprint_score: 1.0,
            rank_score: s,
        };
        let out = select_disjoint(vec![mk(0, 1, 0.9), mk(1, 2, 0.8), mk(3, 2, 0.7), mk(4, 5, 0.6)], 2);
        let got: Vec<_> = out.iter().map(|p| (p.i, p.j)).collect();
        assert_eq!(got, vec![(0, 1), (3, 2)]);
    }

    #[test]
    fn config_validation() {
        assert!(PairFilterConfig::default().validate().is_ok());
        let bad = PairFilterConfig {
            top_p: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PairFilterConfig {
            quad_tol: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
