use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::datamodel::RepresentationTensor;
use crate::error::{Error, Result};

pub const MIN_SERIES_LEN: usize = 8;

/// Mean of feature `f` over nodes, per frame.
pub fn node_average(x: &RepresentationTensor, f: usize) -> Result<Vec<f64>> {
    let d = x.features();
    if f >= d {
        return Err(Error::invalid(format!("feature {f} out of range (D = {d})")));
    }
    let n = x.nodes();
    Ok(x.values()
        .data()
        .chunks_exact(n * d)
        .map(|frame| frame.iter().skip(f).step_by(d).sum::<f64>() / n as f64)
        .collect())
}

/// All node averages at once, `[D][(H+1)]`.
pub fn node_averages(x: &RepresentationTensor) -> Vec<Vec<f64>> {
    let (frames, n, d) = (x.frames(), x.nodes(), x.features());
    let mut out = vec![vec![0.0; frames]; d];
    for (t, frame) in x.values().data().chunks_exact(n * d).enumerate() {
        for node in frame.chunks_exact(d) {
            for (f, v) in node.iter().enumerate() {
                out[f][t] += v;
            }
        }
    }
    for series in &mut out {
        series.iter_mut().for_each(|v| *v /= n as f64);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticSignal {
    /// Instantaneous phase in (-pi, pi].
    pub phase: Vec<f64>,
    /// Magnitude of the analytic signal.
    pub envelope: Vec<f64>,
    /// Hilbert transform of the mean-removed series.
    pub quadrature: Vec<f64>,
}

/// Analytic signal of the mean-removed series via the one-sided spectrum:
/// negative-frequency bins zeroed, strictly positive bins doubled, DC and
/// Nyquist kept.
pub fn analytic_signal(series: &[f64]) -> Result<AnalyticSignal> {
    let n = series.len();
    if n < MIN_SERIES_LEN {
        return Err(Error::invalid(format!(
            "series of length {n} is too short for Hilbert analysis (need {MIN_SERIES_LEN})"
        )));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&v| Complex::new(v - mean, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    for (k, b) in buf.iter_mut().enumerate() {
        let gain = if k == 0 || (n % 2 == 0 && k == half) {
            1.0
        } else if k <= half {
            2.0
        } else {
            0.0
        };
        *b *= gain;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    let mut phase = Vec::with_capacity(n);
    let mut envelope = Vec::with_capacity(n);
    let mut quadrature = Vec::with_capacity(n);
    for (b, &x) in buf.iter().zip(series) {
        // real part is the mean-removed input up to rounding; use it exactly
        let re = x - mean;
        let im = b.im * scale;
        phase.push(wrap_angle(im.atan2(re)));
        envelope.push(re.hypot(im));
        quadrature.push(im);
    }
    Ok(AnalyticSignal {
        phase,
        envelope,
        quadrature,
    })
}

/// Map an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Frames kept after dropping `edge_guard` at each end. Falls back to the
/// whole range when the guard would leave fewer than two frames.
pub fn interior(len: usize, edge_guard: usize) -> std::ops::Range<usize> {
    if len >= 2 * edge_guard + 2 {
        edge_guard..len - edge_guard
    } else {
        0..len
    }
}

/// Median absolute wrapped phase increment over the interior frames.
pub fn frequency_proxy(phase: &[f64], edge_guard: usize) -> f64 {
    if phase.len() < 2 {
        return 0.0;
    }
    let range = interior(phase.len(), edge_guard);
    let window = &phase[range];
    let mut inc: Vec<f64> = window
        .windows(2)
        .map(|w| wrap_angle(w[1] - w[0]).abs())
        .collect();
    median(&mut inc)
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Per-feature Hilbert summary of a node-averaged series.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSignal {
    pub feature: usize,
    pub series: Vec<f64>,
    pub phase: Vec<f64>,
    pub envelope: Vec<f64>,
    pub omega_hat: f64,
}

impl FeatureSignal {
    pub fn compute(feature: usize, series: Vec<f64>, edge_guard: usize) -> Result<Self> {
        let a = analytic_signal(&series)?;
        let omega_hat = frequency_proxy(&a.phase, edge_guard);
        Ok(Self {
            feature,
            series,
            phase: a.phase,
            envelope: a.envelope,
            omega_hat,
        })
    }

    pub fn mean_envelope(&self) -> f64 {
        self.envelope.iter().sum::<f64>() / self.envelope.len() as f64
    }
}

/// Hilbert summaries of every feature of `x`.
pub fn analyze_features(x: &RepresentationTensor, edge_guard: usize) -> Result<Vec<FeatureSignal>> {
    node_averages(x)
        .into_iter()
        .enumerate()
        .map(|(f, s)| FeatureSignal::compute(f, s, edge_guard))
        .collect()
}

/// Circular mean of `theta_i - theta_j` over all frames, returned as
/// (resultant length, mean angle).
pub fn phase_locking(theta_i: &[f64], theta_j: &[f64]) -> (f64, f64) {
    let len = theta_i.len() as f64;
    let (mut c, mut s) = (0.0, 0.0);
    for (a, b) in theta_i.iter().zip(theta_j) {
        let d = a - b;
        c += d.cos();
        s += d.sin();
    }
    let (c, s) = (c / len, s / len);
    (c.hypot(s), s.atan2(c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{MapKind, Tensor};

    fn unwrap_phase(p: &[f64]) -> Vec<f64> {
        let mut out = vec![p[0]];
        for w in p.windows(2) {
            let last = *out.last().unwrap();
            out.push(last + wrap_angle(w[1] - w[0]));
        }
        out
    }

    #[test]
    fn cosine_has_linear_phase_and_unit_envelope() {
        let omega = 2.0 * PI / 20.0;
        let s: Vec<f64> = (0..120).map(|t| (omega * t as f64).cos()).collect();
        let a = analytic_signal(&s).unwrap();
        let un = unwrap_phase(&a.phase);
        let (lo, hi) = (5, 115);
        let slope = (un[hi - 1] - un[lo]) / (hi - 1 - lo) as f64;
        assert!((slope - omega).abs() / omega < 0.02, "slope {slope}");
        for t in lo..hi {
            assert!((a.envelope[t] - 1.0).abs() < 0.05, "t={t} env {}", a.envelope[t]);
        }
    }

    #[test]
    fn constant_series_has_zero_envelope() {
        let a = analytic_signal(&[3.5; 16]).unwrap();
        assert!(a.envelope.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn sine_lags_cosine_by_quarter_turn() {
        let omega = 2.0 * PI / 24.0;
        let c: Vec<f64> = (0..120).map(|t| (omega * t as f64).cos()).collect();
        let s: Vec<f64> = (0..120).map(|t| (omega * t as f64).sin()).collect();
        let ac = analytic_signal(&c).unwrap();
        let as_ = analytic_signal(&s).unwrap();
        for t in 5..115 {
            let d = wrap_angle(ac.phase[t] - as_.phase[t]);
            assert!((d - PI / 2.0).abs() < 0.02, "t={t} d={d}");
        }
    }

    #[test]
    fn short_series_rejected() {
        assert!(analytic_signal(&[1.0; 7]).is_err());
    }

    #[test]
    fn frequency_proxy_examples() {
        let linear: Vec<f64> = (0..50).map(|t| wrap_angle(0.3 * t as f64)).collect();
        assert!((frequency_proxy(&linear, 0) - 0.3).abs() < 1e-9);
        // a single wrap from +pi to -pi counts as a small step
        let wrapped = [PI - 0.2, PI - 0.1, -PI + 0.0, -PI + 0.1];
        let unwrapped = [PI - 0.2, PI - 0.1, PI, PI + 0.1];
        assert!((frequency_proxy(&wrapped, 0) - frequency_proxy(&unwrapped, 0)).abs() < 1e-12);
    }

    #[test]
    fn node_average_examples() {
        // node n carries value n at every frame
        let (frames, nodes) = (5, 4);
        let data: Vec<f64> = (0..frames * nodes).map(|i| (i % nodes) as f64).collect();
        let x = RepresentationTensor::new(
            Tensor::new(vec![frames, nodes, 1], data).unwrap(),
            MapKind::Identity,
        )
        .unwrap();
        assert_eq!(node_average(&x, 0).unwrap(), vec![1.5; frames]);
        assert!(node_average(&x, 1).is_err());
        let c = RepresentationTensor::new(
            Tensor::new(vec![3, 2, 1], vec![0.7; 6]).unwrap(),
            MapKind::Identity,
        )
        .unwrap();
        assert_eq!(node_averages(&c)[0], vec![0.7; 3]);
    }

    #[test]
    fn envelope_dominates_real_part() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let len = rng.gen_range(8..200);
            let s: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let mean = s.iter().sum::<f64>() / len as f64;
            let a = analytic_signal(&s).unwrap();
            for (e, v) in a.envelope.iter().zip(&s) {
                assert!(*e >= (v - mean).abs() - 1e-9);
            }
        }
    }
}
