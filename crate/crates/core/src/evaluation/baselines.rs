use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::datamodel::{RepresentationTensor, Tensor, VelocitySequence};
use crate::error::{Error, Result};
use crate::objective::{optimize_flat, EditEvaluator, LossWeights, OptimizeResult, OptimizerConfig};
use crate::oscillation::{analytic_signal, node_averages};
use crate::representation::RepresentationMap;
use crate::surrogate::FrozenDecoder;

pub const MAX_STATIC_FEATURES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StaticKind {
    /// Multiply the feature by a constant factor.
    Scale,
    /// Add a constant offset.
    Additive,
    /// Replace the feature by a constant.
    Clamp,
}

impl StaticKind {
    pub const ALL: [StaticKind; 3] = [StaticKind::Scale, StaticKind::Additive, StaticKind::Clamp];

    pub fn name(self) -> &'static str {
        match self {
            StaticKind::Scale => "scale",
            StaticKind::Additive => "additive",
            StaticKind::Clamp => "clamp",
        }
    }
}

impl std::fmt::Display for StaticKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for StaticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "scale" => Ok(StaticKind::Scale),
            "additive" => Ok(StaticKind::Additive),
            "clamp" => Ok(StaticKind::Clamp),
            other => Err(Error::invalid(format!("unknown static intervention '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticIntervention {
    pub kind: StaticKind,
    pub features: Vec<usize>,
    pub values: Vec<f64>,
}

impl StaticIntervention {
    pub fn validate(&self, width: usize) -> Result<()> {
        if self.features.len() != self.values.len() {
            return Err(Error::shape("one value per selected feature"));
        }
        if self.features.len() > MAX_STATIC_FEATURES {
            return Err(Error::invalid(format!(
                "at most {MAX_STATIC_FEATURES} features, got {}",
                self.features.len()
            )));
        }
        for (k, f) in self.features.iter().enumerate() {
            if *f >= width {
                return Err(Error::invalid(format!("feature {f} out of range for width {width}")));
            }
            if self.features[..k].contains(f) {
                return Err(Error::invalid(format!("feature {f} selected twice")));
            }
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite intervention value".into()));
        }
        Ok(())
    }

    /// Values that leave the representation unchanged (clamp has none; its
    /// neutral start is the feature mean).
    pub fn initial(kind: StaticKind, x: &RepresentationTensor, features: &[usize]) -> Result<Self> {
        let values = features
            .iter()
            .map(|&f| {
                Ok(match kind {
                    StaticKind::Scale => 1.0,
                    StaticKind::Additive => 0.0,
                    StaticKind::Clamp => {
                        let field = x.feature_field(f)?;
                        field.iter().sum::<f64>() / field.len() as f64
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let iv = Self {
            kind,
            features: features.to_vec(),
            values,
        };
        iv.validate(x.features())?;
        Ok(iv)
    }
}

/// Share of the mean-removed DFT power in the strongest positive-frequency
/// bin and its two neighbours.
pub fn spectral_concentration(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 3 {
        return 0.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = series.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let power: Vec<f64> = buf[1..=n / 2].iter().map(|c| c.norm_sqr()).collect();
    let total: f64 = power.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let peak = (0..power.len()).fold(0, |b, k| if power[k] > power[b] { k } else { b });
    let lo = peak.saturating_sub(1);
    let hi = (peak + 1).min(power.len() - 1);
    power[lo..=hi].iter().sum::<f64>() / total
}

/// Up to ten features ranked by amplitude x decoder gain x spectral
/// concentration, descending, ties by index.
pub fn select_static_features(x: &RepresentationTensor, map: &RepresentationMap) -> Result<Vec<usize>> {
    if x.features() == 0 {
        return Err(Error::invalid("representation has no features"));
    }
    if map.width() != x.features() {
        return Err(Error::shape("map width differs from representation width"));
    }
    let gain = map.decoder_strengths();
    let mut scored = Vec::with_capacity(x.features());
    for (f, series) in node_averages(x).into_iter().enumerate() {
        let amp = if series.len() >= 2 {
            let env = analytic_signal(&series)?.envelope;
            env.iter().sum::<f64>() / env.len() as f64
        } else {
            0.0
        };
        scored.push((amp * gain[f] * spectral_concentration(&series), f));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(MAX_STATIC_FEATURES).map(|(_, f)| f).collect())
}

pub fn apply_static(x: &RepresentationTensor, iv: &StaticIntervention) -> Result<RepresentationTensor> {
    iv.validate(x.features())?;
    let d = x.features();
    let mut data = x.values().data().to_vec();
    for (&f, &v) in iv.features.iter().zip(&iv.values) {
        for cell in data.chunks_exact_mut(d) {
            let e = &mut cell[f];
            *e = match iv.kind {
                StaticKind::Scale => *e * v,
                StaticKind::Additive => *e + v,
                StaticKind::Clamp => v,
            };
        }
    }
    RepresentationTensor::edited(Tensor::new(x.values().dims().to_vec(), data)?, x.map_kind())
}

pub fn static_velocities(
    x: &RepresentationTensor,
    iv: &StaticIntervention,
    map: &RepresentationMap,
    decoder: &FrozenDecoder,
) -> Result<VelocitySequence> {
    let edited = apply_static(x, iv)?;
    decoder.decode_values(&map.inverse_values(&edited)?)
}

/// Jointly optimize the per-feature scalars of `kind` against the steering
/// loss, starting from the neutral intervention.
#[allow(clippy::too_many_arguments)]
pub fn optimize_static(
    kind: StaticKind,
    x: &RepresentationTensor,
    features: &[usize],
    map: &RepresentationMap,
    decoder: &FrozenDecoder,
    target: &VelocitySequence,
    weights: LossWeights,
    cfg: &OptimizerConfig,
) -> Result<(StaticIntervention, OptimizeResult)> {
    let init = StaticIntervention::initial(kind, x, features)?;
    let evaluator = EditEvaluator::new(x, None, map, decoder, target, weights)?;
    let fields: Vec<Vec<f64>> = features.iter().map(|&f| x.feature_field(f)).collect::<Result<_>>()?;
    let objective = |v: &[f64], want_grad: bool| {
        let edits: Vec<Vec<f64>> = fields
            .iter()
            .zip(v)
            .map(|(field, &s)| match kind {
                StaticKind::Scale => field.iter().map(|e| (s - 1.0) * e).collect(),
                StaticKind::Additive => vec![s; field.len()],
                StaticKind::Clamp => field.iter().map(|e| s - e).collect(),
            })
            .collect();
        let refs: Vec<(usize, &[f64])> = features.iter().copied().zip(edits.iter().map(|e| e.as_slice())).collect();
        let (loss, grads) = evaluator.evaluate(&refs, want_grad)?;
        let g = grads
            .iter()
            .zip(&fields)
            .map(|(gf, field)| match kind {
                StaticKind::Scale => gf.iter().zip(field).map(|(a, b)| a * b).sum(),
                StaticKind::Additive | StaticKind::Clamp => gf.iter().sum(),
            })
            .collect();
        Ok((loss, g))
    };
    let res = optimize_flat(&init.values, &vec![1.0; features.len()], cfg, objective)?;
    let iv = StaticIntervention {
        values: res.params.clone(),
        ..init
    };
    Ok((iv, res))
}
