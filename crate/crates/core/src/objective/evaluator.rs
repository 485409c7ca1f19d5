use crate::datamodel::{RepresentationTensor, VelocitySequence};
use crate::error::{Error, Result};
use crate::representation::RepresentationMap;
use crate::surrogate::FrozenDecoder;

use super::{dv_sum, LossBreakdown, LossWeights};

/// Data and magnitude losses of additive edits to a few representation
/// features, with gradients with respect to the edit fields.
///
/// The inverse map is affine, so an edit `delta_f` on feature `f` moves the
/// embedding by `delta_f * A_f`. The embeddings of the unedited base are
/// computed once.
#[derive(Debug, Clone)]
pub struct EditEvaluator {
    frames: usize,
    nodes: usize,
    d_emb: usize,
    d_out: usize,
    width: usize,
    a: Vec<f64>,
    e_base: Vec<f64>,
    u_base: Vec<f64>,
    target: Vec<f64>,
    /// `g^-1(base) - g^-1(reference)` when they differ.
    mag_offset: Option<Vec<f64>>,
    decoder: FrozenDecoder,
    affine: Option<(Vec<f64>, Vec<f64>)>,
    weights: LossWeights,
}

impl EditEvaluator {
    /// `reference` is the representation the magnitude term compares
    /// against; `None` means the base itself.
    pub fn new(
        base: &RepresentationTensor,
        reference: Option<&RepresentationTensor>,
        map: &RepresentationMap,
        decoder: &FrozenDecoder,
        target: &VelocitySequence,
        weights: LossWeights,
    ) -> Result<Self> {
        weights.validate()?;
        if map.width() != base.features() {
            return Err(Error::shape(format!(
                "representation has {} features, map expects {}",
                base.features(),
                map.width()
            )));
        }
        if decoder.d_emb() != map.d_emb() {
            return Err(Error::shape("decoder width differs from embedding width"));
        }
        let (frames, nodes) = (base.frames(), base.nodes());
        if target.frames() != frames || target.nodes() != nodes || target.dim() != decoder.d_out() {
            return Err(Error::shape(format!(
                "target {:?} does not match {frames} frames x {nodes} nodes x {}",
                target.values().dims(),
                decoder.d_out()
            )));
        }
        let e_base = map.inverse_values(base)?;
        let u_base = decoder.decode_values(&e_base)?;
        let mag_offset = match reference {
            Some(r) if r != base => {
                let e_ref = map.inverse_values(r)?;
                Some(e_base.data().iter().zip(e_ref.data()).map(|(a, b)| a - b).collect())
            }
            _ => None,
        };
        let (a, _) = map.affine_inverse();
        Ok(Self {
            frames,
            nodes,
            d_emb: map.d_emb(),
            d_out: decoder.d_out(),
            width: map.width(),
            a,
            e_base: e_base.into_data(),
            u_base: u_base.values().data().to_vec(),
            target: target.values().data().to_vec(),
            mag_offset,
            affine: decoder.as_affine(),
            decoder: decoder.clone(),
            weights,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn d_emb(&self) -> usize {
        self.d_emb
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn weights(&self) -> LossWeights {
        self.weights
    }

    pub fn set_weights(&mut self, w: LossWeights) -> Result<()> {
        w.validate()?;
        self.weights = w;
        Ok(())
    }

    pub fn u_base(&self) -> &[f64] {
        &self.u_base
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn mag_offset(&self) -> Option<&[f64]> {
        self.mag_offset.as_deref()
    }

    /// Row `f` of the affine inverse, `[d_emb]`.
    pub fn loading(&self, f: usize) -> &[f64] {
        &self.a[f * self.d_emb..(f + 1) * self.d_emb]
    }

    /// Affine decoder `(W [d_emb x d_out], b)` when the decoder has no ReLU.
    pub fn affine_decoder(&self) -> Option<&(Vec<f64>, Vec<f64>)> {
        self.affine.as_ref()
    }

    /// Velocity moved by a unit edit of feature `f` (affine decoders only).
    pub fn velocity_loading(&self, f: usize) -> Option<Vec<f64>> {
        let (w, _) = self.affine.as_ref()?;
        let a = self.loading(f);
        Some(
            (0..self.d_out)
                .map(|c| (0..self.d_emb).map(|e| a[e] * w[e * self.d_out + c]).sum())
                .collect(),
        )
    }

    fn check_edits(&self, edits: &[(usize, &[f64])]) -> Result<()> {
        let len = self.frames * self.nodes;
        for (f, d) in edits {
            if *f >= self.width {
                return Err(Error::invalid(format!("edited feature {f} out of range")));
            }
            if d.len() != len {
                return Err(Error::shape(format!(
                    "edit of feature {f} has {} entries, expected {len}",
                    d.len()
                )));
            }
        }
        Ok(())
    }

    /// Velocities for the edited representation.
    pub fn velocities(&self, edits: &[(usize, &[f64])]) -> Result<Vec<f64>> {
        self.check_edits(edits)?;
        let de = self.embedding_delta(edits);
        Ok(self.decode_all(&de, None))
    }

    fn embedding_delta(&self, edits: &[(usize, &[f64])]) -> Vec<f64> {
        let d = self.d_emb;
        let mut de = vec![0.0; self.frames * self.nodes * d];
        for (f, delta) in edits {
            let a = self.loading(*f);
            for (k, &v) in delta.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                for (o, ae) in de[k * d..(k + 1) * d].iter_mut().zip(a) {
                    *o += v * ae;
                }
            }
        }
        de
    }

    fn decode_all(&self, de: &[f64], mut traces: Option<&mut Vec<Vec<Vec<f64>>>>) -> Vec<f64> {
        let (d, c) = (self.d_emb, self.d_out);
        let cells = self.frames * self.nodes;
        let mut u = self.u_base.clone();
        if let Some((w, _)) = &self.affine {
            for k in 0..cells {
                let dek = &de[k * d..(k + 1) * d];
                let uk = &mut u[k * c..(k + 1) * c];
                for (e, &v) in dek.iter().enumerate() {
                    if v == 0.0 {
                        continue;
                    }
                    for (o, wv) in uk.iter_mut().zip(&w[e * c..(e + 1) * c]) {
                        *o += v * wv;
                    }
                }
            }
            return u;
        }
        let mut e = vec![0.0; d];
        for k in 0..cells {
            for (x, (b, dv)) in e.iter_mut().zip(self.e_base[k * d..(k + 1) * d].iter().zip(&de[k * d..(k + 1) * d])) {
                *x = b + dv;
            }
            match traces.as_deref_mut() {
                Some(tr) => {
                    let t = self.decoder.trace(&e);
                    u[k * c..(k + 1) * c].copy_from_slice(t.last().expect("decoder has layers"));
                    tr.push(t);
                }
                None => self.decoder.decode_into(&e, &mut u[k * c..(k + 1) * c]),
            }
        }
        u
    }

    /// Losses (curvature left at zero) and, when `want_grad`, the gradient of
    /// the weighted total with respect to every edit field.
    pub fn evaluate(&self, edits: &[(usize, &[f64])], want_grad: bool) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
        self.check_edits(edits)?;
        let (d, c) = (self.d_emb, self.d_out);
        let (frames, nodes) = (self.frames, self.nodes);
        let cells = frames * nodes;
        let de = self.embedding_delta(edits);
        let mut traces = Vec::new();
        let need_trace = want_grad && self.affine.is_none();
        let u = self.decode_all(&de, if need_trace { Some(&mut traces) } else { None });

        let n_vel = cells as f64;
        let n_dv = ((frames - 1) * nodes) as f64;
        let n_mag = (cells * d) as f64;
        let vel = super::sq_diff_sum(&u, &self.target) / n_vel;
        let dv = dv_sum(&u, &self.target, frames) / n_dv;
        let mag = match &self.mag_offset {
            Some(off) => de.iter().zip(off).map(|(a, b)| (a + b) * (a + b)).sum::<f64>(),
            None => de.iter().map(|a| a * a).sum::<f64>(),
        } / n_mag;
        let loss = self.weights.combine(vel, dv, 0.0, mag);
        if !want_grad {
            return Ok((loss, Vec::new()));
        }

        let w = &self.weights;
        let mut gu: Vec<f64> = u
            .iter()
            .zip(&self.target)
            .map(|(a, b)| 2.0 * w.lambda_vel * (a - b) / n_vel)
            .collect();
        if w.lambda_dv != 0.0 {
            let stride = nodes * c;
            for t in 0..frames - 1 {
                let (a0, a1) = (t * stride, (t + 1) * stride);
                for k in 0..stride {
                    let diff = (u[a1 + k] - u[a0 + k]) - (self.target[a1 + k] - self.target[a0 + k]);
                    let g = 2.0 * w.lambda_dv * diff / n_dv;
                    gu[a1 + k] += g;
                    gu[a0 + k] -= g;
                }
            }
        }
        // embedding-space gradient
        let mut ge = vec![0.0; cells * d];
        match &self.affine {
            Some((wd, _)) => {
                for k in 0..cells {
                    let g = &gu[k * c..(k + 1) * c];
                    for (e, o) in ge[k * d..(k + 1) * d].iter_mut().enumerate() {
                        *o = wd[e * c..(e + 1) * c].iter().zip(g).map(|(a, b)| a * b).sum();
                    }
                }
            }
            None => {
                let mut e = vec![0.0; d];
                for k in 0..cells {
                    for (x, (b, dv)) in
                        e.iter_mut().zip(self.e_base[k * d..(k + 1) * d].iter().zip(&de[k * d..(k + 1) * d]))
                    {
                        *x = b + dv;
                    }
                    let g = self.decoder.backward(&e, &traces[k], &gu[k * c..(k + 1) * c]);
                    ge[k * d..(k + 1) * d].copy_from_slice(&g);
                }
            }
        }
        if w.lambda_mag != 0.0 {
            let s = 2.0 * w.lambda_mag / n_mag;
            match &self.mag_offset {
                Some(off) => {
                    for ((g, a), b) in ge.iter_mut().zip(&de).zip(off) {
                        *g += s * (a + b);
                    }
                }
                None => {
                    for (g, a) in ge.iter_mut().zip(&de) {
                        *g += s * a;
                    }
                }
            }
        }
        let grads = edits
            .iter()
            .map(|(f, _)| {
                let a = self.loading(*f);
                (0..cells)
                    .map(|k| ge[k * d..(k + 1) * d].iter().zip(a).map(|(x, y)| x * y).sum())
                    .collect()
            })
            .collect();
        Ok((loss, grads))
    }
}
