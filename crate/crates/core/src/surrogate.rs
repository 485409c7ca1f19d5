//! Frozen surrogate decoder head.
//!
//! A decoder is a fixed chain of affine layers, each optionally followed by a
//! ReLU, mapping one node embedding to one node state. Sequences are decoded
//! frame by frame; there is no autoregressive feedback.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datamodel::{read_tensor, write_tensor, EmbeddingSequence, Tensor, VelocitySequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Linear,
    Mlp,
}

/// One affine layer, `y = x W + b`, with `W` stored row-major `[in x out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    weight: Vec<f64>,
    bias: Vec<f64>,
    inputs: usize,
    outputs: usize,
    activation: Activation,
}

impl Layer {
    pub fn new(
        weight: Vec<f64>,
        bias: Vec<f64>,
        inputs: usize,
        outputs: usize,
        activation: Activation,
    ) -> Result<Self> {
        if weight.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::shape(format!(
                "layer {inputs}x{outputs} got {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite decoder weight".into()));
        }
        Ok(Self {
            weight,
            bias,
            inputs,
            outputs,
            activation,
        })
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.weight[i * self.outputs..(i + 1) * self.outputs];
            for (o, w) in out.iter_mut().zip(row) {
                *o += xi * w;
            }
        }
        if self.activation == Activation::Relu {
            for o in out.iter_mut() {
                if *o < 0.0 {
                    *o = 0.0;
                }
            }
        }
    }
}

/// Immutable decoder head mapping `d_emb`-wide embeddings to `d`-wide states.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenDecoder {
    kind: DecoderKind,
    layers: Vec<Layer>,
}

impl FrozenDecoder {
    pub fn new(kind: DecoderKind, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("decoder needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return Err(Error::shape(format!(
                    "layer chain breaks: {} outputs feed {} inputs",
                    w[0].outputs, w[1].inputs
                )));
            }
        }
        if kind == DecoderKind::Linear && layers.iter().any(|l| l.activation != Activation::None) {
            return Err(Error::invalid("linear decoder cannot contain activations"));
        }
        Ok(Self { kind, layers })
    }

    /// Single affine layer `y = x W + b`.
    pub fn linear(weight: Vec<f64>, bias: Vec<f64>, d_emb: usize, d: usize) -> Result<Self> {
        Self::new(
            DecoderKind::Linear,
            vec![Layer::new(weight, bias, d_emb, d, Activation::None)?],
        )
    }

    pub fn kind(&self) -> DecoderKind {
        self.kind
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn d_emb(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn max_width(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.outputs.max(l.inputs))
            .max()
            .unwrap()
    }

    /// Decode a single embedding into `out`.
    pub fn decode_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.d_emb());
        if self.layers.len() == 1 {
            self.layers[0].apply(x, out);
            return;
        }
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut next = vec![0.0; layer.outputs];
            layer.apply(&cur, &mut next);
            cur = next;
        }
        out.copy_from_slice(&cur);
    }

    /// Forward pass keeping every layer output, for reverse accumulation.
    pub fn trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut next = vec![0.0; layer.outputs];
            layer.apply(&cur, &mut next);
            acts.push(next.clone());
            cur = next;
        }
        acts
    }

    /// Gradient with respect to the input given the output gradient and a
    /// forward trace. ReLU subgradient at exactly zero is zero.
    pub fn backward(&self, x: &[f64], trace: &[Vec<f64>], grad_out: &[f64]) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                for (gi, &a) in g.iter_mut().zip(&trace[li]) {
                    if a <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            let mut gin = vec![0.0; layer.inputs];
            for (i, gi) in gin.iter_mut().enumerate() {
                let row = &layer.weight[i * layer.outputs..(i + 1) * layer.outputs];
                *gi = row.iter().zip(&g).map(|(w, go)| w * go).sum();
            }
            g = gin;
        }
        debug_assert_eq!(g.len(), x.len());
        g
    }

    /// Collapse an activation-free chain into one affine map `(W [d_emb x d], b)`.
    pub fn as_affine(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        if self.layers.iter().any(|l| l.activation != Activation::None) {
            return None;
        }
        let first = &self.layers[0];
        let mut w = first.weight.clone();
        let mut b = first.bias.clone();
        let rows = first.inputs;
        let mut cols = first.outputs;
        for layer in &self.layers[1..] {
            let mut nw = vec![0.0; rows * layer.outputs];
            for r in 0..rows {
                for k in 0..cols {
                    let a = w[r * cols + k];
                    for c in 0..layer.outputs {
                        nw[r * layer.outputs + c] += a * layer.weight[k * layer.outputs + c];
                    }
                }
            }
            let mut nb = layer.bias.clone();
            for k in 0..cols {
                for c in 0..layer.outputs {
                    nb[c] += b[k] * layer.weight[k * layer.outputs + c];
                }
            }
            w = nw;
            b = nb;
            cols = layer.outputs;
        }
        Some((w, b))
    }

    /// Decode one frame of node embeddings `[N x d_emb]` into `[N x d]`.
    pub fn decode_frame(&self, emb: &Tensor) -> Result<Tensor> {
        if emb.rank() != 2 || emb.dims()[1] != self.d_emb() {
            return Err(Error::shape(format!(
                "frame embeddings {:?} do not match decoder width {}",
                emb.dims(),
                self.d_emb()
            )));
        }
        let n = emb.dims()[0];
        let d = self.d_out();
        let mut out = vec![0.0; n * d];
        for (x, o) in emb.data().chunks_exact(self.d_emb()).zip(out.chunks_exact_mut(d)) {
            self.decode_into(x, o);
        }
        Tensor::new(vec![n, d], out)
    }

    /// Decode every frame independently.
    pub fn decode_sequence(&self, embs: &EmbeddingSequence) -> Result<VelocitySequence> {
        self.decode_values(embs.values())
    }

    /// Decode a raw `[(H+1) x N x d_emb]` tensor.
    pub fn decode_values(&self, values: &Tensor) -> Result<VelocitySequence> {
        if values.rank() != 3 || values.dims()[2] != self.d_emb() {
            return Err(Error::shape(format!(
                "embeddings {:?} do not match decoder width {}",
                values.dims(),
                self.d_emb()
            )));
        }
        let (frames, nodes) = (values.dims()[0], values.dims()[1]);
        let d = self.d_out();
        let mut out = vec![0.0; frames * nodes * d];
        for (x, o) in values
            .data()
            .chunks_exact(self.d_emb())
            .zip(out.chunks_exact_mut(d))
        {
            self.decode_into(x, o);
        }
        VelocitySequence::new(Tensor::new(vec![frames, nodes, d], out)?)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut layers = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let weight_file = format!("layer{i}_weight.pst");
            let bias_file = format!("layer{i}_bias.pst");
            write_tensor(
                dir.join(&weight_file),
                &Tensor::new(vec![l.inputs, l.outputs], l.weight.clone())?,
            )?;
            write_tensor(
                dir.join(&bias_file),
                &Tensor::new(vec![l.outputs], l.bias.clone())?,
            )?;
            layers.push(LayerEntry {
                rows: l.inputs,
                cols: l.outputs,
                activation: l.activation,
                weight_file,
                bias_file,
            });
        }
        let manifest = DecoderManifest {
            kind: self.kind,
            d_emb: self.d_emb(),
            d: self.d_out(),
            layers,
        };
        let path = dir.join(DECODER_MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(DECODER_MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::Missing(path.display().to_string())
            } else {
                Error::io(&path, e)
            }
        })?;
        let manifest: DecoderManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let mut layers = Vec::with_capacity(manifest.layers.len());
        for entry in &manifest.layers {
            let w = read_tensor(dir.join(&entry.weight_file))?;
            let b = read_tensor(dir.join(&entry.bias_file))?;
            if w.dims() != [entry.rows, entry.cols] || b.dims() != [entry.cols] {
                return Err(Error::Format {
                    path: path.clone(),
                    reason: format!(
                        "layer files {:?}/{:?} disagree with declared {}x{}",
                        w.dims(),
                        b.dims(),
                        entry.rows,
                        entry.cols
                    ),
                });
            }
            layers.push(Layer::new(
                w.into_data(),
                b.into_data(),
                entry.rows,
                entry.cols,
                entry.activation,
            )?);
        }
        let dec = Self::new(manifest.kind, layers)?;
        if dec.d_emb() != manifest.d_emb || dec.d_out() != manifest.d {
            return Err(Error::Format {
                path,
                reason: format!(
                    "declared widths {}->{} but layers give {}->{}",
                    manifest.d_emb,
                    manifest.d,
                    dec.d_emb(),
                    dec.d_out()
                ),
            });
        }
        Ok(dec)
    }
}

pub const DECODER_MANIFEST: &str = "decoder.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerEntry {
    pub rows: usize,
    pub cols: usize,
    pub activation: Activation,
    pub weight_file: String,
    pub bias_file: String,
}

/// On-disk description of a decoder; weights live in sibling `PST1` files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecoderManifest {
    pub kind: DecoderKind,
    pub d_emb: usize,
    pub d: usize,
    pub layers: Vec<LayerEntry>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_padded(d_emb: usize, d: usize) -> FrozenDecoder {
        let mut w = vec![0.0; d_emb * d];
        for i in 0..d.min(d_emb) {
            w[i * d + i] = 1.0;
        }
        FrozenDecoder::linear(w, vec![0.0; d], d_emb, d).unwrap()
    }

    fn random_mlp(seed: u64) -> FrozenDecoder {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |i: usize, o: usize, act| {
            let w = (0..i * o).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b = (0..o).map(|_| rng.gen_range(-0.5..0.5)).collect();
            Layer::new(w, b, i, o, act).unwrap()
        };
        let l1 = layer(4, 6, Activation::Relu);
        let l2 = layer(6, 2, Activation::None);
        FrozenDecoder::new(DecoderKind::Mlp, vec![l1, l2]).unwrap()
    }

    #[test]
    fn linear_picks_first_columns() {
        let dec = identity_padded(4, 2);
        let emb = Tensor::new(vec![1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(dec.decode_frame(&emb).unwrap().data(), &[1.0, 0.0]);
        let zero = Tensor::zeros(vec![3, 4]).unwrap();
        assert!(dec.decode_frame(&zero).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dead_hidden_layer_returns_final_bias() {
        let l1 = Layer::new(vec![1.0, 1.0], vec![-10.0, -10.0], 1, 2, Activation::Relu).unwrap();
        let l2 = Layer::new(vec![3.0, 4.0, 5.0, 6.0], vec![0.25, -0.5], 2, 2, Activation::None)
            .unwrap();
        let dec = FrozenDecoder::new(DecoderKind::Mlp, vec![l1, l2]).unwrap();
        let out = dec.decode_frame(&Tensor::new(vec![1, 1], vec![2.0]).unwrap()).unwrap();
        assert_eq!(out.data(), &[0.25, -0.5]);
    }

    #[test]
    fn sequence_is_per_frame() {
        let dec = random_mlp(3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let frame: Vec<f64> = (0..5 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let seq: Vec<f64> = frame.iter().cycle().take(3 * 20).copied().collect();
        let embs = EmbeddingSequence::new(Tensor::new(vec![3, 5, 4], seq).unwrap(), 0, 1.0).unwrap();
        let v = dec.decode_sequence(&embs).unwrap();
        let single = dec.decode_frame(&Tensor::new(vec![5, 4], frame).unwrap()).unwrap();
        for t in 0..3 {
            assert_eq!(v.values().slab(t), single.data());
        }
        assert_eq!(dec.decode_sequence(&embs).unwrap(), v);
    }

    #[test]
    fn linear_is_additive_and_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dec = FrozenDecoder::linear(w, vec![0.0, 0.0], 4, 2).unwrap();
        for _ in 0..20 {
            let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + 2.0 * y).collect();
            let (mut da, mut db, mut ds) = ([0.0; 2], [0.0; 2], [0.0; 2]);
            dec.decode_into(&a, &mut da);
            dec.decode_into(&b, &mut db);
            dec.decode_into(&sum, &mut ds);
            for c in 0..2 {
                assert!((ds[c] - (da[c] + 2.0 * db[c])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let dec = identity_padded(4, 2);
        let emb = Tensor::zeros(vec![2, 3]).unwrap();
        assert!(matches!(dec.decode_frame(&emb), Err(Error::Shape(_))));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let dec = random_mlp(11);
        let x = [0.3, -0.2, 0.8, 0.1];
        let g_out = [0.7, -1.3];
        let trace = dec.trace(&x);
        let g = dec.backward(&x, &trace, &g_out);
        for i in 0..4 {
            let h = 1e-6;
            let (mut xp, mut xm) = (x, x);
            xp[i] += h;
            xm[i] -= h;
            let (mut yp, mut ym) = ([0.0; 2], [0.0; 2]);
            dec.decode_into(&xp, &mut yp);
            dec.decode_into(&xm, &mut ym);
            let fd: f64 = (0..2).map(|c| g_out[c] * (yp[c] - ym[c]) / (2.0 * h)).sum();
            assert!((fd - g[i]).abs() < 1e-7, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn affine_collapse_matches_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut layer = |i: usize, o: usize| {
            let w = (0..i * o).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b = (0..o).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Layer::new(w, b, i, o, Activation::None).unwrap()
        };
        let dec = FrozenDecoder::new(DecoderKind::Linear, vec![layer(3, 5), layer(5, 2)]).unwrap();
        let (w, b) = dec.as_affine().unwrap();
        let x = [0.4, -1.0, 2.0];
        let mut y = [0.0; 2];
        dec.decode_into(&x, &mut y);
        for c in 0..2 {
            let direct: f64 = b[c] + (0..3).map(|r| x[r] * w[r * 2 + c]).sum::<f64>();
            assert!((direct - y[c]).abs() < 1e-12);
        }
        assert!(random_mlp(1).as_affine().is_none());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let dec = random_mlp(2);
        dec.save(dir.path()).unwrap();
        assert_eq!(FrozenDecoder::load(dir.path()).unwrap(), dec);
    }
}
