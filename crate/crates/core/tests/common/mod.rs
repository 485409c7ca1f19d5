#![allow(dead_code)]

use phasesteer::datamodel::{EmbeddingSequence, MapKind, RepresentationTensor, Tensor, VelocitySequence};
use phasesteer::representation::{pca_fit, samples_of, RepresentationMap};
use phasesteer::surrogate::{Activation, DecoderKind, FrozenDecoder, Layer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Embeddings with a few oscillating directions plus noise.
pub fn oscillating_embeddings(rng: &mut ChaCha8Rng, frames: usize, nodes: usize, d: usize) -> EmbeddingSequence {
    let dirs: Vec<Vec<f64>> = (0..d).map(|_| uniform(rng, d, 1.0)).collect();
    let foot: Vec<Vec<f64>> = (0..d).map(|_| uniform(rng, nodes, 1.0)).collect();
    let mut v = vec![0.0; frames * nodes * d];
    for t in 0..frames {
        for n in 0..nodes {
            for (k, dir) in dirs.iter().enumerate() {
                let w = 0.3 + 0.1 * (k / 2) as f64;
                let phase = w * t as f64 + if k % 2 == 0 { 0.0 } else { -std::f64::consts::FRAC_PI_2 };
                let s = foot[k][n] * phase.cos();
                for e in 0..d {
                    v[(t * nodes + n) * d + e] += s * dir[e];
                }
            }
            for e in 0..d {
                v[(t * nodes + n) * d + e] += 0.05 * rng.gen_range(-1.0..1.0);
            }
        }
    }
    EmbeddingSequence::new(Tensor::new(vec![frames, nodes, d], v).unwrap(), 0, 0.01).unwrap()
}

pub fn identity_rep(e: &EmbeddingSequence) -> (RepresentationMap, RepresentationTensor) {
    let map = RepresentationMap::Identity { width: e.width() };
    let x = map.forward(e).unwrap();
    assert_eq!(x.map_kind(), MapKind::Identity);
    (map, x)
}

pub fn pca_rep(e: &EmbeddingSequence, width: usize) -> (RepresentationMap, RepresentationTensor) {
    let model = pca_fit(&samples_of(e).unwrap(), width).unwrap();
    let map = RepresentationMap::Pca(model);
    let x = map.forward(e).unwrap();
    (map, x)
}

pub fn linear_decoder(rng: &mut ChaCha8Rng, d_emb: usize, d: usize) -> FrozenDecoder {
    FrozenDecoder::linear(uniform(rng, d_emb * d, 1.0), uniform(rng, d, 0.5), d_emb, d).unwrap()
}

pub fn mlp_decoder(rng: &mut ChaCha8Rng, d_emb: usize, hidden: usize, d: usize) -> FrozenDecoder {
    let l1 = Layer::new(uniform(rng, d_emb * hidden, 0.8), uniform(rng, hidden, 0.5), d_emb, hidden, Activation::Relu).unwrap();
    let l2 = Layer::new(uniform(rng, hidden * d, 0.8), uniform(rng, d, 0.2), hidden, d, Activation::None).unwrap();
    FrozenDecoder::new(DecoderKind::Mlp, vec![l1, l2]).unwrap()
}

pub fn random_velocity(rng: &mut ChaCha8Rng, frames: usize, nodes: usize, d: usize) -> VelocitySequence {
    VelocitySequence::new(Tensor::new(vec![frames, nodes, d], uniform(rng, frames * nodes * d, 1.0)).unwrap()).unwrap()
}

/// Relative error with an absolute floor on the denominator.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
