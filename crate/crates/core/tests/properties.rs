mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use phasesteer::datamodel::{roi_mask, MeshGeometry, Roi, Tensor};
use phasesteer::evaluation::{apply_static, frac_pct, MetricsReport, StaticIntervention, StaticKind};
use phasesteer::modes::{decompose_field, SvdRoute};
use phasesteer::objective::{loss_dv, loss_vel, LossWeights, SteeringProblem};
use phasesteer::oscillation::{analytic_signal, combine_scores, filter_pairs, PairFilterConfig};
use phasesteer::representation::{pca_fit, sae_train, samples_of, RepresentationMap, SaeModel, SaeTrainConfig};
use phasesteer::steering::{build_pair_modes, steer_representation, CosineDictionary, SteeringParams, DEFAULT_K_BASIS};
use phasesteer::synthgen::{generate, shifted_target, SynthConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn small_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        nodes: 120,
        horizon: 40,
        d_emb: 20,
        seed,
        ..Default::default()
    }
}

fn random_params(g: &mut rand_chacha::ChaCha8Rng, p: usize) -> SteeringParams {
    let mut v = uniform(g, p * (DEFAULT_K_BASIS + 2), 0.8);
    for k in 0..p {
        v[k * (DEFAULT_K_BASIS + 2)] *= 0.05;
    }
    SteeringParams::from_vec(&v, p, DEFAULT_K_BASIS).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn roi_mask_follows_node_order(seed in 0u64..10_000, n in 2usize..40) {
        let mut g = rng(seed);
        let pos: Vec<f64> = (0..n).flat_map(|_| [g.gen_range(0.0..1.6), g.gen_range(0.0..0.41)]).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut g);
        let permuted: Vec<f64> = perm.iter().flat_map(|&k| [pos[2 * k], pos[2 * k + 1]]).collect();
        let geom = |p: Vec<f64>| MeshGeometry::new(Tensor::new(vec![n, 2], p).unwrap(), Roi::WAKE, (0.2, 0.2), 0.05).unwrap();
        let mask = roi_mask(&geom(pos));
        let mask_p = roi_mask(&geom(permuted));
        for (k, &src) in perm.iter().enumerate() {
            prop_assert_eq!(mask_p[k], mask[src]);
        }
    }

    #[test]
    fn sequence_decode_is_per_frame(seed in 0u64..10_000) {
        let mut g = rng(seed);
        let e = oscillating_embeddings(&mut g, 6, 9, 5);
        let dec = mlp_decoder(&mut g, 5, 7, 2);
        let seq = dec.decode_sequence(&e).unwrap();
        let vals = e.values().data();
        for t in 0..6 {
            let frame = Tensor::new(vec![9, 5], vals[t * 45..(t + 1) * 45].to_vec()).unwrap();
            let one = dec.decode_frame(&frame).unwrap();
            prop_assert_eq!(one.data(), &seq.values().data()[t * 18..(t + 1) * 18]);
        }
    }

    #[test]
    fn linear_decoder_is_affine(seed in 0u64..10_000, alpha in -3.0f64..3.0) {
        let mut g = rng(seed);
        let dec = linear_decoder(&mut g, 6, 2);
        let (x, y) = (uniform(&mut g, 6, 2.0), uniform(&mut g, 6, 2.0));
        let f = |v: &[f64]| { let mut o = [0.0; 2]; dec.decode_into(v, &mut o); o };
        let c = f(&[0.0; 6]);
        let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let scaled: Vec<f64> = x.iter().map(|a| alpha * a).collect();
        let (fx, fy, fs, fa) = (f(&x), f(&y), f(&sum), f(&scaled));
        for k in 0..2 {
            prop_assert!((fs[k] - c[k] - (fx[k] - c[k]) - (fy[k] - c[k])).abs() <= 1e-12 * (1.0 + fs[k].abs()));
            prop_assert!((fa[k] - c[k] - alpha * (fx[k] - c[k])).abs() <= 1e-12 * (1.0 + fa[k].abs()));
        }
    }

    #[test]
    fn analytic_envelope_dominates_signal(seed in 0u64..10_000, n in 8usize..200) {
        let mut g = rng(seed);
        let s = uniform(&mut g, n, 5.0);
        let mean = s.iter().sum::<f64>() / n as f64;
        let a = analytic_signal(&s).unwrap();
        for (e, v) in a.envelope.iter().zip(&s) {
            prop_assert!(*e >= (v - mean).abs() - 1e-9);
        }
    }

    #[test]
    fn rank_scores_ignore_amplitude_scale(seed in 0u64..10_000, c in 0.01f64..100.0) {
        let mut g = rng(seed);
        let metrics: Vec<_> = (0..7)
            .map(|_| (g.gen_range(0.6..1.0), g.gen_range(0.1..5.0), g.gen_range(0.1..2.0), g.gen_range(-1.0..1.0)))
            .collect();
        let scaled: Vec<_> = metrics.iter().map(|m| (m.0, c * m.1, m.2, m.3)).collect();
        let order = |s: Vec<f64>| {
            let mut idx: Vec<usize> = (0..s.len()).collect();
            idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
            idx
        };
        let (a, b) = (combine_scores(&metrics), combine_scores(&scaled));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        prop_assert_eq!(order(a), order(b));
    }

    #[test]
    fn mode_energy_and_projection(seed in 0u64..10_000, r in 1usize..6) {
        let mut g = rng(seed);
        let (frames, nodes) = (17, 11);
        let field = uniform(&mut g, frames * nodes, 1.0);
        let md = decompose_field(&field, frames, nodes, r, SvdRoute::Auto).unwrap();
        for m in 0..r {
            let norm = (0..frames).map(|t| md.coeff(t, m).powi(2)).sum::<f64>().sqrt();
            prop_assert!((norm - md.singular_values[m]).abs() <= 1e-9 * md.singular_values[0]);
        }
        let once = md.reconstruct(&md.project(&field).unwrap()).unwrap();
        let twice = md.reconstruct(&md.project(&once).unwrap()).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn steering_leaves_unpaired_features_untouched(seed in 0u64..10_000) {
        let mut g = rng(seed);
        let e = oscillating_embeddings(&mut g, 14, 8, 7);
        let (_, x) = identity_rep(&e);
        let pairs = build_pair_modes(&x, &[(0, 1), (4, 2)], 3).unwrap();
        let dict = CosineDictionary::new(14, DEFAULT_K_BASIS).unwrap();
        let params = random_params(&mut g, 2);
        let (xp, _) = steer_representation(&x, &pairs, &params, &dict).unwrap();
        let (a, b) = (x.values().data(), xp.values().data());
        for k in 0..a.len() {
            if ![0, 1, 2, 4].contains(&(k % 7)) {
                prop_assert_eq!(a[k].to_bits(), b[k].to_bits());
            }
        }
    }

    #[test]
    fn frac_is_scale_free(seed in 0u64..10_000, c in 1e-3f64..1e3) {
        let mut g = rng(seed);
        let (s, o, t) = (uniform(&mut g, 60, 1.0), uniform(&mut g, 60, 1.0), uniform(&mut g, 60, 1.0));
        let sc = |v: &[f64]| v.iter().map(|x| c * x).collect::<Vec<_>>();
        let a = frac_pct(&s, &o, &t, 12, None).unwrap();
        let b = frac_pct(&sc(&s), &sc(&o), &sc(&t), 12, None).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn clamp_is_idempotent(seed in 0u64..10_000) {
        let mut g = rng(seed);
        let e = oscillating_embeddings(&mut g, 10, 6, 6);
        let (_, x) = identity_rep(&e);
        let iv = StaticIntervention { kind: StaticKind::Clamp, features: vec![1, 4], values: uniform(&mut g, 2, 1.0) };
        let once = apply_static(&x, &iv).unwrap();
        let twice = apply_static(&once, &iv).unwrap();
        prop_assert_eq!(once.values().data(), twice.values().data());
    }

    #[test]
    fn sae_codes_are_non_negative(seed in 0u64..10_000) {
        let mut g = rng(seed);
        let (d, k) = (6, 12);
        let model = SaeModel {
            w_enc: DMatrix::from_row_slice(d, k, &uniform(&mut g, d * k, 1.0)),
            b_enc: DVector::from_vec(uniform(&mut g, k, 1.0)),
            w_dec: DMatrix::from_row_slice(k, d, &uniform(&mut g, k * d, 1.0)),
            b_dec: DVector::from_vec(uniform(&mut g, d, 1.0)),
            kappa: 2,
            lambda: 3e-4,
        };
        let h = DMatrix::from_row_slice(20, d, &uniform(&mut g, 20 * d, 10.0));
        prop_assert!(model.encode_matrix(&h).iter().all(|v| *v >= 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn oracle_rotation_reproduces_shifted_target(seed in 0u64..10_000, l in 1i64..12) {
        let cfg = small_synth(seed);
        let ds = generate(&cfg).unwrap();
        let (frames, n, k, d) = (cfg.horizon + 1, ds.geometry.nodes(), ds.d_true(), cfg.d_emb);
        let mut z = ds.true_latents.data().to_vec();
        for (m, w) in cfg.frequencies.iter().enumerate() {
            let (ci, si) = ds.pair_latent(m);
            let (s, c) = (w * l as f64).sin_cos();
            for cell in z.chunks_exact_mut(k) {
                let (a, b) = (cell[ci], cell[si]);
                cell[ci] = c * a - s * b;
                cell[si] = s * a + c * b;
            }
        }
        let mix = DMatrix::from_row_slice(k, d, &ds.mixing);
        let emb = DMatrix::from_row_slice(frames * n, k, &z) * mix;
        let emb = Tensor::new(vec![frames, n, d], emb.transpose().as_slice().to_vec()).unwrap();
        let steered = ds.decoder.decode_values(&emb).unwrap();
        let target = shifted_target(&ds, l).unwrap();
        let (a, b) = (steered.values().data(), target.values().data());
        let err = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let norm = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        prop_assert!(err <= 1e-10 * norm, "relative error {}", err / norm);
    }

    #[test]
    fn pca_components_and_energies(seed in 0u64..10_000, width in 1usize..7) {
        let mut g = rng(seed);
        let e = oscillating_embeddings(&mut g, 12, 10, 6);
        let samples = samples_of(&e).unwrap();
        let model = pca_fit(&samples, width).unwrap();
        let gram = model.components.transpose() * &model.components;
        prop_assert!((gram - DMatrix::identity(width, width)).amax() <= 1e-10);
        let h = DMatrix::from_row_slice(samples.dims()[0], 6, samples.data());
        let proj = model.project_matrix(&h);
        let m = (h.nrows() - 1) as f64;
        for c in 0..width {
            let energy = proj.column(c).norm_squared() / m;
            let var = model.explained_variance[c];
            prop_assert!((energy - var).abs() <= 1e-8 * var.max(1e-300));
        }
    }

    #[test]
    fn filter_pairs_commutes_with_relabelling(seed in 0u64..10_000) {
        let mut g = rng(seed);
        // two quadrature pairs at different frequencies plus two noise features
        let (frames, nodes) = (60, 12);
        let foot = uniform(&mut g, nodes, 1.0);
        let mut cells = Vec::with_capacity(frames * nodes * 6);
        for t in 0..frames {
            let (a, b) = (0.31 * t as f64, 0.55 * t as f64 + 1.0);
            for f in &foot {
                cells.extend([a.cos() * f, a.sin() * f, b.cos() * f, b.sin() * f]);
                cells.extend(uniform(&mut g, 2, 0.05));
            }
        }
        let x = phasesteer::datamodel::RepresentationTensor::new(
            Tensor::new(vec![frames, nodes, 6], cells).unwrap(),
            phasesteer::datamodel::MapKind::Identity,
        )
        .unwrap();
        let mut perm: Vec<usize> = (0..6).collect();
        perm.shuffle(&mut g);
        // feature f of x becomes feature perm[f] of y
        let mut data = vec![0.0; x.values().len()];
        for (cell, out) in x.values().data().chunks_exact(6).zip(data.chunks_exact_mut(6)) {
            for f in 0..6 {
                out[perm[f]] = cell[f];
            }
        }
        let y = phasesteer::datamodel::RepresentationTensor::new(Tensor::new(x.values().dims().to_vec(), data).unwrap(), x.map_kind()).unwrap();
        let cfg = PairFilterConfig { z_amp_min: 0.0, ..Default::default() };
        let mut a: Vec<(usize, usize)> = filter_pairs(&x, &cfg).unwrap().iter().map(|c| (perm[c.i], perm[c.j])).collect();
        let mut b: Vec<(usize, usize)> = filter_pairs(&y, &cfg).unwrap().iter().map(|c| (c.i, c.j)).collect();
        prop_assert!(!a.is_empty());
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn zero_steering_is_the_baseline(seed in 0u64..10_000, mlp in any::<bool>()) {
        let mut g = rng(seed);
        let (frames, nodes) = (12, 7);
        let e = oscillating_embeddings(&mut g, frames, nodes, 6);
        let (map, x) = pca_rep(&e, 6);
        let decoder = if mlp { mlp_decoder(&mut g, 6, 9, 2) } else { linear_decoder(&mut g, 6, 2) };
        let target = random_velocity(&mut g, frames, nodes, 2);
        let weights = LossWeights { lambda_vel: 1.0, lambda_dv: 0.5, lambda_phase: 0.1, lambda_mag: 0.3 };
        // full rank: min(frames, nodes)
        let pairs = build_pair_modes(&x, &[(0, 1), (2, 3)], nodes).unwrap();
        let dict = CosineDictionary::new(frames, DEFAULT_K_BASIS).unwrap();
        let problem = SteeringProblem::new(&x, pairs.clone(), dict.clone(), &map, &decoder, &target, weights).unwrap();
        let zero = problem.zero_params();
        let orig = decoder.decode_values(&map.inverse_values(&x).unwrap()).unwrap();
        let base = weights.combine(loss_vel(&orig, &target).unwrap(), loss_dv(&orig, &target).unwrap(), 0.0, 0.0).total;
        let loss = problem.evaluate(&zero).unwrap();
        prop_assert!((loss.total - base).abs() <= 1e-10 * base.max(1.0));

        let u = problem.steered_velocities(&zero).unwrap();
        let pos: Vec<f64> = (0..nodes).flat_map(|k| [0.5 + 0.1 * k as f64, 0.2]).collect();
        let geom = MeshGeometry::new(Tensor::new(vec![nodes, 2], pos).unwrap(), Roi::WAKE, (0.2, 0.2), 0.05).unwrap();
        let f = MetricsReport::compute(&u, &orig, &target, &geom, "").unwrap().frac_pct_vx;
        prop_assert!(f.abs() <= 1e-8);

        // doubling lambda_vel changes only the vel share of the total
        let params = random_params(&mut g, 2);
        let l1 = problem.evaluate(&params).unwrap();
        let w2 = LossWeights { lambda_vel: 2.0 * weights.lambda_vel, ..weights };
        let p2 = SteeringProblem::new(&x, pairs, dict, &map, &decoder, &target, w2).unwrap();
        let l2 = p2.evaluate(&params).unwrap();
        prop_assert!((l2.total - l1.total - weights.lambda_vel * l1.vel).abs() <= 1e-12 * l2.total.max(1.0));
        prop_assert_eq!((l1.vel, l1.dv, l1.curv, l1.mag), (l2.vel, l2.dv, l2.curv, l2.mag));
    }
}

#[test]
fn sae_training_is_deterministic_and_keeps_unit_rows() {
    let mut g = rng(5);
    let e = oscillating_embeddings(&mut g, 30, 20, 8);
    let samples = samples_of(&e).unwrap();
    let cfg = SaeTrainConfig {
        kappa: 2,
        max_epochs: 4,
        seed: 9,
        ..Default::default()
    };
    let (a, ra) = sae_train(&samples, &cfg).unwrap();
    let (b, rb) = sae_train(&samples, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    assert!(ra.max_row_norm_error <= 1e-9);
    let map = RepresentationMap::Sae(a);
    assert_eq!(map.width(), 16);
}
