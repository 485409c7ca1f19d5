//! Per-feature truncated SVD of the mean-removed space-time field.
//!
//! For feature `f` the field `X^f` is `[(H+1) x N]`. After removing the
//! temporal mean `mu_f`, the top-`r` right singular vectors form the spatial
//! modes `Phi_f` and `C^f(t) = (X^f_t - mu_f) Phi_f` are the coefficient
//! trajectories.

use nalgebra::DMatrix;

use crate::datamodel::RepresentationTensor;
use crate::error::{Error, Result};
use crate::linalg::{fix_column_signs, orthonormalize_columns, symmetric_eigen};

/// Largest `min(H+1, N)` for which the Gram-matrix route is used by default.
pub const GRAM_LIMIT: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SvdRoute {
    /// Eigen-decomposition of the smaller Gram matrix.
    Gram,
    /// Full thin SVD of the field.
    Full,
    /// Gram when the small side is at most [`GRAM_LIMIT`], full otherwise.
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeDecomposition {
    pub feature: usize,
    frames: usize,
    nodes: usize,
    rank: usize,
    /// Temporal mean, `[N]`.
    pub mu: Vec<f64>,
    /// Spatial modes, row-major `[N x r]`, orthonormal columns.
    pub phi: Vec<f64>,
    /// Coefficient trajectories, row-major `[(H+1) x r]`.
    pub coeffs: Vec<f64>,
    pub singular_values: Vec<f64>,
}

impl ModeDecomposition {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn coeff(&self, t: usize, m: usize) -> f64 {
        self.coeffs[t * self.rank + m]
    }

    /// Field `[(H+1) x N]` from a coefficient matrix `[(H+1) x r]`:
    /// `coeffs * phi^T + mu` per frame.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.frames * self.rank {
            return Err(Error::shape(format!(
                "coefficients need {}x{} entries, got {}",
                self.frames,
                self.rank,
                coeffs.len()
            )));
        }
        let (r, n) = (self.rank, self.nodes);
        let mut out = vec![0.0; self.frames * n];
        for t in 0..self.frames {
            let c = &coeffs[t * r..(t + 1) * r];
            let row = &mut out[t * n..(t + 1) * n];
            for (node, o) in row.iter_mut().enumerate() {
                let phi_row = &self.phi[node * r..(node + 1) * r];
                *o = self.mu[node] + c.iter().zip(phi_row).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Ok(out)
    }

    /// Projection of a field onto the modes: `(field_t - mu) phi`.
    pub fn project(&self, field: &[f64]) -> Result<Vec<f64>> {
        if field.len() != self.frames * self.nodes {
            return Err(Error::shape("field does not match decomposition"));
        }
        Ok(project(field, &self.mu, &self.phi, self.frames, self.nodes, self.rank))
    }
}

fn project(field: &[f64], mu: &[f64], phi: &[f64], frames: usize, nodes: usize, r: usize) -> Vec<f64> {
    let mut coeffs = vec![0.0; frames * r];
    for t in 0..frames {
        let c = &mut coeffs[t * r..(t + 1) * r];
        for n in 0..nodes {
            let z = field[t * nodes + n] - mu[n];
            if z == 0.0 {
                continue;
            }
            for (cm, p) in c.iter_mut().zip(&phi[n * r..(n + 1) * r]) {
                *cm += z * p;
            }
        }
    }
    coeffs
}

/// Decompose feature `f` of `x` at truncation rank `r`.
pub fn decompose(x: &RepresentationTensor, f: usize, r: usize) -> Result<ModeDecomposition> {
    decompose_with(x, f, r, SvdRoute::Auto)
}

pub fn decompose_with(
    x: &RepresentationTensor,
    f: usize,
    r: usize,
    route: SvdRoute,
) -> Result<ModeDecomposition> {
    let field = x.feature_field(f)?;
    let mut md = decompose_field(&field, x.frames(), x.nodes(), r, route)?;
    md.feature = f;
    Ok(md)
}

/// Decompose a raw `[frames x nodes]` field.
pub fn decompose_field(
    field: &[f64],
    frames: usize,
    nodes: usize,
    r: usize,
    route: SvdRoute,
) -> Result<ModeDecomposition> {
    if field.len() != frames * nodes {
        return Err(Error::shape("field length does not match frames x nodes"));
    }
    let full = frames.min(nodes);
    if r == 0 || r > full {
        return Err(Error::invalid(format!("rank {r} outside 1..={full}")));
    }
    let mut mu = vec![0.0; nodes];
    for t in 0..frames {
        for n in 0..nodes {
            mu[n] += field[t * nodes + n];
        }
    }
    mu.iter_mut().for_each(|m| *m /= frames as f64);
    let mut z = field.to_vec();
    for t in 0..frames {
        for n in 0..nodes {
            z[t * nodes + n] -= mu[n];
        }
    }
    let route = match route {
        SvdRoute::Auto if full <= GRAM_LIMIT => SvdRoute::Gram,
        SvdRoute::Auto => SvdRoute::Full,
        other => other,
    };
    let (mut phi, singular_values) = match route {
        SvdRoute::Gram => gram_modes(&z, frames, nodes, r)?,
        _ => full_svd_modes(&z, frames, nodes, r)?,
    };
    fix_column_signs(&mut phi, nodes, r);
    let coeffs = project(field, &mu, &phi, frames, nodes, r);
    Ok(ModeDecomposition {
        feature: 0,
        frames,
        nodes,
        rank: r,
        mu,
        phi,
        coeffs,
        singular_values,
    })
}

/// Right singular vectors through the eigen-decomposition of the smaller of
/// `Z Z^T` and `Z^T Z`.
fn gram_modes(z: &[f64], frames: usize, nodes: usize, r: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut phi = vec![0.0; nodes * r];
    let sigma: Vec<f64>;
    if nodes <= frames {
        // Z^T Z is N x N; its eigenvectors are the right singular vectors.
        let mut g = vec![0.0; nodes * nodes];
        for t in 0..frames {
            let row = &z[t * nodes..(t + 1) * nodes];
            for i in 0..nodes {
                let zi = row[i];
                if zi == 0.0 {
                    continue;
                }
                for j in i..nodes {
                    g[i * nodes + j] += zi * row[j];
                }
            }
        }
        symmetrize(&mut g, nodes);
        let (vals, vecs) = symmetric_eigen(&g, nodes)?;
        sigma = vals[..r].iter().map(|v| v.max(0.0).sqrt()).collect();
        for n in 0..nodes {
            for m in 0..r {
                phi[n * r + m] = vecs[n * nodes + m];
            }
        }
    } else {
        // Z Z^T is (H+1) x (H+1); v_m = Z^T u_m / sigma_m.
        let mut g = vec![0.0; frames * frames];
        for i in 0..frames {
            let ri = &z[i * nodes..(i + 1) * nodes];
            for j in i..frames {
                let rj = &z[j * nodes..(j + 1) * nodes];
                g[i * frames + j] = ri.iter().zip(rj).map(|(a, b)| a * b).sum();
            }
        }
        symmetrize(&mut g, frames);
        let (vals, vecs) = symmetric_eigen(&g, frames)?;
        sigma = vals[..r].iter().map(|v| v.max(0.0).sqrt()).collect();
        let floor = sigma[0] * 1e-10;
        for m in 0..r {
            if sigma[m] <= floor || sigma[m] == 0.0 {
                continue; // left zero, completed below
            }
            for t in 0..frames {
                let u = vecs[t * frames + m] / sigma[m];
                if u == 0.0 {
                    continue;
                }
                for n in 0..nodes {
                    phi[n * r + m] += z[t * nodes + n] * u;
                }
            }
        }
    }
    orthonormalize_columns(&mut phi, nodes, r);
    Ok((phi, sigma))
}

fn symmetrize(g: &mut [f64], n: usize) {
    for i in 0..n {
        for j in 0..i {
            g[i * n + j] = g[j * n + i];
        }
    }
}

fn full_svd_modes(z: &[f64], frames: usize, nodes: usize, r: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mat = DMatrix::from_row_slice(frames, nodes, z);
    let svd = mat
        .try_svd(false, true, 1e-15, 10_000)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD returned no right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let mut phi = vec![0.0; nodes * r];
    let mut sigma = Vec::with_capacity(r);
    for (m, &k) in order.iter().take(r).enumerate() {
        sigma.push(svd.singular_values[k]);
        for n in 0..nodes {
            phi[n * r + m] = v_t[(k, n)];
        }
    }
    orthonormalize_columns(&mut phi, nodes, r);
    Ok((phi, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{MapKind, Tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(frames: usize, nodes: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..frames * nodes).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn sq_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
    }

    #[test]
    fn rank_one_field_is_exact_at_r1() {
        let (frames, nodes) = (30, 20);
        let a: Vec<f64> = (0..frames).map(|t| (0.3 * t as f64).sin() + 0.2).collect();
        let s: Vec<f64> = (0..nodes).map(|n| 1.0 + (n as f64 * 0.7).cos()).collect();
        // temporal mean is removed first, so build a rank-1 mean-removed part on top of a mean
        let field: Vec<f64> = (0..frames * nodes)
            .map(|i| a[i / nodes] * s[i % nodes] + 0.5 * s[i % nodes])
            .collect();
        for route in [SvdRoute::Gram, SvdRoute::Full] {
            let md = decompose_field(&field, frames, nodes, 1, route).unwrap();
            let rec = md.reconstruct(&md.coeffs).unwrap();
            assert!(sq_err(&rec, &field).sqrt() < 1e-10, "{route:?}");
        }
    }

    #[test]
    fn full_rank_reconstruction_is_exact() {
        for &(frames, nodes) in &[(12, 30), (30, 12)] {
            let field = random_field(frames, nodes, 2);
            let r = frames.min(nodes);
            for route in [SvdRoute::Gram, SvdRoute::Full] {
                let md = decompose_field(&field, frames, nodes, r, route).unwrap();
                let rec = md.reconstruct(&md.coeffs).unwrap();
                assert!(sq_err(&rec, &field).sqrt() < 1e-10, "{route:?} {frames}x{nodes}");
            }
        }
    }

    #[test]
    fn zero_coeffs_give_mean_and_scaling_is_linear() {
        let field = random_field(10, 15, 3);
        let md = decompose_field(&field, 10, 15, 4, SvdRoute::Auto).unwrap();
        let zero = md.reconstruct(&vec![0.0; 10 * 4]).unwrap();
        for t in 0..10 {
            assert_eq!(&zero[t * 15..(t + 1) * 15], md.mu.as_slice());
        }
        let doubled: Vec<f64> = md.coeffs.iter().map(|c| 2.0 * c).collect();
        let r1 = md.reconstruct(&md.coeffs).unwrap();
        let r2 = md.reconstruct(&doubled).unwrap();
        for i in 0..r1.len() {
            let n = i % 15;
            assert!(((r2[i] - md.mu[n]) - 2.0 * (r1[i] - md.mu[n])).abs() < 1e-12);
        }
    }

    #[test]
    fn invariants_hold() {
        let field = random_field(25, 40, 4);
        let md = decompose_field(&field, 25, 40, 6, SvdRoute::Auto).unwrap();
        let r = 6;
        for a in 0..r {
            for b in 0..r {
                let d: f64 = (0..40).map(|n| md.phi[n * r + a] * md.phi[n * r + b]).sum();
                assert!((d - if a == b { 1.0 } else { 0.0 }).abs() < 1e-9);
            }
            let col: f64 = (0..25).map(|t| md.coeff(t, a).powi(2)).sum::<f64>().sqrt();
            assert!((col - md.singular_values[a]).abs() < 1e-9);
        }
        assert!(md.singular_values.windows(2).all(|w| w[0] >= w[1]));
        // decompose then reconstruct is a projection
        let once = md.reconstruct(&md.coeffs).unwrap();
        let again = md.reconstruct(&md.project(&once).unwrap()).unwrap();
        assert!(sq_err(&once, &again).sqrt() < 1e-10);
    }

    #[test]
    fn out_of_range_rank_rejected() {
        let field = random_field(5, 8, 1);
        assert!(decompose_field(&field, 5, 8, 0, SvdRoute::Auto).is_err());
        assert!(decompose_field(&field, 5, 8, 6, SvdRoute::Auto).is_err());
    }

    #[test]
    fn decompose_reads_feature_slice() {
        let (frames, nodes, d) = (6, 5, 3);
        let data = random_field(frames, nodes * d, 8);
        let x = RepresentationTensor::new(
            Tensor::new(vec![frames, nodes, d], data).unwrap(),
            MapKind::Identity,
        )
        .unwrap();
        let md = decompose(&x, 2, 3).unwrap();
        assert_eq!(md.feature, 2);
        let field = x.feature_field(2).unwrap();
        let direct = decompose_field(&field, frames, nodes, 3, SvdRoute::Auto).unwrap();
        assert_eq!(md.coeffs, direct.coeffs);
        assert!(decompose(&x, 3, 2).is_err());
    }
}
