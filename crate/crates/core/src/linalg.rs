//! Small dense linear-algebra kernels on row-major `Vec<f64>` matrices.

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// the columns of a row-major `n x n` matrix.
pub fn symmetric_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != n * n {
        return Err(Error::shape(format!("expected {n}x{n} matrix, got {} entries", a.len())));
    }
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        return Ok((vec![0.0; n], v));
    }
    const MAX_SWEEPS: usize = 60;
    for sweep in 0..=MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        if sweep == MAX_SWEEPS {
            return Err(Error::Numerical(format!(
                "Jacobi eigensolver did not converge (off-diagonal norm {off:e})"
            )));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]).then(i.cmp(&j)));
    let values: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors[row * n + col] = v[row * n + src];
        }
    }
    Ok((values, vectors))
}

/// Flip each column so its largest-magnitude entry is positive (ties go to
/// the first index).
pub fn fix_column_signs(mat: &mut [f64], rows: usize, cols: usize) {
    for c in 0..cols {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for r in 0..rows {
            let a = mat[r * cols + c].abs();
            if a > best_abs {
                best_abs = a;
                best = r;
            }
        }
        if mat[best * cols + c] < 0.0 {
            for r in 0..rows {
                mat[r * cols + c] = -mat[r * cols + c];
            }
        }
    }
}

/// Modified Gram-Schmidt on the columns of a row-major `rows x cols` matrix.
///
/// Columns that collapse numerically are replaced by the first canonical
/// basis vector that survives orthogonalisation, so the output always has
/// orthonormal columns.
pub fn orthonormalize_columns(mat: &mut [f64], rows: usize, cols: usize) {
    let mut next_basis = 0usize;
    for c in 0..cols {
        let original: f64 = (0..rows).map(|r| mat[r * cols + c].powi(2)).sum::<f64>().sqrt();
        project_out(mat, rows, cols, c);
        let mut norm = col_norm(mat, rows, cols, c);
        if norm <= 1e-8 * original.max(1e-300) || norm == 0.0 {
            loop {
                assert!(next_basis < rows, "cannot complete an orthonormal basis");
                for r in 0..rows {
                    mat[r * cols + c] = if r == next_basis { 1.0 } else { 0.0 };
                }
                next_basis += 1;
                project_out(mat, rows, cols, c);
                project_out(mat, rows, cols, c);
                norm = col_norm(mat, rows, cols, c);
                if norm > 1e-6 {
                    break;
                }
            }
        }
        for r in 0..rows {
            mat[r * cols + c] /= norm;
        }
    }
}

fn col_norm(mat: &[f64], rows: usize, cols: usize, c: usize) -> f64 {
    (0..rows).map(|r| mat[r * cols + c].powi(2)).sum::<f64>().sqrt()
}

fn project_out(mat: &mut [f64], rows: usize, cols: usize, c: usize) {
    for prev in 0..c {
        let dot: f64 = (0..rows).map(|r| mat[r * cols + c] * mat[r * cols + prev]).sum();
        for r in 0..rows {
            mat[r * cols + c] -= dot * mat[r * cols + prev];
        }
    }
}

/// `a [m x k] * b [k x n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += aip * bv;
            }
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn jacobi_reconstructs_random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 12;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rng.gen_range(-1.0..1.0);
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        let (vals, vecs) = symmetric_eigen(&a, n).unwrap();
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        for i in 0..n {
            for j in 0..n {
                let rec: f64 = (0..n).map(|k| vecs[i * n + k] * vals[k] * vecs[j * n + k]).sum();
                assert!((rec - a[i * n + j]).abs() < 1e-12);
                let ortho: f64 = (0..n).map(|k| vecs[k * n + i] * vecs[k * n + j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((ortho - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_schmidt_completes_degenerate_columns() {
        // second column duplicates the first
        let mut m = vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        orthonormalize_columns(&mut m, 3, 2);
        let c0 = [m[0], m[2], m[4]];
        let c1 = [m[1], m[3], m[5]];
        assert!((dot(&c0, &c0) - 1.0).abs() < 1e-14);
        assert!((dot(&c1, &c1) - 1.0).abs() < 1e-14);
        assert!(dot(&c0, &c1).abs() < 1e-14);
    }

    #[test]
    fn sign_fix_makes_largest_entry_positive() {
        let mut m = vec![0.5, -0.1, -0.9, 0.3];
        fix_column_signs(&mut m, 2, 2);
        assert_eq!(m, vec![-0.5, -0.1, 0.9, 0.3]);
    }
}
