use nalgebra::{DMatrix, DVector};

use crate::datamodel::Tensor;
use crate::error::{Error, Result};
use crate::linalg::fix_column_signs;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// `[d_emb x D_pca]`, orthonormal columns.
    pub components: DMatrix<f64>,
    /// Per-component sample variance, descending.
    pub explained_variance: DVector<f64>,
}

impl PcaModel {
    pub fn d_emb(&self) -> usize {
        self.components.nrows()
    }

    pub fn width(&self) -> usize {
        self.components.ncols()
    }

    pub fn project_matrix(&self, h: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = h.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        centered * &self.components
    }

    pub fn reconstruct_matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x * self.components.transpose();
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        out
    }

    /// Explained variance ratios over the total sample variance seen at fit time.
    pub fn explained_ratio(&self, total_variance: f64) -> Vec<f64> {
        self.explained_variance.iter().map(|v| v / total_variance).collect()
    }
}

/// Mean-centered SVD fit keeping the top `d_pca` right singular vectors.
pub fn pca_fit(samples: &Tensor, d_pca: usize) -> Result<PcaModel> {
    if samples.rank() != 2 {
        return Err(Error::shape("PCA samples must be [M x d_emb]"));
    }
    let (m, d) = (samples.dims()[0], samples.dims()[1]);
    if d_pca == 0 || d_pca > m.min(d) {
        return Err(Error::invalid(format!(
            "D_pca = {d_pca} outside 1..={}",
            m.min(d)
        )));
    }
    let mut z = DMatrix::from_row_slice(m, d, samples.data());
    let mean = z.row_mean().transpose();
    for mut row in z.row_iter_mut() {
        row -= mean.transpose();
    }
    let svd = z
        .try_svd(false, true, 1e-15, 10_000)
        .ok_or_else(|| Error::Numerical("PCA SVD did not converge".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("PCA SVD returned no right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let denom = (m.max(2) - 1) as f64;
    let mut comp = vec![0.0; d * d_pca];
    let mut var = Vec::with_capacity(d_pca);
    for (c, &k) in order.iter().take(d_pca).enumerate() {
        var.push(svd.singular_values[k].powi(2) / denom);
        for row in 0..d {
            comp[row * d_pca + c] = v_t[(k, row)];
        }
    }
    // thin SVD of a wide matrix yields fewer than d right vectors; complete the basis
    crate::linalg::orthonormalize_columns(&mut comp, d, d_pca);
    fix_column_signs(&mut comp, d, d_pca);
    Ok(PcaModel {
        mean,
        components: DMatrix::from_row_slice(d, d_pca, &comp),
        explained_variance: DVector::from_vec(var),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_in_three_d() {
        let dir = [1.0, 2.0, -2.0];
        let data: Vec<f64> = (0..20)
            .flat_map(|i| {
                let s = i as f64 * 0.1 - 1.0;
                dir.map(|v| 0.5 + v * s)
            })
            .collect();
        let p = pca_fit(&Tensor::new(vec![20, 3], data).unwrap(), 1).unwrap();
        let c = p.components.column(0);
        // sign convention puts the largest-magnitude entry positive; ties keep the first
        let expect = [1.0 / 3.0, 2.0 / 3.0, -2.0 / 3.0];
        let flip = if c[1] > 0.0 { 1.0 } else { -1.0 };
        for k in 0..3 {
            assert!((c[k] - flip * expect[k]).abs() < 1e-12);
        }
        assert!(c.iter().fold(0.0f64, |a, v| if v.abs() > a.abs() { *v } else { a }) > 0.0);
    }

    #[test]
    fn d_pca_range() {
        let s = Tensor::new(vec![4, 3], vec![1.0; 12]).unwrap();
        assert!(pca_fit(&s, 0).is_err());
        assert!(pca_fit(&s, 4).is_err());
    }
}
