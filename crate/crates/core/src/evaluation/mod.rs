//! Correction metrics and the static-intervention baselines.
//!
//! `frac% = (1 - MSE(steer, target) / MSE(orig, target)) * 100` on the
//! x-velocity, optionally restricted to a node mask.

mod baselines;

pub use baselines::{
    apply_static, optimize_static, select_static_features, spectral_concentration, static_velocities,
    StaticIntervention, StaticKind, MAX_STATIC_FEATURES,
};

use serde::Serialize;

use crate::datamodel::{roi_mask, MeshGeometry, VelocitySequence};
use crate::error::{Error, Result};

fn check_fields(nodes: usize, fields: &[&[f64]], mask: Option<&[bool]>) -> Result<()> {
    let len = fields[0].len();
    if nodes == 0 || len == 0 || len % nodes != 0 {
        return Err(Error::shape(format!("field of {len} values is not frames x {nodes} nodes")));
    }
    if fields.iter().any(|f| f.len() != len) {
        return Err(Error::shape("fields differ in length"));
    }
    if let Some(m) = mask {
        if m.len() != nodes {
            return Err(Error::shape(format!("mask has {} entries for {nodes} nodes", m.len())));
        }
    }
    Ok(())
}

fn masked_sse(a: &[f64], b: &[f64], nodes: usize, mask: Option<&[bool]>) -> f64 {
    a.iter()
        .zip(b)
        .enumerate()
        .filter(|(k, _)| mask.map_or(true, |m| m[k % nodes]))
        .map(|(_, (x, y))| (x - y) * (x - y))
        .sum()
}

/// Share of the original-to-target error removed by the steered field, in
/// percent. Fields are row-major `[frames x nodes]` scalars.
pub fn frac_pct(
    v_steer: &[f64],
    v_orig: &[f64],
    v_target: &[f64],
    nodes: usize,
    mask: Option<&[bool]>,
) -> Result<f64> {
    check_fields(nodes, &[v_steer, v_orig, v_target], mask)?;
    if mask.is_some_and(|m| !m.iter().any(|v| *v)) {
        return Err(Error::Degenerate("node mask selects no nodes".into()));
    }
    // the sample count cancels in the ratio
    let denom = masked_sse(v_orig, v_target, nodes, mask);
    if denom <= 0.0 {
        return Err(Error::Degenerate(
            "original equals target on the evaluated nodes; frac% is undefined".into(),
        ));
    }
    Ok((1.0 - masked_sse(v_steer, v_target, nodes, mask) / denom) * 100.0)
}

/// frac% of every node over all frames; `None` where the node's original
/// already equals the target.
pub fn per_node_frac(v_steer: &[f64], v_orig: &[f64], v_target: &[f64], nodes: usize) -> Result<Vec<Option<f64>>> {
    check_fields(nodes, &[v_steer, v_orig, v_target], None)?;
    let mut num = vec![0.0; nodes];
    let mut den = vec![0.0; nodes];
    for (k, ((s, o), t)) in v_steer.iter().zip(v_orig).zip(v_target).enumerate() {
        num[k % nodes] += (s - t) * (s - t);
        den[k % nodes] += (o - t) * (o - t);
    }
    Ok(num
        .iter()
        .zip(&den)
        .map(|(n, d)| (*d > 0.0).then(|| (1.0 - n / d) * 100.0))
        .collect())
}

/// RMS of the error over the RMS of the target.
pub fn nrmse(v_steer: &[f64], v_target: &[f64]) -> Result<f64> {
    if v_steer.len() != v_target.len() || v_steer.is_empty() {
        return Err(Error::shape("nrmse needs two non-empty fields of equal length"));
    }
    let t2: f64 = v_target.iter().map(|v| v * v).sum();
    if t2 <= 0.0 {
        return Err(Error::Degenerate("target RMS is zero".into()));
    }
    let e2: f64 = v_steer.iter().zip(v_target).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((e2 / t2).sqrt())
}

/// Pearson correlation of two flattened fields.
pub fn corr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::shape("correlation needs two fields of equal length >= 2"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(Error::Degenerate("correlation of a constant field".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub frac_pct_vx: f64,
    pub roi_pct_vx: f64,
    pub nrmse_vx: f64,
    pub corr_vxvy: f64,
    pub per_node_frac: Vec<Option<f64>>,
    pub fingerprint: String,
}

impl MetricsReport {
    /// Metrics of `steer` against `target`, relative to `orig`, with the ROI
    /// taken from the mesh geometry.
    pub fn compute(
        steer: &VelocitySequence,
        orig: &VelocitySequence,
        target: &VelocitySequence,
        geometry: &MeshGeometry,
        fingerprint: impl Into<String>,
    ) -> Result<Self> {
        steer.same_shape(target)?;
        orig.same_shape(target)?;
        if geometry.nodes() != target.nodes() {
            return Err(Error::shape(format!(
                "geometry has {} nodes, fields have {}",
                geometry.nodes(),
                target.nodes()
            )));
        }
        let nodes = target.nodes();
        let (s, o, t) = (steer.component(0), orig.component(0), target.component(0));
        let mask = roi_mask(geometry);
        Ok(Self {
            frac_pct_vx: frac_pct(&s, &o, &t, nodes, None)?,
            roi_pct_vx: frac_pct(&s, &o, &t, nodes, Some(&mask))?,
            nrmse_vx: nrmse(&s, &t)?,
            corr_vxvy: corr(steer.values().data(), target.values().data())?,
            per_node_frac: per_node_frac(&s, &o, &t, nodes)?,
            fingerprint: fingerprint.into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frac_examples() {
        let t = [1.0, 2.0, 3.0, 4.0];
        let o = [0.0, 0.0, 0.0, 0.0];
        assert_eq!(frac_pct(&t, &o, &t, 2, None).unwrap(), 100.0);
        assert_eq!(frac_pct(&o, &o, &t, 2, None).unwrap(), 0.0);
        // twice the original squared error
        let s: Vec<f64> = t.iter().map(|v| v - v * 2f64.sqrt()).collect();
        assert!((frac_pct(&s, &o, &t, 2, None).unwrap() + 100.0).abs() < 1e-12);
        assert!(matches!(frac_pct(&t, &t, &t, 2, None), Err(Error::Degenerate(_))));
        let mask = [true, false];
        let s2 = [1.0, 9.0, 3.0, 9.0];
        assert_eq!(frac_pct(&s2, &o, &t, 2, Some(&mask)).unwrap(), 100.0);
        assert!(frac_pct(&s2, &o, &t, 2, Some(&[false, false])).is_err());
    }

    #[test]
    fn nrmse_and_corr_examples() {
        let t = [1.0, -2.0, 0.5];
        assert_eq!(nrmse(&t, &t).unwrap(), 0.0);
        let twice: Vec<f64> = t.iter().map(|v| 2.0 * v).collect();
        assert!((nrmse(&twice, &t).unwrap() - 1.0).abs() < 1e-15);
        assert!(nrmse(&t, &[0.0; 3]).is_err());
        assert!((corr(&t, &t).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = t.iter().map(|v| -v).collect();
        assert!((corr(&t, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(corr(&t, &[1.0; 3]).is_err());
    }

    #[test]
    fn per_node_examples() {
        let t = [1.0, 0.0, 1.0, 0.0];
        let o = [0.0; 4];
        let s = [0.5, 3.0, 0.5, 0.0];
        let p = per_node_frac(&s, &o, &t, 2).unwrap();
        assert_eq!(p, vec![Some(75.0), None]);
    }
}
