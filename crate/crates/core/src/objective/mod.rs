//! Composite steering loss, its gradient, and the Adam loop.
//!
//! `L = l_vel L_vel + l_dv L_dv + l_phase L_curv + l_mag L_mag` where
//!
//! * `L_vel  = 1/((H+1)N) sum_t,n |U'_tn - T_tn|^2`
//! * `L_dv   = 1/(H N) sum_t<H,n |(U'_t+1 - U'_t) - (T_t+1 - T_t)|^2`
//! * `L_curv = 1/(P(H-1)) sum_k,t (dphi_k(t) - 2 dphi_k(t+1) + dphi_k(t+2))^2`
//! * `L_mag  = 1/((H+1) N d_emb) sum |g^-1(X') - g^-1(X)|^2`

mod adam;
mod evaluator;
mod problem;

pub use adam::{optimize, optimize_flat, steering_step_scale, OptimizeResult};
pub use evaluator::EditEvaluator;
pub use problem::{EvalRoute, SteeringProblem};

use serde::{Deserialize, Serialize};

use crate::datamodel::{RepresentationTensor, VelocitySequence};
use crate::error::{Error, Result};
use crate::representation::RepresentationMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_vel: f64,
    pub lambda_dv: f64,
    pub lambda_phase: f64,
    pub lambda_mag: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_vel: 1.0,
            lambda_dv: 0.5,
            lambda_phase: 1e-2,
            lambda_mag: 1e-3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_vel, self.lambda_dv, self.lambda_phase, self.lambda_mag];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        if self.lambda_vel <= 0.0 && self.lambda_dv <= 0.0 {
            return Err(Error::Config(
                "lambda_vel or lambda_dv must be positive for a data term".into(),
            ));
        }
        Ok(())
    }

    pub fn combine(&self, vel: f64, dv: f64, curv: f64, mag: f64) -> LossBreakdown {
        LossBreakdown {
            total: self.lambda_vel * vel + self.lambda_dv * dv + self.lambda_phase * curv + self.lambda_mag * mag,
            vel,
            dv,
            curv,
            mag,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub vel: f64,
    pub dv: f64,
    pub curv: f64,
    pub mag: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.total, self.vel, self.dv, self.curv, self.mag]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("vel", self.vel),
            ("dv", self.dv),
            ("curv", self.curv),
            ("mag", self.mag),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_iters: 500,
            grad_tol: 1e-7,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in (0, 1)".into()));
        }
        if !(self.eps > 0.0) || !(self.grad_tol >= 0.0) {
            return Err(Error::Config("eps must be > 0 and grad_tol >= 0".into()));
        }
        Ok(())
    }
}

pub(crate) fn sq_diff_sum(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sum over `t < H` and nodes of the squared difference of frame differences.
pub(crate) fn dv_sum(u: &[f64], target: &[f64], frames: usize) -> f64 {
    let stride = u.len() / frames;
    let mut acc = 0.0;
    for t in 0..frames - 1 {
        let (a0, a1) = (t * stride, (t + 1) * stride);
        for k in 0..stride {
            let d = (u[a1 + k] - u[a0 + k]) - (target[a1 + k] - target[a0 + k]);
            acc += d * d;
        }
    }
    acc
}

pub fn loss_vel(u_steer: &VelocitySequence, u_target: &VelocitySequence) -> Result<f64> {
    u_steer.same_shape(u_target)?;
    let n = (u_steer.frames() * u_steer.nodes()) as f64;
    Ok(sq_diff_sum(u_steer.values().data(), u_target.values().data()) / n)
}

pub fn loss_dv(u_steer: &VelocitySequence, u_target: &VelocitySequence) -> Result<f64> {
    u_steer.same_shape(u_target)?;
    let frames = u_steer.frames();
    if frames < 2 {
        return Err(Error::shape("temporal differences need at least two frames"));
    }
    let n = ((frames - 1) * u_steer.nodes()) as f64;
    Ok(dv_sum(u_steer.values().data(), u_target.values().data(), frames) / n)
}

/// Mean squared second difference of row-major `[P x (H+1)]` trajectories.
pub fn loss_curv(trajectories: &[f64], frames: usize) -> f64 {
    if frames < 3 || trajectories.is_empty() {
        return 0.0;
    }
    let p = trajectories.len() / frames;
    let mut acc = 0.0;
    for row in trajectories.chunks_exact(frames) {
        for w in row.windows(3) {
            let c = w[0] - 2.0 * w[1] + w[2];
            acc += c * c;
        }
    }
    acc / (p * (frames - 2)) as f64
}

/// Gradient of `loss_curv` with respect to every trajectory entry.
pub(crate) fn loss_curv_grad(trajectories: &[f64], frames: usize) -> Vec<f64> {
    let mut g = vec![0.0; trajectories.len()];
    if frames < 3 || trajectories.is_empty() {
        return g;
    }
    let p = trajectories.len() / frames;
    let scale = 2.0 / (p * (frames - 2)) as f64;
    for (row, grow) in trajectories.chunks_exact(frames).zip(g.chunks_exact_mut(frames)) {
        for t in 0..frames - 2 {
            let c = scale * (row[t] - 2.0 * row[t + 1] + row[t + 2]);
            grow[t] += c;
            grow[t + 1] -= 2.0 * c;
            grow[t + 2] += c;
        }
    }
    g
}

pub fn loss_mag(x_prime: &RepresentationTensor, x: &RepresentationTensor, map: &RepresentationMap) -> Result<f64> {
    if x_prime.values().dims() != x.values().dims() {
        return Err(Error::shape(format!(
            "representation shapes differ: {:?} vs {:?}",
            x_prime.values().dims(),
            x.values().dims()
        )));
    }
    let a = map.inverse_values(x_prime)?;
    let b = map.inverse_values(x)?;
    Ok(sq_diff_sum(a.data(), b.data()) / a.len() as f64)
}
