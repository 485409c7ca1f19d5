use serde::Serialize;

use crate::error::{Error, Result};
use crate::steering::SteeringParams;

use super::{LossBreakdown, OptimizerConfig, SteeringProblem};

#[derive(Debug, Clone, Serialize)]
pub struct OptimizeResult {
    /// Best iterate seen, by total loss.
    pub params: Vec<f64>,
    pub best: LossBreakdown,
    pub best_iter: usize,
    /// Loss at every evaluated iterate, starting with the initial point.
    pub history: Vec<LossBreakdown>,
    pub converged: bool,
    /// Set when a non-finite loss or gradient stopped the loop early.
    pub diverged: Option<String>,
}

impl OptimizeResult {
    pub fn initial(&self) -> &LossBreakdown {
        &self.history[0]
    }

    /// Running minimum of the total loss.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.history
            .iter()
            .map(|l| {
                if l.total < best {
                    best = l.total;
                }
                best
            })
            .collect()
    }
}

/// Adam on a flat parameter vector. `step_scale` multiplies the learning rate
/// per coordinate. `f(x, true)` returns the loss and its gradient.
pub fn optimize_flat<F>(x0: &[f64], step_scale: &[f64], cfg: &OptimizerConfig, mut f: F) -> Result<OptimizeResult>
where
    F: FnMut(&[f64], bool) -> Result<(LossBreakdown, Vec<f64>)>,
{
    cfg.validate()?;
    if step_scale.len() != x0.len() {
        return Err(Error::shape("step_scale length differs from the parameter count"));
    }
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut history = Vec::new();
    let mut best_x = x.clone();
    let mut best: Option<(LossBreakdown, usize)> = None;
    let mut converged = false;
    let mut diverged = None;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    for iter in 0..=cfg.max_iters {
        let (loss, grad) = match f(&x, true) {
            Ok(r) => r,
            Err(Error::Numerical(msg)) => {
                diverged = Some(format!("iteration {iter}: {msg}"));
                break;
            }
            Err(e) => return Err(e),
        };
        if let Some(term) = loss.non_finite_term() {
            diverged = Some(format!("iteration {iter}: loss term {term} is not finite"));
            break;
        }
        history.push(loss);
        if best.map_or(true, |(b, _)| loss.total < b.total) {
            best = Some((loss, iter));
            best_x.copy_from_slice(&x);
        }
        if grad.iter().any(|g| !g.is_finite()) {
            diverged = Some(format!("iteration {iter}: gradient is not finite"));
            break;
        }
        let gmax = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        if gmax < cfg.grad_tol {
            converged = true;
            break;
        }
        if iter == cfg.max_iters {
            break;
        }
        let step = (iter + 1) as i32;
        let (c1, c2) = (1.0 - b1.powi(step), 1.0 - b2.powi(step));
        for k in 0..n {
            m[k] = b1 * m[k] + (1.0 - b1) * grad[k];
            v[k] = b2 * v[k] + (1.0 - b2) * grad[k] * grad[k];
            let mh = m[k] / c1;
            let vh = v[k] / c2;
            x[k] -= cfg.learning_rate * step_scale[k] * mh / (vh.sqrt() + cfg.eps);
        }
    }
    let Some((best, best_iter)) = best else {
        return Err(Error::Numerical(format!(
            "objective is not finite at the initial point ({})",
            diverged.unwrap_or_default()
        )));
    };
    Ok(OptimizeResult {
        params: best_x,
        best,
        best_iter,
        history,
        converged,
        diverged,
    })
}

/// Per-coordinate step scale for the steering layout `[a, b, w...]`: the
/// slope moves the phase at the last frame `H` times as far as the offset, so
/// its step is shrunk by `1/H`.
pub fn steering_step_scale(pairs: usize, k: usize, frames: usize) -> Vec<f64> {
    let slope = 1.0 / (frames.saturating_sub(1).max(1)) as f64;
    (0..pairs)
        .flat_map(|_| std::iter::once(slope).chain(std::iter::repeat(1.0).take(k + 1)))
        .collect()
}

/// Minimize the steering objective from `init`.
///
/// Adam runs on `(a, b + a t_mid)` instead of `(a, b)`, with `t_mid` the
/// middle frame, so the slope and offset directions are decoupled. The
/// returned parameters are in the usual layout.
pub fn optimize(
    problem: &SteeringProblem,
    init: &SteeringParams,
    cfg: &OptimizerConfig,
) -> Result<(SteeringParams, OptimizeResult)> {
    let k = problem.dict().k();
    init.validate(k)?;
    if init.len() != problem.n_pairs() {
        return Err(Error::shape(format!(
            "{} initial parameter sets for {} pairs",
            init.len(),
            problem.n_pairs()
        )));
    }
    let stride = k + 2;
    let t_mid = (problem.dict().frames().saturating_sub(1)) as f64 / 2.0;
    let to_inner = |x: &[f64]| {
        let mut z = x.to_vec();
        for p in z.chunks_exact_mut(stride) {
            p[1] += t_mid * p[0];
        }
        z
    };
    let to_outer = |z: &[f64]| {
        let mut x = z.to_vec();
        for p in x.chunks_exact_mut(stride) {
            p[1] -= t_mid * p[0];
        }
        x
    };
    let scale = steering_step_scale(problem.n_pairs(), k, problem.dict().frames());
    let mut res = optimize_flat(&to_inner(&init.to_vec()), &scale, cfg, |z, want_grad| {
        let (loss, mut g) = problem.evaluate_flat(&to_outer(z), want_grad)?;
        for p in g.chunks_exact_mut(stride) {
            p[0] -= t_mid * p[1];
        }
        Ok((loss, g))
    })?;
    res.params = to_outer(&res.params);
    let params = SteeringParams::from_vec(&res.params, problem.n_pairs(), k)?;
    Ok((params, res))
}
