use nalgebra::DMatrix;

use crate::datamodel::{RepresentationTensor, Tensor, VelocitySequence};
use crate::error::{Error, Result};
use crate::representation::RepresentationMap;
use crate::steering::{pair_offset, rotate_coeffs, steer_representation, CosineDictionary, PairModes, SteeringParams};
use crate::surrogate::FrozenDecoder;

use super::{loss_curv, loss_curv_grad, EditEvaluator, LossBreakdown, LossWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalRoute {
    /// Re-assemble fields and decode every node and frame.
    Dense,
    /// Closed-form quadratic in the mode coefficients; affine decoders only.
    Quadratic,
    /// Quadratic when the decoder is affine, dense otherwise.
    Auto,
}

/// Pieces of the data and magnitude losses as a quadratic form in the
/// coefficient edits `dc_q(t)`, `q = (pair, member, mode)`.
#[derive(Debug, Clone)]
struct Quadratic {
    q: usize,
    g_vel: Vec<f64>,
    g_mag: Vec<f64>,
    /// `[(H+1) x Q]`
    beta: Vec<f64>,
    gamma: Vec<f64>,
    k_vel: f64,
    k_dv: f64,
    k_mag: f64,
}

/// Everything needed to score a set of steering parameters.
#[derive(Debug, Clone)]
pub struct SteeringProblem {
    pairs: Vec<PairModes>,
    dict: CosineDictionary,
    evaluator: EditEvaluator,
    quad: Option<Quadratic>,
    route: EvalRoute,
    frames: usize,
    nodes: usize,
}

impl SteeringProblem {
    pub fn new(
        x: &RepresentationTensor,
        pairs: Vec<PairModes>,
        dict: CosineDictionary,
        map: &RepresentationMap,
        decoder: &FrozenDecoder,
        target: &VelocitySequence,
        weights: LossWeights,
    ) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::invalid("steering needs at least one pair"));
        }
        let r = pairs[0].rank();
        if pairs.iter().any(|p| p.md_i.rank() != r || p.md_j.rank() != r) {
            return Err(Error::shape("all pairs must share the truncation rank"));
        }
        let zero = SteeringParams::zeros(pairs.len(), dict.k());
        let (x0, _) = steer_representation(x, &pairs, &zero, &dict)?;
        let evaluator = EditEvaluator::new(&x0, Some(x), map, decoder, target, weights)?;
        let mut p = Self {
            pairs,
            dict,
            evaluator,
            quad: None,
            route: EvalRoute::Auto,
            frames: x.frames(),
            nodes: x.nodes(),
        };
        if p.evaluator.affine_decoder().is_some() {
            p.quad = Some(p.build_quadratic());
        }
        Ok(p)
    }

    pub fn pairs(&self) -> &[PairModes] {
        &self.pairs
    }

    pub fn dict(&self) -> &CosineDictionary {
        &self.dict
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn n_params(&self) -> usize {
        self.pairs.len() * (self.dict.k() + 2)
    }

    pub fn rank(&self) -> usize {
        self.pairs[0].rank()
    }

    pub fn weights(&self) -> LossWeights {
        self.evaluator.weights()
    }

    pub fn set_weights(&mut self, w: LossWeights) -> Result<()> {
        self.evaluator.set_weights(w)
    }

    pub fn set_route(&mut self, route: EvalRoute) -> Result<()> {
        if route == EvalRoute::Quadratic && self.quad.is_none() {
            return Err(Error::invalid("the quadratic route needs an affine decoder"));
        }
        self.route = route;
        Ok(())
    }

    fn use_quadratic(&self) -> bool {
        match self.route {
            EvalRoute::Dense => false,
            EvalRoute::Quadratic | EvalRoute::Auto => self.quad.is_some(),
        }
    }

    pub fn zero_params(&self) -> SteeringParams {
        SteeringParams::zeros(self.pairs.len(), self.dict.k())
    }

    pub fn evaluate(&self, params: &SteeringParams) -> Result<LossBreakdown> {
        Ok(self.run(params, false)?.0)
    }

    pub fn evaluate_with_grad(&self, params: &SteeringParams) -> Result<(LossBreakdown, Vec<f64>)> {
        self.run(params, true)
    }

    /// Flat-vector entry point used by the optimizer.
    pub fn evaluate_flat(&self, v: &[f64], want_grad: bool) -> Result<(LossBreakdown, Vec<f64>)> {
        let params = SteeringParams::from_vec(v, self.pairs.len(), self.dict.k())?;
        self.run(&params, want_grad)
    }

    /// Decoded velocities under `params`, through the full dense path.
    pub fn steered_velocities(&self, params: &SteeringParams) -> Result<VelocitySequence> {
        let (_, _, edits) = self.coefficient_edits(params)?;
        let fields = self.edit_fields(&edits);
        let refs: Vec<(usize, &[f64])> = fields.iter().map(|(f, v)| (*f, v.as_slice())).collect();
        let u = self.evaluator.velocities(&refs)?;
        VelocitySequence::new(Tensor::new(vec![self.frames, self.nodes, self.evaluator.d_out()], u)?)
    }

    /// Phase trajectories, rotated coefficients and coefficient edits
    /// `C' - C`, one entry per pair member.
    #[allow(clippy::type_complexity)]
    fn coefficient_edits(&self, params: &SteeringParams) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        if params.len() != self.pairs.len() {
            return Err(Error::shape(format!(
                "{} parameter sets for {} pairs",
                params.len(),
                self.pairs.len()
            )));
        }
        params.validate(self.dict.k())?;
        let r = self.rank();
        let mut traj = Vec::with_capacity(self.pairs.len() * self.frames);
        let mut rotated = Vec::with_capacity(2 * self.pairs.len());
        let mut edits = Vec::with_capacity(2 * self.pairs.len());
        for (pm, p) in self.pairs.iter().zip(&params.pairs) {
            let dphi = pair_offset(p, &self.dict);
            let (ci, cj) = rotate_coeffs(&pm.md_i.coeffs, &pm.md_j.coeffs, r, &dphi)?;
            edits.push(ci.iter().zip(&pm.md_i.coeffs).map(|(a, b)| a - b).collect());
            edits.push(cj.iter().zip(&pm.md_j.coeffs).map(|(a, b)| a - b).collect());
            rotated.push(ci);
            rotated.push(cj);
            traj.extend(dphi);
        }
        Ok((traj, rotated, edits))
    }

    fn member(&self, idx: usize) -> (usize, &crate::modes::ModeDecomposition) {
        let pm = &self.pairs[idx / 2];
        if idx % 2 == 0 {
            (pm.i, &pm.md_i)
        } else {
            (pm.j, &pm.md_j)
        }
    }

    /// Field edits `sum_m dC(t,m) phi(n,m)` for every pair member.
    fn edit_fields(&self, edits: &[Vec<f64>]) -> Vec<(usize, Vec<f64>)> {
        let (frames, nodes, r) = (self.frames, self.nodes, self.rank());
        edits
            .iter()
            .enumerate()
            .map(|(idx, dc)| {
                let (f, md) = self.member(idx);
                let mut field = vec![0.0; frames * nodes];
                for t in 0..frames {
                    let c = &dc[t * r..(t + 1) * r];
                    if c.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    for n in 0..nodes {
                        let phi = &md.phi[n * r..(n + 1) * r];
                        field[t * nodes + n] = c.iter().zip(phi).map(|(a, b)| a * b).sum();
                    }
                }
                (f, field)
            })
            .collect()
    }

    fn run(&self, params: &SteeringParams, want_grad: bool) -> Result<(LossBreakdown, Vec<f64>)> {
        let (traj, rotated, edits) = self.coefficient_edits(params)?;
        let curv = loss_curv(&traj, self.frames);
        let (mut loss, coeff_grads) = if self.use_quadratic() {
            self.quadratic_losses(&edits, want_grad)
        } else {
            self.dense_losses(&edits, want_grad)?
        };
        let w = self.evaluator.weights();
        loss = w.combine(loss.vel, loss.dv, curv, loss.mag);
        if let Some(term) = loss.non_finite_term() {
            return Err(Error::Numerical(format!("loss term {term} is not finite")));
        }
        if !want_grad {
            return Ok((loss, Vec::new()));
        }
        let r = self.rank();
        let frames = self.frames;
        let mut g_phi = if w.lambda_phase != 0.0 {
            loss_curv_grad(&traj, frames)
                .into_iter()
                .map(|g| w.lambda_phase * g)
                .collect()
        } else {
            vec![0.0; traj.len()]
        };
        for k in 0..self.pairs.len() {
            let (ci, cj) = (&rotated[2 * k], &rotated[2 * k + 1]);
            let (gi, gj) = (&coeff_grads[2 * k], &coeff_grads[2 * k + 1]);
            for t in 0..frames {
                let mut acc = 0.0;
                for m in t * r..(t + 1) * r {
                    acc += gj[m] * ci[m] - gi[m] * cj[m];
                }
                g_phi[k * frames + t] += acc;
            }
        }
        let kb = self.dict.k();
        let mut grad = vec![0.0; self.n_params()];
        for k in 0..self.pairs.len() {
            let g = &g_phi[k * frames..(k + 1) * frames];
            let out = &mut grad[k * (kb + 2)..(k + 1) * (kb + 2)];
            for (t, &gt) in g.iter().enumerate() {
                out[0] += t as f64 * gt;
                out[1] += gt;
                for m in 0..kb {
                    out[2 + m] += self.dict.get(t, m) * gt;
                }
            }
        }
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("gradient is not finite".into()));
        }
        Ok((loss, grad))
    }

    fn dense_losses(&self, edits: &[Vec<f64>], want_grad: bool) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
        let fields = self.edit_fields(edits);
        let refs: Vec<(usize, &[f64])> = fields.iter().map(|(f, v)| (*f, v.as_slice())).collect();
        let (loss, field_grads) = self.evaluator.evaluate(&refs, want_grad)?;
        if !want_grad {
            return Ok((loss, Vec::new()));
        }
        let (frames, nodes, r) = (self.frames, self.nodes, self.rank());
        let grads = field_grads
            .iter()
            .enumerate()
            .map(|(idx, gf)| {
                let (_, md) = self.member(idx);
                let mut gc = vec![0.0; frames * r];
                for t in 0..frames {
                    let out = &mut gc[t * r..(t + 1) * r];
                    for n in 0..nodes {
                        let g = gf[t * nodes + n];
                        if g == 0.0 {
                            continue;
                        }
                        for (o, p) in out.iter_mut().zip(&md.phi[n * r..(n + 1) * r]) {
                            *o += g * p;
                        }
                    }
                }
                gc
            })
            .collect();
        Ok((loss, grads))
    }

    fn build_quadratic(&self) -> Quadratic {
        let ev = &self.evaluator;
        let (frames, nodes, r) = (self.frames, self.nodes, self.rank());
        let (c, d) = (ev.d_out(), ev.d_emb());
        let members = 2 * self.pairs.len();
        let q = members * r;
        let mut phi_all = DMatrix::zeros(nodes, q);
        let mut vload = Vec::with_capacity(members);
        let mut aload = Vec::with_capacity(members);
        for idx in 0..members {
            let (f, md) = self.member(idx);
            for n in 0..nodes {
                for m in 0..r {
                    phi_all[(n, idx * r + m)] = md.phi[n * r + m];
                }
            }
            vload.push(ev.velocity_loading(f).expect("affine decoder"));
            aload.push(ev.loading(f).to_vec());
        }
        let s = phi_all.transpose() * &phi_all;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut g_vel = vec![0.0; q * q];
        let mut g_mag = vec![0.0; q * q];
        for a in 0..q {
            for b in 0..q {
                let (ma, mb) = (a / r, b / r);
                g_vel[a * q + b] = s[(a, b)] * dot(&vload[ma], &vload[mb]);
                g_mag[a * q + b] = s[(a, b)] * dot(&aload[ma], &aload[mb]);
            }
        }
        let resid: Vec<f64> = ev.u_base().iter().zip(ev.target()).map(|(u, t)| u - t).collect();
        let k_vel = resid.iter().map(|v| v * v).sum();
        let stride = nodes * c;
        let mut k_dv = 0.0;
        for t in 0..frames - 1 {
            for k in 0..stride {
                let dr = resid[(t + 1) * stride + k] - resid[t * stride + k];
                k_dv += dr * dr;
            }
        }
        // beta[t][q] = sum_n phi_q(n) (R(t,n) . v_f)
        let mut beta = vec![0.0; frames * q];
        let mut gamma = vec![0.0; frames * q];
        let offset = ev.mag_offset();
        let k_mag = offset.map_or(0.0, |o| o.iter().map(|v| v * v).sum());
        for idx in 0..members {
            let (_, md) = self.member(idx);
            let v = &vload[idx];
            let a = &aload[idx];
            for t in 0..frames {
                for n in 0..nodes {
                    let cell = t * nodes + n;
                    let rv = dot(&resid[cell * c..(cell + 1) * c], v);
                    let ra = offset.map_or(0.0, |o| dot(&o[cell * d..(cell + 1) * d], a));
                    let phi = &md.phi[n * r..(n + 1) * r];
                    for m in 0..r {
                        beta[t * q + idx * r + m] += phi[m] * rv;
                        gamma[t * q + idx * r + m] += phi[m] * ra;
                    }
                }
            }
        }
        Quadratic {
            q,
            g_vel,
            g_mag,
            beta,
            gamma,
            k_vel,
            k_dv,
            k_mag,
        }
    }

    fn quadratic_losses(&self, edits: &[Vec<f64>], want_grad: bool) -> (LossBreakdown, Vec<Vec<f64>>) {
        let qd = self.quad.as_ref().expect("quadratic route prepared");
        let (frames, nodes, r, q) = (self.frames, self.nodes, self.rank(), qd.q);
        let d = self.evaluator.d_emb();
        // dc[t][q]
        let mut dc = vec![0.0; frames * q];
        for (idx, e) in edits.iter().enumerate() {
            for t in 0..frames {
                dc[t * q + idx * r..t * q + (idx + 1) * r].copy_from_slice(&e[t * r..(t + 1) * r]);
            }
        }
        let matvec = |g: &[f64], x: &[f64]| -> Vec<f64> {
            (0..q)
                .map(|a| g[a * q..(a + 1) * q].iter().zip(x).map(|(u, v)| u * v).sum())
                .collect()
        };
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut vel = qd.k_vel;
        let mut mag = qd.k_mag;
        let mut gv_all = Vec::with_capacity(frames);
        let mut gm_all = Vec::with_capacity(frames);
        for t in 0..frames {
            let x = &dc[t * q..(t + 1) * q];
            let gv = matvec(&qd.g_vel, x);
            let gm = matvec(&qd.g_mag, x);
            vel += 2.0 * dot(&qd.beta[t * q..(t + 1) * q], x) + dot(x, &gv);
            mag += 2.0 * dot(&qd.gamma[t * q..(t + 1) * q], x) + dot(x, &gm);
            gv_all.push(gv);
            gm_all.push(gm);
        }
        let mut dv = qd.k_dv;
        let mut ddc_g = Vec::with_capacity(frames - 1);
        for t in 0..frames - 1 {
            let ddc: Vec<f64> = (0..q).map(|a| dc[(t + 1) * q + a] - dc[t * q + a]).collect();
            // G (dc(t+1) - dc(t)) from the per-frame products
            let gdd: Vec<f64> = (0..q).map(|a| gv_all[t + 1][a] - gv_all[t][a]).collect();
            let dbeta: Vec<f64> = (0..q)
                .map(|a| qd.beta[(t + 1) * q + a] - qd.beta[t * q + a])
                .collect();
            dv += 2.0 * dot(&dbeta, &ddc) + dot(&ddc, &gdd);
            ddc_g.push((dbeta, gdd));
        }
        let n_vel = (frames * nodes) as f64;
        let n_dv = ((frames - 1) * nodes) as f64;
        let n_mag = (frames * nodes * d) as f64;
        let loss = LossBreakdown {
            total: 0.0,
            vel: vel.max(0.0) / n_vel,
            dv: dv.max(0.0) / n_dv,
            curv: 0.0,
            mag: mag.max(0.0) / n_mag,
        };
        if !want_grad {
            return (loss, Vec::new());
        }
        let w = self.evaluator.weights();
        let (sv, sd, sm) = (
            2.0 * w.lambda_vel / n_vel,
            2.0 * w.lambda_dv / n_dv,
            2.0 * w.lambda_mag / n_mag,
        );
        let mut g = vec![0.0; frames * q];
        for t in 0..frames {
            for a in 0..q {
                g[t * q + a] = sv * (qd.beta[t * q + a] + gv_all[t][a]) + sm * (qd.gamma[t * q + a] + gm_all[t][a]);
            }
        }
        for (t, (dbeta, gdd)) in ddc_g.iter().enumerate() {
            for a in 0..q {
                let y = sd * (dbeta[a] + gdd[a]);
                g[(t + 1) * q + a] += y;
                g[t * q + a] -= y;
            }
        }
        let grads = (0..edits.len())
            .map(|idx| {
                let mut out = vec![0.0; frames * r];
                for t in 0..frames {
                    out[t * r..(t + 1) * r].copy_from_slice(&g[t * q + idx * r..t * q + (idx + 1) * r]);
                }
                out
            })
            .collect();
        (loss, grads)
    }
}
