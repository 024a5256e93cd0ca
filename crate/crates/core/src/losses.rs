//! Center, geometry and motion objectives and their weighted total.

use ndarray::Ix2;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Tensor, Var};
use crate::diffusion::{forward_sample, DiffusionSchedule, StratifiedDraw};
use crate::error::{DimpError, Result};
use crate::model::ModelState;

/// Scalar losses of one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_cen: f64,
    pub l_geo: f64,
    pub l_mot: f64,
    pub l_total: f64,
    pub per_interval_mot: Vec<f64>,
    /// Center step of the first sample in the batch.
    pub t_c: usize,
    /// Motion steps of the first sample in the batch.
    pub t_motion: Vec<usize>,
}

impl LossReport {
    /// Relative gap between `l_total` and its weighted decomposition.
    pub fn decomposition_error(&self, gamma_cen: f64, lambda_mot: f64) -> f64 {
        let want = self.l_geo + gamma_cen * self.l_cen + lambda_mot * self.l_mot;
        (self.l_total - want).abs() / want.abs().max(f64::MIN_POSITIVE)
    }
}

/// Identity forward, zero gradient backward.
pub fn stop_gradient(g: &mut Graph, x: Var) -> Var {
    g.stop_gradient(x)
}

fn same_shape(g: &Graph, a: Var, b: Var) -> Result<()> {
    if g.value(a).dim() != g.value(b).dim() {
        return Err(DimpError::ShapeMismatch {
            expected: g.value(b).shape().to_vec(),
            got: g.value(a).shape().to_vec(),
        });
    }
    Ok(())
}

/// Squared Euclidean error per tube, averaged over tubes.
pub fn loss_center(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    same_shape(g, pred, target)?;
    let k = g.value(pred).nrows();
    if k == 0 {
        return Err(DimpError::invalid("center loss over zero tubes"));
    }
    let diff = g.sub(pred, target);
    let sq = g.square(diff);
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / k as f64))
}

/// Chamfer distance per tube and frame between flattened relative tube
/// contents (`K_m x frames*n_pts*3`), averaged over frames then tubes.
pub fn loss_geo(g: &mut Graph, pred: Var, target: Var, frames: usize, n_pts: usize) -> Result<Var> {
    same_shape(g, pred, target)?;
    let (k, w) = g.value(pred).dim();
    if w != frames * n_pts * 3 || k == 0 {
        return Err(DimpError::ShapeMismatch {
            expected: vec![k.max(1), frames * n_pts * 3],
            got: vec![k, w],
        });
    }
    let p = g.reshape(pred, k * frames * n_pts, 3);
    let t = g.reshape(target, k * frames * n_pts, 3);
    let mut terms = Vec::with_capacity(k * frames);
    for block in 0..k * frames {
        let (a, b) = (block * n_pts, (block + 1) * n_pts);
        let ps = g.slice_rows(p, a, b);
        let ts = g.slice_rows(t, a, b);
        terms.push(g.chamfer(ps, ts));
    }
    let all = g.concat_rows(&terms);
    Ok(g.mean(all))
}

/// Stratified DDPM objective with an arbitrary noise predictor
/// `head(graph, m_t, t)`. Returns the mean and the per-interval terms.
pub fn loss_motion_with<F>(
    g: &mut Graph,
    m0: &Tensor,
    draw: &StratifiedDraw,
    sched: &DiffusionSchedule,
    mut head: F,
) -> Result<(Var, Vec<Var>)>
where
    F: FnMut(&mut Graph, Var, usize) -> Result<Var>,
{
    if draw.is_empty() {
        return Err(DimpError::invalid("empty stratified draw"));
    }
    let mut terms = Vec::with_capacity(draw.len());
    for (&t, noise) in draw.timesteps.iter().zip(&draw.noises) {
        let eps = noise
            .view()
            .into_dimensionality::<Ix2>()
            .map_err(|_| DimpError::ShapeMismatch {
                expected: m0.shape().to_vec(),
                got: noise.shape().to_vec(),
            })?
            .to_owned();
        let m_t = forward_sample(m0, t, &eps, sched)?;
        let m_t = g.constant(m_t);
        let eps_hat = head(g, m_t, t)?;
        let eps = g.constant(eps);
        same_shape(g, eps_hat, eps)?;
        let diff = g.sub(eps, eps_hat);
        let sq = g.square(diff);
        terms.push(g.mean(sq));
    }
    let all = g.concat_rows(&terms);
    let mean = g.mean(all);
    Ok((mean, terms))
}

/// [`loss_motion_with`] using the model's motion head conditioned on `z_dec`.
pub fn loss_motion(
    g: &mut Graph,
    state: &ModelState,
    m0: &Tensor,
    z_dec: Var,
    draw: &StratifiedDraw,
    sched: &DiffusionSchedule,
) -> Result<(Var, Vec<Var>)> {
    loss_motion_with(g, m0, draw, sched, |g, m_t, t| state.motion_noise_head(g, m_t, t, z_dec))
}

/// Deterministic baseline: the head sees an all-zero field at `t = T` and
/// its output is regressed straight onto `M0`.
pub fn loss_motion_regression(
    g: &mut Graph,
    state: &ModelState,
    m0: &Tensor,
    z_dec: Var,
) -> Result<Var> {
    let zeros = g.constant(Tensor::zeros(m0.raw_dim()));
    let pred = state.motion_noise_head(g, zeros, state.config().motion_steps, z_dec)?;
    let target = g.constant(m0.clone());
    let diff = g.sub(pred, target);
    let sq = g.square(diff);
    Ok(g.mean(sq))
}

/// Regression estimate of `M0` used for sampling under the deterministic
/// baseline.
pub fn regress_motion(g: &mut Graph, state: &ModelState, shape: (usize, usize), z_dec: Var) -> Result<Var> {
    let zeros = g.constant(Tensor::zeros(shape));
    state.motion_noise_head(g, zeros, state.config().motion_steps, z_dec)
}

fn check_weights(gamma_cen: f64, lambda_mot: f64) -> Result<()> {
    if !(gamma_cen >= 0.0) || !(lambda_mot >= 0.0) {
        return Err(DimpError::invalid(format!(
            "loss weights must be nonnegative, got gamma_cen = {gamma_cen}, lambda_mot = {lambda_mot}"
        )));
    }
    Ok(())
}

/// `l_geo + gamma_cen * l_cen + lambda_mot * l_mot`.
pub fn total_loss(l_geo: f64, l_cen: f64, l_mot: f64, gamma_cen: f64, lambda_mot: f64) -> Result<f64> {
    check_weights(gamma_cen, lambda_mot)?;
    Ok(l_geo + gamma_cen * l_cen + lambda_mot * l_mot)
}

/// Graph form of [`total_loss`]. Terms with zero weight are left off the
/// tape, so their heads receive no gradient at all.
pub fn total_loss_var(
    g: &mut Graph,
    l_geo: Var,
    l_cen: Var,
    l_mot: Option<Var>,
    gamma_cen: f64,
    lambda_mot: f64,
) -> Result<Var> {
    check_weights(gamma_cen, lambda_mot)?;
    let mut total = l_geo;
    if gamma_cen > 0.0 {
        let c = g.scale(l_cen, gamma_cen);
        total = g.add(total, c);
    }
    if let Some(m) = l_mot.filter(|_| lambda_mot > 0.0) {
        let m = g.scale(m, lambda_mot);
        total = g.add(total, m);
    }
    Ok(total)
}
