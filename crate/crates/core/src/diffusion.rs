//! DDPM machinery shared by the center and motion diffusion processes.
//!
//! Timesteps are 1-based: `t` ranges over `1..=T`, and `alpha_bar(0) = 1`
//! is defined for the posterior term at `t = 1`.

use std::ops::RangeInclusive;

use ndarray::{Array, ArrayD, Dimension, IxDyn};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{DimpError, Result};
use crate::rng;

pub const COSINE_OFFSET: f64 = 0.008;
pub const BETA_CLAMP: f64 = 0.999;

/// The three numbers a cosine schedule is rebuilt from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDescriptor {
    pub steps: usize,
    pub offset: f64,
    pub clamp: f64,
}

impl ScheduleDescriptor {
    pub fn cosine(steps: usize) -> Self {
        Self {
            steps,
            offset: COSINE_OFFSET,
            clamp: BETA_CLAMP,
        }
    }

    pub fn build(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::cosine_with(self.steps, self.offset, self.clamp)
    }
}

/// Per-step variances `beta_t` and their cumulative products `alpha_bar_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    descriptor: ScheduleDescriptor,
    /// Index 0 is unused padding so `beta[t]` reads naturally.
    beta: Vec<f64>,
    /// `alpha_bar[0] = 1`.
    alpha_bar: Vec<f64>,
}

/// Cosine schedule with the standard offset and clamp.
pub fn make_cosine_schedule(steps: usize) -> Result<DiffusionSchedule> {
    DiffusionSchedule::cosine_with(steps, COSINE_OFFSET, BETA_CLAMP)
}

impl DiffusionSchedule {
    pub fn cosine_with(steps: usize, offset: f64, clamp: f64) -> Result<Self> {
        if steps < 2 {
            return Err(DimpError::invalid(format!("schedule needs at least 2 steps, got {steps}")));
        }
        if !(offset > 0.0) || !(clamp > 0.0 && clamp < 1.0) {
            return Err(DimpError::invalid("cosine offset must be positive and clamp in (0, 1)"));
        }
        let f = |t: usize| {
            let x = ((t as f64 / steps as f64) + offset) / (1.0 + offset) * std::f64::consts::FRAC_PI_2;
            x.cos().powi(2)
        };
        let f0 = f(0);
        let mut beta = vec![0.0; steps + 1];
        let mut alpha_bar = vec![1.0; steps + 1];
        for t in 1..=steps {
            let ratio = (f(t) / f0) / (f(t - 1) / f0);
            beta[t] = (1.0 - ratio).min(clamp);
            alpha_bar[t] = alpha_bar[t - 1] * (1.0 - beta[t]);
        }
        Ok(Self {
            descriptor: ScheduleDescriptor {
                steps,
                offset,
                clamp,
            },
            beta,
            alpha_bar,
        })
    }

    /// Schedule from explicit betas (1-based list of length `T`).
    pub fn from_betas(betas: &[f64]) -> Result<Self> {
        if betas.len() < 2 || betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(DimpError::invalid("betas must lie in (0, 1) with at least 2 steps"));
        }
        let mut beta = vec![0.0];
        beta.extend_from_slice(betas);
        let mut alpha_bar = vec![1.0; beta.len()];
        for t in 1..beta.len() {
            alpha_bar[t] = alpha_bar[t - 1] * (1.0 - beta[t]);
        }
        Ok(Self {
            descriptor: ScheduleDescriptor {
                steps: betas.len(),
                offset: f64::NAN,
                clamp: f64::NAN,
            },
            beta,
            alpha_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.descriptor.steps
    }

    pub fn descriptor(&self) -> ScheduleDescriptor {
        self.descriptor
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    /// `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(DimpError::invalid(format!(
                "timestep {t} outside [1, {}]",
                self.steps()
            )));
        }
        Ok(())
    }
}

/// `sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.
pub fn forward_sample<D: Dimension>(
    x0: &Array<f64, D>,
    t: usize,
    eps: &Array<f64, D>,
    sched: &DiffusionSchedule,
) -> Result<Array<f64, D>> {
    sched.check_step(t)?;
    if x0.shape() != eps.shape() {
        return Err(DimpError::ShapeMismatch {
            expected: x0.shape().to_vec(),
            got: eps.shape().to_vec(),
        });
    }
    let ab = sched.alpha_bar(t);
    Ok(forward_with(x0, eps, ab))
}

pub(crate) fn forward_with<D: Dimension>(
    x0: &Array<f64, D>,
    eps: &Array<f64, D>,
    alpha_bar: f64,
) -> Array<f64, D> {
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let mut out = x0 * a;
    out.zip_mut_with(eps, |o, e| *o += b * e);
    out
}

/// `alpha_bar_t / (1 - alpha_bar_t)`.
pub fn snr(sched: &DiffusionSchedule, t: usize) -> Result<f64> {
    sched.check_step(t)?;
    let ab = sched.alpha_bar(t);
    if ab == 1.0 {
        return Err(DimpError::InfiniteSnr(t));
    }
    Ok(ab / (1.0 - ab))
}

/// Clean-signal estimate implied by a noise prediction.
pub fn x0_from_eps<D: Dimension>(
    x_t: &Array<f64, D>,
    eps_hat: &Array<f64, D>,
    t: usize,
    sched: &DiffusionSchedule,
) -> Result<Array<f64, D>> {
    sched.check_step(t)?;
    if x_t.shape() != eps_hat.shape() {
        return Err(DimpError::ShapeMismatch {
            expected: x_t.shape().to_vec(),
            got: eps_hat.shape().to_vec(),
        });
    }
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = x_t.clone();
    out.zip_mut_with(eps_hat, |o, e| *o = (*o - b * e) / a);
    Ok(out)
}

/// Near-equal partition of `[1, T]` into `h` intervals; the last one
/// absorbs the remainder.
pub fn stratified_intervals(total: usize, h: usize) -> Result<Vec<RangeInclusive<usize>>> {
    if h == 0 || h > total {
        return Err(DimpError::invalid(format!(
            "cannot split {total} steps into {h} intervals"
        )));
    }
    let d = total / h;
    Ok((0..h)
        .map(|i| {
            let lo = d * i + 1;
            let hi = if i + 1 == h { total } else { d * (i + 1) };
            lo..=hi
        })
        .collect())
}

/// One timestep per interval plus an independent noise tensor for each.
#[derive(Debug, Clone, PartialEq)]
pub struct StratifiedDraw {
    pub intervals: Vec<RangeInclusive<usize>>,
    pub timesteps: Vec<usize>,
    pub noises: Vec<ArrayD<f64>>,
}

impl StratifiedDraw {
    pub fn len(&self) -> usize {
        self.timesteps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timesteps.is_empty()
    }
}

pub fn stratified_timesteps(
    total: usize,
    h: usize,
    noise_shape: &[usize],
    seed: u64,
) -> Result<StratifiedDraw> {
    let intervals = stratified_intervals(total, h)?;
    let mut rng = rng::seeded(seed);
    let mut timesteps = Vec::with_capacity(h);
    let mut noises = Vec::with_capacity(h);
    for q in &intervals {
        timesteps.push(rng.random_range(q.clone()));
        noises.push(rng::standard_normal(IxDyn(noise_shape), &mut rng));
    }
    Ok(StratifiedDraw {
        intervals,
        timesteps,
        noises,
    })
}

/// DDPM ancestral sampling from pure noise at `t = T` down to `t = 0`,
/// with the posterior variance `beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t)`.
pub fn ancestral_sample<C, F>(
    mut noise_fn: F,
    cond: &C,
    shape: &[usize],
    sched: &DiffusionSchedule,
    seed: u64,
) -> Result<ArrayD<f64>>
where
    C: ?Sized,
    F: FnMut(&ArrayD<f64>, usize, &C) -> Result<ArrayD<f64>>,
{
    let mut rng = rng::seeded(seed);
    let mut x: ArrayD<f64> = rng::standard_normal(IxDyn(shape), &mut rng);
    for t in (1..=sched.steps()).rev() {
        let eps_hat = noise_fn(&x, t, cond)?;
        if eps_hat.shape() != x.shape() {
            return Err(DimpError::ShapeMismatch {
                expected: x.shape().to_vec(),
                got: eps_hat.shape().to_vec(),
            });
        }
        if eps_hat.iter().any(|v| !v.is_finite()) {
            return Err(DimpError::NonFinite {
                what: "noise prediction".into(),
                step: t,
            });
        }
        let beta = sched.beta(t);
        let ab = sched.alpha_bar(t);
        let ab_prev = sched.alpha_bar(t - 1);
        let coef = beta / (1.0 - ab).sqrt();
        let scale = 1.0 / (1.0 - beta).sqrt();
        x.zip_mut_with(&eps_hat, |xv, e| *xv = scale * (*xv - coef * e));
        if t > 1 {
            let sigma = (beta * (1.0 - ab_prev) / (1.0 - ab)).sqrt();
            let z: ArrayD<f64> = rng::standard_normal(IxDyn(shape), &mut rng);
            x.zip_mut_with(&z, |xv, zv| *xv += sigma * zv);
        }
    }
    Ok(x)
}

/// Forward step applied to visible centers for a visible-noise level in
/// `[0, 1]`: `ceil(level * t_c)`, where 0 means no corruption.
pub fn visible_noise_step(level: f64, t_c: usize) -> usize {
    (level.clamp(0.0, 1.0) * t_c as f64).ceil() as usize
}
