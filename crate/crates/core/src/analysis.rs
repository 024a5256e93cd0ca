//! Numeric checks of the theory: mutual-information gap, Fano bound,
//! softmax concentration, posterior collapse and the SNR weighting identity.

use rand::Rng as _;

use crate::autograd::Tensor;
use crate::diffusion::{forward_sample, snr, x0_from_eps, DiffusionSchedule};
use crate::error::{DimpError, Result};
use crate::rng;

/// Joint distribution of a label and a discretized motion statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    p: Vec<Vec<f64>>,
}

impl DiscreteJoint {
    pub fn new(p: Vec<Vec<f64>>) -> Result<Self> {
        let cols = p.first().map_or(0, |r| r.len());
        if p.is_empty() || cols == 0 || p.iter().any(|r| r.len() != cols) {
            return Err(DimpError::invalid("joint table must be a nonempty rectangle"));
        }
        if p.iter().flatten().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(DimpError::invalid("joint table has negative or non-finite entries"));
        }
        let total: f64 = p.iter().flatten().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(DimpError::invalid(format!("joint table sums to {total}, not 1")));
        }
        Ok(Self { p })
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.p
    }

    pub fn marginal_rows(&self) -> Vec<f64> {
        self.p.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn marginal_cols(&self) -> Vec<f64> {
        (0..self.p[0].len()).map(|j| self.p.iter().map(|r| r[j]).sum()).collect()
    }
}

/// Shannon entropy in bits, with `0 log 0 = 0`.
pub fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.log2()).sum::<f64>()
}

pub fn discrete_mutual_information(joint: &DiscreteJoint) -> f64 {
    let pa = joint.marginal_rows();
    let pm = joint.marginal_cols();
    let mut mi = 0.0;
    for (a, row) in joint.table().iter().enumerate() {
        for (m, &v) in row.iter().enumerate() {
            if v > 0.0 {
                mi += v * (v / (pa[a] * pm[m])).log2();
            }
        }
    }
    mi.max(0.0)
}

/// Two equiprobable labels. Under `a1` the motion is `-1` or `+1` with equal
/// probability, under `a2` it is always `0`, so both class means are zero.
/// Returns `(I(A; class mean), I(A; M))` in bits.
pub fn verify_prop_info_loss() -> Result<(f64, f64)> {
    // outcomes of M: -1, 0, +1
    let full = DiscreteJoint::new(vec![vec![0.25, 0.0, 0.25], vec![0.0, 0.5, 0.0]])?;
    let outcomes = [-1.0, 0.0, 1.0];
    let mut means = Vec::new();
    for row in full.table() {
        let pa: f64 = row.iter().sum();
        means.push(row.iter().zip(outcomes).map(|(p, m)| p * m).sum::<f64>() / pa);
    }
    // the class-mean statistic takes a single value, so its joint with A has one column
    if means.iter().any(|&m| m != means[0]) {
        return Err(DimpError::invalid("construction lost its shared mean"));
    }
    let bar = DiscreteJoint::new(full.marginal_rows().into_iter().map(|p| vec![p]).collect())?;
    Ok((discrete_mutual_information(&bar), discrete_mutual_information(&full)))
}

/// `max(0, (h_cond - 1) / log2(n_classes))`, clamped to `[0, 1]`.
pub fn fano_lower_bound(h_cond: f64, n_classes: usize) -> Result<f64> {
    if !(h_cond >= 0.0) || n_classes < 2 {
        return Err(DimpError::invalid(format!(
            "Fano bound needs h >= 0 and at least 2 classes, got h = {h_cond}, n = {n_classes}"
        )));
    }
    Ok(((h_cond - 1.0) / (n_classes as f64).log2()).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Concentration {
    pub alpha_max: f64,
    /// `(n - 1) exp(-gap)`.
    pub bound: f64,
    /// Top logit minus the runner-up.
    pub gap: f64,
    /// Whether `1 - alpha_max <= bound`.
    pub holds: bool,
}

pub fn attention_concentration(logits: &[f64]) -> Result<Concentration> {
    let n = logits.len();
    if n < 2 {
        return Err(DimpError::invalid("need at least two logits"));
    }
    let (arg, top) = logits
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, l)| if l > b.1 { (i, l) } else { b });
    let second = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, &l)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let gap = top - second;
    // tail mass summed directly; 1 - alpha_max would cancel for large gaps
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, &l)| (l - top).exp())
        .sum();
    let alpha_max = 1.0 / (1.0 + rest);
    let tail = rest / (1.0 + rest);
    let bound = (n as f64 - 1.0) * (-gap).exp();
    Ok(Concentration {
        alpha_max,
        bound,
        gap,
        holds: tail <= bound * (1.0 + 1e-12),
    })
}

/// `n` logits in `[-10, 10]` whose top entry exceeds the runner-up by
/// exactly `gap`.
pub fn logits_with_gap(n: usize, gap: f64, r: &mut rng::Rng) -> Vec<f64> {
    let mut l: Vec<f64> = (0..n).map(|_| r.random_range(-10.0..10.0)).collect();
    let top = r.random_range(0..n);
    let runner = l
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    l[top] = runner + gap;
    l
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Collapse {
    /// Posterior mean averaged over draws of `M_t`.
    pub bayes_estimate: f64,
    pub conditional_mean: f64,
    pub deviation: f64,
    /// Mean absolute gap between each posterior mean and the prior mean.
    pub mean_abs_shift: f64,
}

/// Exact Gaussian posterior mean of `M0 ~ N(mu, sigma^2)` given
/// `M_t = sqrt(ab) M0 + sqrt(1 - ab) eps`.
pub fn gaussian_posterior_mean(mu: f64, sigma: f64, alpha_bar: f64, m_t: f64) -> f64 {
    let s2 = sigma * sigma;
    let a = alpha_bar.sqrt();
    let denom = alpha_bar * s2 + (1.0 - alpha_bar);
    mu + a * s2 * (m_t - a * mu) / denom
}

pub fn posterior_collapse_check(
    mu_prior: f64,
    sigma_prior: f64,
    sched: &DiffusionSchedule,
    t: usize,
    draws: usize,
    seed: u64,
) -> Result<Collapse> {
    if !(sigma_prior >= 0.0) || draws == 0 {
        return Err(DimpError::invalid("sigma_prior must be nonnegative and draws positive"));
    }
    let mut r = rng::seeded(seed);
    let ab = sched.alpha_bar(t);
    let (mut sum, mut shift) = (0.0, 0.0);
    for _ in 0..draws {
        let m0 = mu_prior + sigma_prior * r.sample::<f64, _>(rand_distr::StandardNormal);
        let x0 = Tensor::from_elem((1, 1), m0);
        let eps = Tensor::from_elem((1, 1), r.sample::<f64, _>(rand_distr::StandardNormal));
        let m_t = forward_sample(&x0, t, &eps, sched)?[[0, 0]];
        let post = gaussian_posterior_mean(mu_prior, sigma_prior, ab, m_t);
        sum += post;
        shift += (post - mu_prior).abs();
    }
    let est = sum / draws as f64;
    Ok(Collapse {
        bayes_estimate: est,
        conditional_mean: mu_prior,
        deviation: (est - mu_prior).abs(),
        mean_abs_shift: shift / draws as f64,
    })
}

/// Worst relative gap between `|eps - eps_hat|^2` and
/// `SNR(t) |x0 - x0_hat|^2` over random trials on tensors of `shape`.
pub fn snr_weight_check(sched: &DiffusionSchedule, trials: usize, shape: (usize, usize), seed: u64) -> Result<f64> {
    let mut r = rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let t = r.random_range(1..=sched.steps());
        let x0: Tensor = rng::standard_normal(shape, &mut r);
        let eps: Tensor = rng::standard_normal(shape, &mut r);
        let eps_hat: Tensor = rng::standard_normal(shape, &mut r);
        let x_t = forward_sample(&x0, t, &eps, sched)?;
        let x0_hat = x0_from_eps(&x_t, &eps_hat, t, sched)?;
        let lhs: f64 = (&eps - &eps_hat).mapv(|v| v * v).sum();
        let rhs: f64 = snr(sched, t)? * (&x0 - &x0_hat).mapv(|v| v * v).sum();
        let scale = lhs.abs().max(rhs.abs());
        if scale > 0.0 {
            worst = worst.max((lhs - rhs).abs() / scale);
        }
    }
    Ok(worst)
}
