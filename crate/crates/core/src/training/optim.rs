use std::f64::consts::PI;

use super::OptimizerConfig;
use crate::autograd::Tensor;
use crate::error::{DimpError, Result};
use crate::model::ParamStore;

/// Linear warmup to `lr`, then cosine decay to zero at `total`.
/// `step` is 0-based.
pub fn learning_rate(cfg: &OptimizerConfig, step: usize, total: usize) -> f64 {
    if step < cfg.warmup_steps {
        return cfg.lr * (step + 1) as f64 / cfg.warmup_steps as f64;
    }
    let span = total.saturating_sub(cfg.warmup_steps).max(1);
    let progress = ((step - cfg.warmup_steps) as f64 / span as f64).min(1.0);
    0.5 * cfg.lr * (1.0 + (PI * progress).cos())
}

/// Decoupled weight decay Adam. Parameters whose gradient never reached
/// the loss in a step are left untouched, moments included.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    /// Per-parameter update counts for bias correction.
    pub t: Vec<u64>,
}

impl AdamW {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|p| Tensor::zeros(p.value.raw_dim())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: vec![0; store.len()],
        }
    }

    /// Apply one update using the accumulated gradients of the parameters
    /// flagged in `touched`, then zero every accumulator.
    pub fn step(&mut self, store: &mut ParamStore, touched: &[bool], cfg: &OptimizerConfig, lr: f64) -> Result<()> {
        if touched.len() != store.len() || self.m.len() != store.len() {
            return Err(DimpError::invalid("optimizer state does not match the parameters"));
        }
        let mut norm2 = 0.0;
        for (p, &on) in store.iter().zip(touched) {
            if on {
                norm2 += p.grad.iter().map(|g| g * g).sum::<f64>();
            }
        }
        let norm = norm2.sqrt();
        if !norm.is_finite() {
            store.zero_grads();
            return Err(DimpError::NonFinite {
                what: "gradient".into(),
                step: 0,
            });
        }
        let clip = if cfg.grad_clip > 0.0 && norm > cfg.grad_clip {
            cfg.grad_clip / norm
        } else {
            1.0
        };
        for (i, p) in store.iter_mut().enumerate() {
            if !touched[i] {
                continue;
            }
            self.t[i] += 1;
            let t = self.t[i] as i32;
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            ndarray::Zip::from(&mut p.value)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    let g = g * clip;
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    let update = (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps);
                    *w -= lr * (update + cfg.weight_decay * *w);
                });
        }
        store.zero_grads();
        Ok(())
    }
}
