use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::error::{DimpError, Result};
use crate::model::{ModelState, TokenBatch};
use crate::synthdata::{Dataset, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub iterations: usize,
    pub lr: f64,
    pub l2: f64,
    /// Classes sharing their mean motion.
    pub shared_pair: (usize, usize),
    /// Classes whose mean motion differs.
    pub control_pair: (usize, usize),
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            lr: 0.05,
            l2: 1e-3,
            shared_pair: (0, 1),
            control_pair: (2, 3),
        }
    }
}

/// Test-split accuracies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub overall: f64,
    pub pair_shared_mean: f64,
    pub pair_control: f64,
}

/// Mean-pooled visible tokens of an unmasked encoder pass, one row per
/// item. Only encoder parameters are read.
pub fn extract_features(state: &ModelState, dataset: &Dataset) -> Result<Array2<f64>> {
    let d = state.config().d;
    let mut out = Array2::zeros((dataset.items.len(), d));
    for (i, item) in dataset.items.iter().enumerate() {
        let batch = TokenBatch::unmasked(&item.sequence, state.config(), item.seed)?;
        let mut g = Graph::new();
        let enc = state.encode(&mut g, &batch)?;
        let pooled = g.mean_rows(enc.zv);
        out.row_mut(i).assign(&g.value(pooled).row(0));
    }
    Ok(out)
}

/// A fitted multinomial logistic regression on z-scored features.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    mean: Array1<f64>,
    std: Array1<f64>,
    w: Array2<f64>,
    b: Array1<f64>,
}

impl LogisticModel {
    pub fn predict(&self, x: &Array2<f64>) -> Vec<usize> {
        let z = (x - &self.mean) / &self.std;
        let logits = z.dot(&self.w) + &self.b;
        logits
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for (j, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// Full-batch Adam on the mean cross-entropy plus an L2 penalty, from zero
/// weights. Labels must already be `0..n_classes`.
pub fn logistic_regression(x: &Array2<f64>, y: &[usize], n_classes: usize, cfg: &ProbeConfig) -> Result<LogisticModel> {
    let (n, d) = x.dim();
    if n == 0 || y.len() != n {
        return Err(DimpError::invalid("probe needs matching, nonempty features and labels"));
    }
    if n_classes < 2 {
        return Err(DimpError::invalid("probe needs at least two classes"));
    }
    let mean = x.mean_axis(Axis(0)).unwrap();
    let std = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    let z = (x - &mean) / &std;
    let mut onehot = Array2::<f64>::zeros((n, n_classes));
    for (i, &c) in y.iter().enumerate() {
        onehot[[i, c]] = 1.0;
    }
    let mut w = Array2::<f64>::zeros((d, n_classes));
    let mut b = Array1::<f64>::zeros(n_classes);
    let (mut mw, mut vw) = (w.clone(), w.clone());
    let (mut mb, mut vb) = (b.clone(), b.clone());
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    for it in 1..=cfg.iterations {
        let mut p = z.dot(&w) + &b;
        for mut row in p.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row /= s;
        }
        let diff = (p - &onehot) / n as f64;
        let gw = z.t().dot(&diff) + &w * cfg.l2;
        let gb = diff.sum_axis(Axis(0));
        let (c1, c2) = (1.0 - b1.powi(it as i32), 1.0 - b2.powi(it as i32));
        mw = &mw * b1 + &gw * (1.0 - b1);
        vw = &vw * b2 + &gw.mapv(|g| g * g) * (1.0 - b2);
        mb = &mb * b1 + &gb * (1.0 - b1);
        vb = &vb * b2 + &gb.mapv(|g| g * g) * (1.0 - b2);
        w = &w - &((&mw / c1) / ((&vw / c2).mapv(f64::sqrt) + eps) * cfg.lr);
        b = &b - &((&mb / c1) / ((&vb / c2).mapv(f64::sqrt) + eps) * cfg.lr);
    }
    Ok(LogisticModel { mean, std, w, b })
}

fn accuracy(pred: &[usize], y: &[usize]) -> f64 {
    pred.iter().zip(y).filter(|(a, b)| a == b).count() as f64 / y.len().max(1) as f64
}

/// Train on the train split of `features` restricted to `classes`, report
/// test accuracy.
pub fn probe_accuracy(
    features: &Array2<f64>,
    labels: &[usize],
    splits: &[Split],
    classes: &[usize],
    cfg: &ProbeConfig,
) -> Result<f64> {
    let pick = |split: Split| -> (Vec<usize>, Vec<usize>) {
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for i in 0..labels.len() {
            if splits[i] == split {
                if let Some(c) = classes.iter().position(|&c| c == labels[i]) {
                    rows.push(i);
                    ys.push(c);
                }
            }
        }
        (rows, ys)
    };
    let (tr, ytr) = pick(Split::Train);
    let (te, yte) = pick(Split::Test);
    let present = {
        let mut seen = ytr.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    };
    if present < 2 {
        return Err(DimpError::invalid("probe training split holds fewer than two classes"));
    }
    if te.is_empty() {
        return Err(DimpError::invalid("probe test split is empty"));
    }
    let model = logistic_regression(&features.select(Axis(0), &tr), &ytr, classes.len(), cfg)?;
    Ok(accuracy(&model.predict(&features.select(Axis(0), &te)), &yte))
}

/// Overall and per-pair probe accuracies on frozen encoder features.
pub fn linear_probe(state: &ModelState, dataset: &Dataset, cfg: &ProbeConfig) -> Result<ProbeReport> {
    let features = extract_features(state, dataset)?;
    let labels: Vec<usize> = dataset.items.iter().map(|i| i.label).collect();
    let splits: Vec<Split> = dataset.items.iter().map(|i| i.split).collect();
    let all: Vec<usize> = (0..dataset.num_classes()).collect();
    let pair = |p: (usize, usize)| -> Result<f64> {
        if p.0.max(p.1) >= dataset.num_classes() {
            return Ok(f64::NAN);
        }
        probe_accuracy(&features, &labels, &splits, &[p.0, p.1], cfg)
    };
    Ok(ProbeReport {
        overall: probe_accuracy(&features, &labels, &splits, &all, cfg)?,
        pair_shared_mean: pair(cfg.shared_pair)?,
        pair_control: pair(cfg.control_pair)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    #[test]
    fn separable_and_random_labels() {
        let mut r = rng::seeded(1);
        let n = 400;
        let x = Array2::from_shape_fn((n, 5), |_| r.random_range(-1.0..1.0));
        let y: Vec<usize> = (0..n).map(|i| usize::from(x[[i, 0]] + 0.5 * x[[i, 3]] > 0.0)).collect();
        let splits: Vec<Split> = (0..n).map(|i| if i < 300 { Split::Train } else { Split::Test }).collect();
        let acc = probe_accuracy(&x, &y, &splits, &[0, 1], &ProbeConfig::default()).unwrap();
        assert!(acc > 0.95, "{acc}");

        let noise: Vec<usize> = (0..n).map(|_| r.random_range(0..4)).collect();
        let acc = probe_accuracy(&x, &noise, &splits, &[0, 1, 2, 3], &ProbeConfig::default()).unwrap();
        // chance 0.25 with 100 test items: 3 sigma = 0.13
        assert!((acc - 0.25).abs() < 0.13, "{acc}");

        let one = vec![0usize; n];
        assert!(probe_accuracy(&x, &one, &splits, &[0, 1], &ProbeConfig::default()).is_err());
    }
}
