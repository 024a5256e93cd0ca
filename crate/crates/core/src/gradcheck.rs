//! Central finite-difference checks against the tape's analytic gradients.

use crate::autograd::{Graph, ParamId, Tensor, Var};
use crate::error::Result;
use crate::model::ModelState;

/// Outcome for one parameter tensor.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    /// Norm-wise relative error over the checked entries.
    pub rel_error: f64,
    pub entries: usize,
    pub analytic_norm: f64,
}

/// Gradients with a norm below this are compared absolutely; central
/// differences cannot resolve them (attention key biases, for example, have
/// an exactly zero gradient).
pub const ABS_FLOOR: f64 = 1e-5;

/// Norm-wise relative error with an absolute floor on the scale.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(ABS_FLOOR)
}

/// Central differences of a scalar function at `x`, for the flat entry
/// indices in `entries`.
pub fn numeric_gradient<F>(mut f: F, x: &Tensor, entries: &[usize], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let mut probe = x.as_standard_layout().into_owned();
    let mut out = Vec::with_capacity(entries.len());
    for &e in entries {
        let orig = probe.as_slice().expect("standard layout")[e];
        probe.as_slice_mut().expect("standard layout")[e] = orig + h;
        let up = f(&probe)?;
        probe.as_slice_mut().expect("standard layout")[e] = orig - h;
        let down = f(&probe)?;
        probe.as_slice_mut().expect("standard layout")[e] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Up to `limit` evenly spaced flat indices of a tensor with `len` entries.
pub fn spread_entries(len: usize, limit: usize) -> Vec<usize> {
    if len <= limit {
        return (0..len).collect();
    }
    let step = len as f64 / limit as f64;
    (0..limit).map(|i| (i as f64 * step) as usize).collect()
}

/// Compare analytic and numeric gradients of `loss` for each listed
/// parameter, checking at most `limit` entries per tensor.
pub fn check_params<F>(
    state: &ModelState,
    ids: &[ParamId],
    mut loss: F,
    h: f64,
    limit: usize,
) -> Result<Vec<GradCheck>>
where
    F: FnMut(&mut Graph, &ModelState) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = loss(&mut g, state)?;
    let grads = g.backward(out);
    let mut work = state.clone();
    let mut reports = Vec::with_capacity(ids.len());
    for &id in ids {
        let value = state.store().value(id).clone();
        let analytic = match g.param_var(id).and_then(|v| grads.get(v)) {
            Some(t) => t.clone(),
            None => Tensor::zeros(value.raw_dim()),
        };
        let entries = spread_entries(value.len(), limit);
        let numeric = numeric_gradient(
            |x| {
                work.store_mut().get_mut(id).value.assign(x);
                let mut g = Graph::new();
                let v = loss(&mut g, &work)?;
                Ok(g.scalar(v))
            },
            &value,
            &entries,
            h,
        )?;
        work.store_mut().get_mut(id).value.assign(&value);
        let flat: Vec<f64> = analytic.iter().copied().collect();
        let a: Vec<f64> = entries.iter().map(|&e| flat[e]).collect();
        reports.push(GradCheck {
            name: state.store().get(id).name.clone(),
            rel_error: relative_error(&a, &numeric),
            entries: entries.len(),
            analytic_norm: a.iter().map(|x| x * x).sum::<f64>().sqrt(),
        });
    }
    Ok(reports)
}

/// Same comparison for an input tensor fed through `build`.
pub fn check_input<F>(x: &Tensor, mut build: F, h: f64, limit: usize) -> Result<f64>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let out = build(&mut g, xv)?;
    let grads = g.backward(out);
    let analytic = grads.get_or_zeros(&g, xv);
    let entries = spread_entries(x.len(), limit);
    let numeric = numeric_gradient(
        |p| {
            let mut g = Graph::new();
            let v = g.input(p.clone());
            let o = build(&mut g, v)?;
            Ok(g.scalar(o))
        },
        x,
        &entries,
        h,
    )?;
    let flat: Vec<f64> = analytic.iter().copied().collect();
    let a: Vec<f64> = entries.iter().map(|&e| flat[e]).collect();
    Ok(relative_error(&a, &numeric))
}
