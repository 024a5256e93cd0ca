use super::{AdamW, TrainConfig};
use crate::autograd::{Graph, Tensor, Var};
use crate::diffusion::{stratified_timesteps, DiffusionSchedule, StratifiedDraw};
use crate::error::{DimpError, Result};
use crate::geom::DynamicPointCloud;
use crate::losses::{loss_center, loss_geo, loss_motion, loss_motion_regression, total_loss_var, LossReport};
use crate::model::{build_token_batch, CenterConditioning, DecodeInputs, ModelState, MotionObjective, TokenBatch};
use crate::rng;

/// Everything random about one sample in one step, drawn up front.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub batch: TokenBatch,
    /// Standardized displacement field, `N x (L-1)*3`.
    pub m0: Tensor,
    pub draw: StratifiedDraw,
}

pub fn prepare_sample(
    seq: &DynamicPointCloud,
    m0: &Tensor,
    state: &ModelState,
    center_sched: &DiffusionSchedule,
    seed: u64,
) -> Result<PreparedSample> {
    let cfg = state.config();
    if seq.num_frames() != cfg.seq_len || m0.ncols() != cfg.motion_width() {
        return Err(DimpError::Incompatible(format!(
            "sequence has {} frames, model expects {}",
            seq.num_frames(),
            cfg.seq_len
        )));
    }
    let batch = build_token_batch(seq, cfg, center_sched, rng::derive(seed, &[0]))?;
    let draw = stratified_timesteps(cfg.motion_steps, cfg.h, m0.shape(), rng::derive(seed, &[1]))?;
    Ok(PreparedSample {
        batch,
        m0: m0.clone(),
        draw,
    })
}

/// Loss nodes of one sample.
#[derive(Debug, Clone)]
pub struct SampleLosses {
    pub l_cen: Var,
    pub l_geo: Var,
    /// Absent when the motion weight is zero.
    pub l_mot: Option<Var>,
    pub per_interval: Vec<Var>,
    pub pred_centers: Var,
    pub z_dec: Var,
}

/// Encoder, center predictor, decoder, reconstruction and motion losses for
/// one sample on `g`.
pub fn sample_losses(
    g: &mut Graph,
    state: &ModelState,
    s: &PreparedSample,
    motion_sched: &DiffusionSchedule,
) -> Result<SampleLosses> {
    let cfg = state.config();
    let b = &s.batch;
    let enc = state.encode(g, b)?;
    let pred = state.predict_centers(g, enc.zm);
    let target = g.constant(b.mask_centers_clean.clone());
    let l_cen = loss_center(g, pred, target)?;

    let vis_centers = g.constant(b.vis_centers.clone());
    let mask_centers = match cfg.center_conditioning {
        CenterConditioning::GroundTruth => target,
        _ => pred,
    };
    let inputs = |stop_grad| DecodeInputs {
        zv: enc.zv,
        mask_content: enc.mask_content,
        vis_centers,
        mask_centers,
        stop_grad,
        frame_idx: b.frame_idx,
        t_c: b.t_c,
    };
    let z_geo = state.decode(g, inputs(cfg.stop_grad_geo));
    let z_mot = if cfg.stop_grad_mot == cfg.stop_grad_geo {
        z_geo
    } else {
        state.decode(g, inputs(cfg.stop_grad_mot))
    };

    let (k_v, k) = (b.num_visible(), b.num_visible() + b.num_masked());
    let z_masked = g.slice_rows(z_geo, k_v, k);
    let rec = state.reconstruct(g, z_masked);
    let rec_target = g.constant(b.mask_points_clean.clone());
    let l_geo = loss_geo(g, rec, rec_target, cfg.window_len(), cfg.tube.n_pts)?;

    let (l_mot, per_interval) = if cfg.lambda_mot > 0.0 {
        match cfg.motion_objective {
            MotionObjective::Diffusion => {
                let (l, terms) = loss_motion(g, state, &s.m0, z_mot, &s.draw, motion_sched)?;
                (Some(l), terms)
            }
            MotionObjective::Regression => {
                let l = loss_motion_regression(g, state, &s.m0, z_mot)?;
                (Some(l), vec![l])
            }
        }
    } else {
        (None, Vec::new())
    };
    Ok(SampleLosses {
        l_cen,
        l_geo,
        l_mot,
        per_interval,
        pred_centers: pred,
        z_dec: z_mot,
    })
}

fn mean_of(g: &mut Graph, vars: &[Var]) -> Var {
    let all = g.concat_rows(vars);
    g.mean(all)
}

/// Batch loss on a fresh graph. Returns the graph, the total node and the
/// report; nothing is updated.
pub fn batch_objective(
    state: &ModelState,
    samples: &[PreparedSample],
    motion_sched: &DiffusionSchedule,
    step: usize,
) -> Result<(Graph, Var, LossReport)> {
    if samples.is_empty() {
        return Err(DimpError::invalid("empty batch"));
    }
    let cfg = state.config();
    let mut g = Graph::new();
    let mut cen = Vec::new();
    let mut geo = Vec::new();
    let mut mot = Vec::new();
    let mut intervals: Vec<Vec<Var>> = Vec::new();
    for s in samples {
        let l = sample_losses(&mut g, state, s, motion_sched)?;
        cen.push(l.l_cen);
        geo.push(l.l_geo);
        if let Some(m) = l.l_mot {
            mot.push(m);
            intervals.push(l.per_interval);
        }
    }
    let l_cen = mean_of(&mut g, &cen);
    let l_geo = mean_of(&mut g, &geo);
    let l_mot = if mot.is_empty() { None } else { Some(mean_of(&mut g, &mot)) };
    let total = total_loss_var(&mut g, l_geo, l_cen, l_mot, cfg.gamma_cen, cfg.lambda_mot)?;

    let mot_value = l_mot.map_or(0.0, |v| g.scalar(v));
    let per_interval_mot: Vec<f64> = if intervals.is_empty() {
        Vec::new()
    } else {
        (0..intervals[0].len())
            .map(|i| intervals.iter().map(|terms| g.scalar(terms[i])).sum::<f64>() / intervals.len() as f64)
            .collect()
    };
    let report = LossReport {
        l_cen: g.scalar(l_cen),
        l_geo: g.scalar(l_geo),
        l_mot: mot_value,
        l_total: g.scalar(total),
        per_interval_mot,
        t_c: samples[0].batch.t_c,
        t_motion: samples[0].draw.timesteps.clone(),
    };
    for (name, v) in [
        ("l_cen", report.l_cen),
        ("l_geo", report.l_geo),
        ("l_mot", report.l_mot),
        ("l_total", report.l_total),
    ] {
        if !v.is_finite() {
            return Err(DimpError::NonFinite { what: name.into(), step });
        }
    }
    Ok((g, total, report))
}

/// One optimizer step over a prepared batch.
pub fn train_step(
    state: &mut ModelState,
    opt: &mut AdamW,
    samples: &[PreparedSample],
    motion_sched: &DiffusionSchedule,
    cfg: &TrainConfig,
    lr: f64,
    step: usize,
) -> Result<LossReport> {
    let (g, total, report) = batch_objective(state, samples, motion_sched, step)?;
    let grads = g.backward(total);
    let mut touched = vec![false; state.store().len()];
    for (id, v) in g.params() {
        if let Some(gr) = grads.get(v) {
            state.store_mut().get_mut(id).grad += gr;
            touched[id.0] = true;
        }
    }
    opt.step(state.store_mut(), &touched, &cfg.optimizer, lr).map_err(|e| match e {
        DimpError::NonFinite { what, .. } => DimpError::NonFinite { what, step },
        other => other,
    })?;
    if !state.store().all_finite() {
        return Err(DimpError::NonFinite {
            what: "parameters".into(),
            step,
        });
    }
    Ok(report)
}
