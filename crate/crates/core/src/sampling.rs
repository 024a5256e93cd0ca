//! Inference with a trained model: decoder context for a sequence and
//! ancestral sampling of motion fields.

use ndarray::{ArrayD, Ix2};

use crate::autograd::{Graph, Tensor};
use crate::diffusion::{ancestral_sample, DiffusionSchedule};
use crate::error::{DimpError, Result};
use crate::geom::DynamicPointCloud;
use crate::losses::regress_motion;
use crate::model::{build_token_batch, CenterConditioning, DecodeInputs, ModelState, MotionObjective};

/// Decoder tokens `K x d` for `seq`, tokenized and masked as in training
/// with every draw taken from `seed`.
pub fn decoder_context(
    state: &ModelState,
    seq: &DynamicPointCloud,
    center_sched: &DiffusionSchedule,
    seed: u64,
) -> Result<Tensor> {
    let cfg = state.config();
    let b = build_token_batch(seq, cfg, center_sched, seed)?;
    let mut g = Graph::new();
    let enc = state.encode(&mut g, &b)?;
    let mask_centers = match cfg.center_conditioning {
        CenterConditioning::GroundTruth => g.constant(b.mask_centers_clean.clone()),
        _ => state.predict_centers(&mut g, enc.zm),
    };
    let vis_centers = g.constant(b.vis_centers.clone());
    let z = state.decode(
        &mut g,
        DecodeInputs {
            zv: enc.zv,
            mask_content: enc.mask_content,
            vis_centers,
            mask_centers,
            stop_grad: true,
            frame_idx: b.frame_idx,
            t_c: b.t_c,
        },
    );
    Ok(g.value(z).clone())
}

/// Noise prediction for a standardized motion field at step `t`.
pub fn predict_noise(state: &ModelState, m_t: &Tensor, t: usize, z_dec: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let m = g.constant(m_t.clone());
    let z = g.constant(z_dec.clone());
    let out = state.motion_noise_head(&mut g, m, t, z)?;
    Ok(g.value(out).clone())
}

/// `k` standardized motion fields for `seq`. Diffusion-trained models
/// sample ancestrally with seeds `seed + i`; regression-trained models
/// return their single estimate `k` times.
pub fn sample_motion(
    state: &ModelState,
    seq: &DynamicPointCloud,
    center_sched: &DiffusionSchedule,
    motion_sched: &DiffusionSchedule,
    k: usize,
    seed: u64,
) -> Result<Vec<Tensor>> {
    let cfg = state.config();
    if seq.num_frames() != cfg.seq_len {
        return Err(DimpError::Incompatible(format!(
            "sequence has {} frames, model expects {}",
            seq.num_frames(),
            cfg.seq_len
        )));
    }
    let z_dec = decoder_context(state, seq, center_sched, seed)?;
    let shape = (seq.points_per_frame(), cfg.motion_width());
    match cfg.motion_objective {
        MotionObjective::Regression => {
            let mut g = Graph::new();
            let z = g.constant(z_dec);
            let est = regress_motion(&mut g, state, shape, z)?;
            Ok(vec![g.value(est).clone(); k])
        }
        MotionObjective::Diffusion => (0..k)
            .map(|i| {
                let x = ancestral_sample(
                    |x: &ArrayD<f64>, t, z: &Tensor| {
                        let m = x.view().into_dimensionality::<Ix2>().expect("2-D sample").to_owned();
                        Ok(predict_noise(state, &m, t, z)?.into_dyn())
                    },
                    &z_dec,
                    &[shape.0, shape.1],
                    motion_sched,
                    seed.wrapping_add(1 + i as u64),
                )?;
                Ok(x.into_dimensionality::<Ix2>().expect("2-D sample"))
            })
            .collect(),
    }
}
