use rand::Rng as _;

use super::{CenterConditioning, ModelConfig};
use crate::autograd::{points_as_rows, Tensor};
use crate::diffusion::{forward_sample, visible_noise_step, DiffusionSchedule};
use crate::error::Result;
use crate::geom::{build_tubes, mask_split, DynamicPointCloud, Point, TubeSet};
use crate::rng;

/// Numeric inputs of one sequence, ready for the embedders.
///
/// Coordinates of tube contents are relative to each tube's keypoint;
/// centers are keypoints with their mean removed.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    pub tubes: TubeSet,
    /// `K_v * frames * n_pts` rows of xyz.
    pub vis_points: Tensor,
    /// Clean masked contents, one flattened tube per row.
    pub mask_points_clean: Tensor,
    /// `P^m` at step `t_c`.
    pub mask_points_noisy: Tensor,
    /// Visible centers; noised only when visible noise is enabled.
    pub vis_centers: Tensor,
    pub mask_centers_noisy: Tensor,
    pub mask_centers_clean: Tensor,
    pub frame_idx: usize,
    pub t_c: usize,
    pub eps_center: Tensor,
    pub eps_points: Tensor,
}

impl TokenBatch {
    pub fn num_visible(&self) -> usize {
        self.vis_centers.nrows()
    }

    pub fn num_masked(&self) -> usize {
        self.mask_centers_clean.nrows()
    }

    /// Every tube visible with clean centers; used for feature extraction.
    pub fn unmasked(seq: &DynamicPointCloud, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let tubes = build_tubes(seq, cfg.num_tubes, cfg.tube, rng::derive(seed, &[0]))?;
        let coords = cfg.tube_coords();
        Ok(Self {
            vis_points: visible_rows(&tubes, seq),
            vis_centers: gather_centers(&tubes.centered, &tubes.visible_idx),
            mask_points_clean: Tensor::zeros((0, coords)),
            mask_points_noisy: Tensor::zeros((0, coords)),
            mask_centers_noisy: Tensor::zeros((0, 3)),
            mask_centers_clean: Tensor::zeros((0, 3)),
            frame_idx: tubes.frame_idx(),
            t_c: 0,
            eps_center: Tensor::zeros((0, 3)),
            eps_points: Tensor::zeros((0, coords)),
            tubes,
        })
    }
}

/// Tokenize, mask and corrupt one sequence. Tube sampling, the mask, the
/// center step `t_c` and both noises are all derived from `seed`.
pub fn build_token_batch(
    seq: &DynamicPointCloud,
    cfg: &ModelConfig,
    center_sched: &DiffusionSchedule,
    seed: u64,
) -> Result<TokenBatch> {
    let tubes = build_tubes(seq, cfg.num_tubes, cfg.tube, rng::derive(seed, &[0]))?;
    let tubes = mask_split(tubes, cfg.mask_ratio, rng::derive(seed, &[1]))?;
    let mut r = rng::seeded(rng::derive(seed, &[2]));

    let k_m = tubes.masked_idx.len();
    let coords = cfg.tube_coords();
    let t_c = r.random_range(1..=center_sched.steps());
    let eps_center: Tensor = rng::standard_normal((k_m, 3), &mut r);
    let eps_points: Tensor = rng::standard_normal((k_m, coords), &mut r);

    let mask_centers_clean = gather_centers(&tubes.centered, &tubes.masked_idx);
    let mask_centers_noisy = forward_sample(&mask_centers_clean, t_c, &eps_center, center_sched)?;

    let mut mask_points_clean = Tensor::zeros((k_m, coords));
    for (row, &i) in tubes.masked_idx.iter().enumerate() {
        let pts = tubes.relative_points(seq, i);
        for (j, p) in pts.iter().enumerate() {
            for a in 0..3 {
                mask_points_clean[[row, 3 * j + a]] = p[a];
            }
        }
    }
    let mask_points_noisy = forward_sample(&mask_points_clean, t_c, &eps_points, center_sched)?;

    let mut vis_centers = gather_centers(&tubes.centered, &tubes.visible_idx);
    let level = match cfg.center_conditioning {
        CenterConditioning::AllDiffusion => 1.0,
        _ => cfg.visible_noise_level,
    };
    let t_v = visible_noise_step(level, t_c);
    if t_v > 0 {
        let eps_v: Tensor = rng::standard_normal(vis_centers.dim(), &mut r);
        vis_centers = forward_sample(&vis_centers, t_v, &eps_v, center_sched)?;
    }

    Ok(TokenBatch {
        vis_points: visible_rows(&tubes, seq),
        mask_points_clean,
        mask_points_noisy,
        vis_centers,
        mask_centers_noisy,
        mask_centers_clean,
        frame_idx: tubes.frame_idx(),
        t_c,
        eps_center,
        eps_points,
        tubes,
    })
}

fn gather_centers(centers: &[Point], idx: &[usize]) -> Tensor {
    let picked: Vec<Point> = idx.iter().map(|&i| centers[i]).collect();
    points_as_rows(&picked)
}

fn visible_rows(tubes: &TubeSet, seq: &DynamicPointCloud) -> Tensor {
    let pts: Vec<Point> = tubes
        .visible_idx
        .iter()
        .flat_map(|&i| tubes.relative_points(seq, i))
        .collect();
    points_as_rows(&pts)
}
