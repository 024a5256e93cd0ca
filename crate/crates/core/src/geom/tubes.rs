use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{farthest_point_sample, radius_neighbors, DynamicPointCloud, Point};
use crate::error::{DimpError, Result};
use crate::rng;

/// Tokenizer geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubeParams {
    /// Spatial radius of each tube.
    pub radius: f64,
    /// Temporal extent `l` in frames (odd). Frames closer than `l/2` to the
    /// keypoint frame belong to the tube.
    pub temporal_extent: usize,
    /// Points gathered per tube per frame.
    pub n_pts: usize,
    /// Frame in which keypoints are sampled.
    pub keypoint_frame: usize,
}

impl Default for TubeParams {
    fn default() -> Self {
        Self {
            radius: 0.1,
            temporal_extent: 3,
            n_pts: 32,
            keypoint_frame: 0,
        }
    }
}

impl TubeParams {
    /// Frames within temporal distance `< l/2` of the keypoint frame.
    pub fn frame_window(&self, num_frames: usize) -> Vec<usize> {
        let l = self.temporal_extent;
        let k = self.keypoint_frame;
        (0..num_frames).filter(|&f| 2 * f.abs_diff(k) < l).collect()
    }
}

/// `K` spatio-temporal tubes anchored at farthest-point keypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeSet {
    pub params: TubeParams,
    /// Seed the tokenization was drawn from.
    pub seed: u64,
    /// Raw keypoint coordinates.
    pub keypoints: Vec<Point>,
    /// Keypoints minus their mean.
    pub centered: Vec<Point>,
    /// Frames covered by every tube.
    pub frame_window: Vec<usize>,
    /// Flat `K x frames x n_pts` point indices; `None` marks padding.
    membership: Vec<Option<usize>>,
    pub visible_idx: Vec<usize>,
    pub masked_idx: Vec<usize>,
}

impl TubeSet {
    pub fn num_tubes(&self) -> usize {
        self.keypoints.len()
    }

    pub fn window_len(&self) -> usize {
        self.frame_window.len()
    }

    pub fn n_pts(&self) -> usize {
        self.params.n_pts
    }

    /// Points per tube across the window.
    pub fn tube_len(&self) -> usize {
        self.window_len() * self.n_pts()
    }

    /// Member indices of tube `i`, frame-major; `None` entries are padding.
    pub fn members(&self, i: usize) -> &[Option<usize>] {
        let len = self.tube_len();
        &self.membership[i * len..(i + 1) * len]
    }

    pub fn padded_count(&self, i: usize) -> usize {
        self.members(i).iter().filter(|m| m.is_none()).count()
    }

    /// Frame index `t_f` attached to each tube's positional embedding.
    pub fn frame_idx(&self) -> usize {
        self.params.keypoint_frame
    }

    /// Points of tube `i` relative to its keypoint, `frames x n_pts` rows.
    /// Padding repeats the keypoint, so padded rows are exactly zero.
    pub fn relative_points(&self, seq: &DynamicPointCloud, i: usize) -> Vec<Point> {
        let key = self.keypoints[i];
        let n = self.n_pts();
        self.members(i)
            .iter()
            .enumerate()
            .map(|(slot, m)| match m {
                Some(idx) => {
                    let p = seq.frame(self.frame_window[slot / n])[*idx];
                    [p[0] - key[0], p[1] - key[1], p[2] - key[2]]
                }
                None => [0.0; 3],
            })
            .collect()
    }
}

/// Subtract the column mean.
pub fn center_normalize(centers: &[Point]) -> Vec<Point> {
    if centers.is_empty() {
        return Vec::new();
    }
    let k = centers.len() as f64;
    let mut mean = [0.0; 3];
    for c in centers {
        for a in 0..3 {
            mean[a] += c[a];
        }
    }
    for m in &mut mean {
        *m /= k;
    }
    centers
        .iter()
        .map(|c| [c[0] - mean[0], c[1] - mean[1], c[2] - mean[2]])
        .collect()
}

/// Tokenize a sequence into `k` tubes. The FPS start index is drawn from
/// `seed`; all tubes start out visible until [`mask_split`] runs.
pub fn build_tubes(
    seq: &DynamicPointCloud,
    k: usize,
    params: TubeParams,
    seed: u64,
) -> Result<TubeSet> {
    let n = seq.points_per_frame();
    if k == 0 || k > n {
        return Err(DimpError::invalid(format!("cannot build {k} tubes from {n} points")));
    }
    if params.temporal_extent == 0 || params.temporal_extent % 2 == 0 {
        return Err(DimpError::invalid(format!(
            "temporal extent must be odd, got {}",
            params.temporal_extent
        )));
    }
    if params.n_pts == 0 {
        return Err(DimpError::invalid("n_pts must be at least 1"));
    }
    if !(params.radius > 0.0) {
        return Err(DimpError::invalid("tube radius must be positive"));
    }
    if params.keypoint_frame >= seq.num_frames() {
        return Err(DimpError::invalid(format!(
            "keypoint frame {} outside a {}-frame sequence",
            params.keypoint_frame,
            seq.num_frames()
        )));
    }

    let anchor_frame = seq.frame(params.keypoint_frame);
    let start = rng::seeded(seed).random_range(0..n);
    let picks = farthest_point_sample(anchor_frame, k, start)?;
    let keypoints: Vec<Point> = picks.iter().map(|&i| anchor_frame[i]).collect();
    let frame_window = params.frame_window(seq.num_frames());

    let mut membership = Vec::with_capacity(k * frame_window.len() * params.n_pts);
    for key in &keypoints {
        for &f in &frame_window {
            let hits = radius_neighbors(seq.frame(f), key, params.radius, params.n_pts);
            let pad = params.n_pts - hits.len();
            membership.extend(hits.into_iter().map(Some));
            membership.extend(std::iter::repeat_n(None, pad));
        }
    }

    Ok(TubeSet {
        params,
        seed,
        centered: center_normalize(&keypoints),
        keypoints,
        frame_window,
        membership,
        visible_idx: (0..k).collect(),
        masked_idx: Vec::new(),
    })
}

/// `floor(k (1 - ratio))`, robust to the rounding of `1 - ratio`.
pub fn visible_count(k: usize, ratio: f64) -> usize {
    (k as f64 * (1.0 - ratio) + 1e-9).floor() as usize
}

/// Uniform random visible/masked partition with `K_v = floor(K (1 - ratio))`.
pub fn mask_split(mut tubes: TubeSet, ratio: f64, seed: u64) -> Result<TubeSet> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DimpError::invalid(format!("masking ratio {ratio} outside (0, 1)")));
    }
    let k = tubes.num_tubes();
    let k_v = visible_count(k, ratio);
    if k_v == 0 || k_v == k {
        return Err(DimpError::invalid(format!(
            "masking ratio {ratio} with {k} tubes leaves {k_v} visible and {} masked",
            k - k_v
        )));
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut visible = order[..k_v].to_vec();
    let mut masked = order[k_v..].to_vec();
    visible.sort_unstable();
    masked.sort_unstable();
    tubes.visible_idx = visible;
    tubes.masked_idx = masked;
    Ok(tubes)
}
