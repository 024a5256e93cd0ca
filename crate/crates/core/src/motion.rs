//! Displacement targets, motion files, sample diversity and the
//! per-timestep denoising error profile.

use std::fs;
use std::path::Path;

use crate::autograd::Tensor;
use crate::diffusion::{forward_sample, x0_from_eps, DiffusionSchedule};
use crate::error::{DimpError, Result};
use crate::geom::{nearest_indices, DynamicPointCloud, Point};
use crate::rng;

pub const MOT1_MAGIC: &[u8; 4] = b"MOT1";

/// Per-point displacements between consecutive frames.
///
/// `displacements` has one row per point and `(L-1)*3` columns laid out
/// frame-major then xyz.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionField {
    pub displacements: Tensor,
    /// For each frame pair `t`, the index in frame `t+1` matched to each
    /// point of frame `t`.
    pub correspondence: Vec<Vec<usize>>,
}

impl MotionField {
    /// Build from explicit correspondences.
    pub fn from_correspondence(seq: &DynamicPointCloud, corr: Vec<Vec<usize>>) -> Result<Self> {
        let (l, n) = (seq.num_frames(), seq.points_per_frame());
        if l < 2 {
            return Err(DimpError::invalid(format!("motion needs at least 2 frames, got {l}")));
        }
        if corr.len() != l - 1 || corr.iter().any(|c| c.len() != n || c.iter().any(|&j| j >= n)) {
            return Err(DimpError::invalid("correspondence does not match the sequence"));
        }
        let mut disp = Tensor::zeros((n, (l - 1) * 3));
        for (t, c) in corr.iter().enumerate() {
            let (a, b) = (seq.frame(t), seq.frame(t + 1));
            for i in 0..n {
                for k in 0..3 {
                    disp[[i, 3 * t + k]] = b[c[i]][k] - a[i][k];
                }
            }
        }
        Ok(Self {
            displacements: disp,
            correspondence: corr,
        })
    }

    /// Identity correspondence, for generators that keep point identity.
    pub fn identity(seq: &DynamicPointCloud) -> Result<Self> {
        let n = seq.points_per_frame();
        let l = seq.num_frames();
        Self::from_correspondence(seq, vec![(0..n).collect(); l.saturating_sub(1)])
    }

    pub fn num_points(&self) -> usize {
        self.displacements.nrows()
    }

    /// Number of frame pairs, `L - 1`.
    pub fn num_steps(&self) -> usize {
        self.displacements.ncols() / 3
    }

    pub fn get(&self, i: usize, t: usize) -> Point {
        let r = self.displacements.row(i);
        [r[3 * t], r[3 * t + 1], r[3 * t + 2]]
    }
}

/// Nearest neighbour of each point of `a` in `b`, ties to the lowest index.
pub fn knn_correspondence(a: &[Point], b: &[Point]) -> Vec<usize> {
    nearest_indices(a, b).into_iter().map(|(j, _)| j).collect()
}

/// Motion field from nearest-neighbour correspondence between consecutive
/// frames.
pub fn displacement_field(seq: &DynamicPointCloud) -> Result<MotionField> {
    if seq.num_frames() < 2 {
        return Err(DimpError::invalid(format!(
            "motion needs at least 2 frames, got {}",
            seq.num_frames()
        )));
    }
    let corr = (0..seq.num_frames() - 1)
        .map(|t| knn_correspondence(seq.frame(t), seq.frame(t + 1)))
        .collect();
    MotionField::from_correspondence(seq, corr)
}

/// Root mean square over every displacement coordinate of every field.
pub fn motion_rms<'a>(fields: impl IntoIterator<Item = &'a Tensor>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for f in fields {
        s += f.iter().map(|v| v * v).sum::<f64>();
        n += f.len();
    }
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}

/// Contents of a `MOT1` file.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionFile {
    pub displacements: Tensor,
    /// Dataset-level scale dividing displacements before diffusion.
    pub rms: f64,
}

impl MotionFile {
    /// Displacements divided by the stored scale.
    pub fn standardized(&self) -> Tensor {
        if self.rms > 0.0 {
            &self.displacements / self.rms
        } else {
            self.displacements.clone()
        }
    }
}

/// Magic, `u32` N, `u32` L-1, `f32` entries point-major, frame-major, xyz,
/// then the `f32` scale.
pub fn encode_mot1(displacements: &Tensor, rms: f64) -> Vec<u8> {
    let (n, w) = displacements.dim();
    let mut buf = Vec::with_capacity(16 + 4 * n * w);
    buf.extend_from_slice(MOT1_MAGIC);
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&((w / 3) as u32).to_le_bytes());
    for v in displacements.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    buf.extend_from_slice(&(rms as f32).to_le_bytes());
    buf
}

pub fn decode_mot1(bytes: &[u8], path: &Path) -> Result<MotionFile> {
    let corrupt = |reason: &str| DimpError::CorruptFile {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 16 || &bytes[..4] != MOT1_MAGIC {
        return Err(corrupt("missing MOT1 header"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let steps = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != (n * steps * 3 + 1) * 4 {
        return Err(corrupt("payload length does not match header"));
    }
    let vals: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let rms = vals[vals.len() - 1];
    if vals.iter().any(|v| !v.is_finite()) || rms < 0.0 {
        return Err(corrupt("non-finite or negative entries"));
    }
    let displacements = Tensor::from_shape_vec((n, steps * 3), vals[..vals.len() - 1].to_vec())
        .map_err(|e| corrupt(&e.to_string()))?;
    Ok(MotionFile { displacements, rms })
}

pub fn write_mot1(displacements: &Tensor, rms: f64, path: &Path) -> Result<()> {
    fs::write(path, encode_mot1(displacements, rms)).map_err(|e| DimpError::io(path, e))
}

pub fn read_mot1(path: &Path) -> Result<MotionFile> {
    let bytes = fs::read(path).map_err(|e| DimpError::io(path, e))?;
    decode_mot1(&bytes, path)
}

/// Mean pairwise Euclidean distance between samples, divided by the square
/// root of the flattened dimension.
pub fn sample_diversity(samples: &[Tensor]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(DimpError::invalid(format!(
            "diversity needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let dim = samples[0].raw_dim();
    if samples.iter().any(|s| s.raw_dim() != dim) {
        return Err(DimpError::invalid("samples differ in shape"));
    }
    let len = samples[0].len() as f64;
    let (mut total, mut pairs) = (0.0, 0usize);
    for a in 0..samples.len() {
        for b in a + 1..samples.len() {
            let d: f64 = samples[a]
                .iter()
                .zip(samples[b].iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            total += d.sqrt();
            pairs += 1;
        }
    }
    Ok(total / pairs as f64 / len.sqrt())
}

/// Mean denoising error at one timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePoint {
    pub t: usize,
    /// Mean squared error of the implied clean field, per coordinate.
    pub x0_error: f64,
    /// Mean squared error of the noise prediction, per coordinate.
    pub eps_error: f64,
}

/// Deciles of `[1, T]`: `round(T * q / 10)` for `q = 1..=10`.
pub fn decile_grid(total: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = (1..=10)
        .map(|q| ((total as f64 * q as f64 / 10.0).round() as usize).max(1))
        .collect();
    grid.dedup();
    grid
}

/// Error profile for an arbitrary predictor `predict(item, m_t, t)`.
/// Noise for item `i` at step `t` is drawn from `derive(seed, [t, i])`.
pub fn error_profile_with<F>(
    fields: &[Tensor],
    sched: &DiffusionSchedule,
    t_grid: &[usize],
    seed: u64,
    mut predict: F,
) -> Result<Vec<ProfilePoint>>
where
    F: FnMut(usize, &Tensor, usize) -> Result<Tensor>,
{
    if fields.is_empty() {
        return Err(DimpError::invalid("error profile over an empty dataset"));
    }
    let mut out = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let (mut x0_err, mut eps_err, mut count) = (0.0, 0.0, 0usize);
        for (i, m0) in fields.iter().enumerate() {
            let mut r = rng::seeded(rng::derive(seed, &[t as u64, i as u64]));
            let eps: Tensor = rng::standard_normal(m0.raw_dim(), &mut r);
            let m_t = forward_sample(m0, t, &eps, sched)?;
            let eps_hat = predict(i, &m_t, t)?;
            let x0_hat = x0_from_eps(&m_t, &eps_hat, t, sched)?;
            x0_err += (m0 - &x0_hat).mapv(|v| v * v).sum();
            eps_err += (&eps - &eps_hat).mapv(|v| v * v).sum();
            count += m0.len();
        }
        out.push(ProfilePoint {
            t,
            x0_error: x0_err / count as f64,
            eps_error: eps_err / count as f64,
        });
    }
    Ok(out)
}

/// Denoising error profile of a model's motion head over `items`
/// (sequence, standardized field, seed), each conditioned on its decoder
/// context.
pub fn timestep_error_profile(
    state: &crate::model::ModelState,
    items: &[(&DynamicPointCloud, &Tensor, u64)],
    center_sched: &DiffusionSchedule,
    motion_sched: &DiffusionSchedule,
    t_grid: &[usize],
    seed: u64,
) -> Result<Vec<ProfilePoint>> {
    let contexts = items
        .iter()
        .map(|(seq, _, s)| crate::sampling::decoder_context(state, seq, center_sched, *s))
        .collect::<Result<Vec<_>>>()?;
    let fields: Vec<Tensor> = items.iter().map(|(_, m, _)| (*m).clone()).collect();
    error_profile_with(&fields, motion_sched, t_grid, seed, |i, m_t, t| {
        crate::sampling::predict_noise(state, m_t, t, &contexts[i])
    })
}

/// CSV with a header row `t,x0_error,eps_error`.
pub fn profile_csv(points: &[ProfilePoint]) -> String {
    let mut s = String::from("t,x0_error,eps_error\n");
    for p in points {
        s.push_str(&format!("{},{:.9e},{:.9e}\n", p.t, p.x0_error, p.eps_error));
    }
    s
}

/// Whether both the first and last grid entries sit below the middle one.
pub fn is_u_shaped(points: &[ProfilePoint]) -> bool {
    if points.len() < 3 {
        return false;
    }
    let mid = points[points.len() / 2].x0_error;
    points[0].x0_error < mid && points[points.len() - 1].x0_error < mid
}
