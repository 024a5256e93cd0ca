//! Point cloud sequences and the geometric kernels used by tokenization:
//! farthest point sampling, radius queries, spatio-temporal tubes, masking
//! and the Chamfer distance.

mod chamfer;
mod io;
mod sampling;
mod tubes;

pub use chamfer::{chamfer, nearest_indices};
pub use io::{read_dpc1, write_dpc1, DPC1_MAGIC};
pub use sampling::{farthest_point_sample, radius_neighbors};
pub use tubes::{build_tubes, center_normalize, mask_split, visible_count, TubeParams, TubeSet};

use crate::error::{DimpError, Result};

pub type Point = [f64; 3];

#[inline]
pub fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// An `L`-frame sequence of `N` points per frame, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicPointCloud {
    num_frames: usize,
    points_per_frame: usize,
    coords: Vec<Point>,
}

impl DynamicPointCloud {
    pub fn new(frames: Vec<Vec<Point>>) -> Result<Self> {
        let num_frames = frames.len();
        if num_frames == 0 {
            return Err(DimpError::invalid("sequence has no frames"));
        }
        let points_per_frame = frames[0].len();
        if points_per_frame == 0 {
            return Err(DimpError::invalid("frame 0 has no points"));
        }
        let mut coords = Vec::with_capacity(num_frames * points_per_frame);
        for (t, frame) in frames.into_iter().enumerate() {
            if frame.len() != points_per_frame {
                return Err(DimpError::invalid(format!(
                    "frame {t} has {} points, expected {points_per_frame}",
                    frame.len()
                )));
            }
            coords.extend(frame);
        }
        Self::from_flat(num_frames, points_per_frame, coords)
    }

    /// Build from a flat frame-major buffer of `l * n` points.
    pub fn from_flat(l: usize, n: usize, coords: Vec<Point>) -> Result<Self> {
        if l == 0 || n == 0 {
            return Err(DimpError::invalid("sequence dimensions must be positive"));
        }
        if coords.len() != l * n {
            return Err(DimpError::ShapeMismatch {
                expected: vec![l, n, 3],
                got: vec![coords.len(), 3],
            });
        }
        if coords.iter().flatten().any(|c| !c.is_finite()) {
            return Err(DimpError::invalid("sequence contains non-finite coordinates"));
        }
        Ok(Self {
            num_frames: l,
            points_per_frame: n,
            coords,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn points_per_frame(&self) -> usize {
        self.points_per_frame
    }

    pub fn frame(&self, t: usize) -> &[Point] {
        let n = self.points_per_frame;
        &self.coords[t * n..(t + 1) * n]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[Point]> {
        self.coords.chunks(self.points_per_frame)
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    /// Copy of the sequence with every point shifted by `v`.
    pub fn translated(&self, v: Point) -> Self {
        let coords = self
            .coords
            .iter()
            .map(|p| [p[0] + v[0], p[1] + v[1], p[2] + v[2]])
            .collect();
        Self {
            coords,
            ..*self
        }
    }
}
