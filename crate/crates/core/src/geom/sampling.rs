use super::{dist2, Point};
use crate::error::{DimpError, Result};

/// Greedy farthest point sampling starting from `start`.
///
/// Each new pick maximises the squared distance to the nearest already
/// selected point; ties go to the lowest index.
pub fn farthest_point_sample(points: &[Point], k: usize, start: usize) -> Result<Vec<usize>> {
    let m = points.len();
    if m == 0 {
        return Err(DimpError::invalid("farthest point sampling on an empty set"));
    }
    if k == 0 || k > m {
        return Err(DimpError::invalid(format!(
            "cannot select {k} of {m} points"
        )));
    }
    if start >= m {
        return Err(DimpError::invalid(format!("start index {start} out of range for {m} points")));
    }

    let mut selected = Vec::with_capacity(k);
    let mut taken = vec![false; m];
    let mut min_d = vec![f64::INFINITY; m];
    let mut current = start;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == k {
            break;
        }
        let anchor = points[current];
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = dist2(p, &anchor);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if !taken[i] && min_d[i] > best.1 {
                best = (i, min_d[i]);
            }
        }
        current = best.0;
    }
    Ok(selected)
}

/// Indices of points strictly within radius `r` of `center`, nearest first
/// (ties by index), truncated to `max_n`.
pub fn radius_neighbors(points: &[Point], center: &Point, r: f64, max_n: usize) -> Vec<usize> {
    let r2 = r * r;
    let mut hits: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let d = dist2(p, center);
            (d < r2).then_some((d, i))
        })
        .collect();
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    hits.truncate(max_n);
    hits.into_iter().map(|(_, i)| i).collect()
}
