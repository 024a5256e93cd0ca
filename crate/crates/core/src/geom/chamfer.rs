use super::{dist2, Point};
use crate::error::{DimpError, Result};

/// For every point of `from`, the index of its nearest point in `to`
/// (squared Euclidean distance, ties to the lowest index) and that distance.
pub fn nearest_indices(from: &[Point], to: &[Point]) -> Vec<(usize, f64)> {
    from.iter()
        .map(|a| {
            let mut best = (0, f64::INFINITY);
            for (j, b) in to.iter().enumerate() {
                let d = dist2(a, b);
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .collect()
}

/// Symmetric Chamfer distance with squared nearest-neighbour distances,
/// each direction averaged over its source set.
pub fn chamfer(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(DimpError::invalid("chamfer distance of an empty point set"));
    }
    let ab: f64 = nearest_indices(a, b).iter().map(|&(_, d)| d).sum::<f64>() / a.len() as f64;
    let ba: f64 = nearest_indices(b, a).iter().map(|&(_, d)| d).sum::<f64>() / b.len() as f64;
    Ok(ab + ba)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_zero() {
        let a = [[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]];
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn singletons() {
        let a = [[0.0, 0.0, 0.0]];
        let b = [[1.0, 2.0, 2.0]];
        assert_eq!(chamfer(&a, &b).unwrap(), 18.0);
    }

    #[test]
    fn empty_is_rejected() {
        assert!(chamfer(&[], &[[0.0; 3]]).is_err());
        assert!(chamfer(&[[0.0; 3]], &[]).is_err());
    }

    #[test]
    fn ties_pick_lowest_index() {
        let from = [[0.0, 0.0, 0.0]];
        let to = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]];
        assert_eq!(nearest_indices(&from, &to)[0].0, 0);
    }
}
