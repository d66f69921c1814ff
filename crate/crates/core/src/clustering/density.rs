use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Regularizer added to the mean neighbour distance (µm).
pub const DENSITY_EPS: f64 = 1e-9;

/// Local-density weight of every point: `1 / (mean distance to its k_nn
/// nearest neighbours + eps)`. Dense regions get large weights.
pub fn knn_density_weights(points: &[Vec3], k_nn: usize) -> Result<Vec<f64>> {
    if k_nn == 0 || points.len() <= k_nn {
        return Err(Error::InvalidInput(format!(
            "density weights need more than k_nn = {k_nn} points, got {}",
            points.len()
        )));
    }
    let n = points.len();
    let mut dists = Vec::with_capacity(n - 1);
    let weights = (0..n)
        .map(|i| {
            dists.clear();
            let p = points[i];
            dists.extend(
                points
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, q)| p.dist(*q)),
            );
            dists.select_nth_unstable_by(k_nn - 1, f64::total_cmp);
            let mut nearest = dists[..k_nn].to_vec();
            nearest.sort_by(f64::total_cmp);
            let mean = nearest.iter().sum::<f64>() / k_nn as f64;
            1.0 / (mean + DENSITY_EPS)
        })
        .collect();
    Ok(weights)
}

/// Weighted mean `sum w_j x_j / sum w_j`.
pub fn density_weighted_centroid(points: &[Vec3], weights: &[f64]) -> Result<Vec3> {
    if points.is_empty() || points.len() != weights.len() {
        return Err(Error::InvalidInput(format!(
            "need equal non-empty points/weights, got {} and {}",
            points.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidInput("weights must be finite and non-negative".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("weights sum to zero".into()));
    }
    let mut acc = Vec3::ZERO;
    for (p, &w) in points.iter().zip(weights) {
        acc += *p * w;
    }
    Ok(acc / total)
}
