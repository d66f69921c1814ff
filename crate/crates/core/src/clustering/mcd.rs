//! FAST-MCD robust location and scatter for 3D point sets.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::geometry::{covariance_of, mean_of, Mat3, Vec3};
use crate::rng::{self, tag};

/// 0.975 quantile of the chi-square distribution with 3 degrees of freedom.
pub const CHI2_3_Q975: f64 = 9.348_403_604_496_148;
/// Median of the chi-square distribution with 3 degrees of freedom.
pub const CHI2_3_Q50: f64 = 2.365_973_884_375_338;

const N_STARTS: usize = 50;
const MAX_C_STEPS: usize = 100;
const DET_REL_TOL: f64 = 1e-12;
const DIM: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct McdEstimate {
    /// Mean of the reweighted inliers.
    pub location: Vec3,
    /// Raw MCD scatter rescaled by the consistency factor.
    pub covariance: Mat3,
    /// Squared robust Mahalanobis distance of every point under `covariance`.
    pub distances_sq: Vec<f64>,
    pub inlier_mask: Vec<bool>,
    /// Mean of the minimum-determinant h-subset.
    pub raw_location: Vec3,
    /// Covariance of the minimum-determinant h-subset.
    pub raw_covariance: Mat3,
    pub raw_determinant: f64,
    /// Indices of the minimum-determinant h-subset, ascending.
    pub support: Vec<usize>,
}

impl McdEstimate {
    pub fn inlier_indices(&self) -> Vec<usize> {
        (0..self.inlier_mask.len()).filter(|&i| self.inlier_mask[i]).collect()
    }
}

struct Candidate {
    det: f64,
    location: Vec3,
    covariance: Mat3,
    subset: Vec<usize>,
}

fn is_degenerate(cov: &Mat3) -> bool {
    let det = cov.determinant();
    let tr = (cov.0[0][0] + cov.0[1][1] + cov.0[2][2]) / DIM as f64;
    !(det.is_finite() && tr > 0.0 && det > 1e-14 * tr * tr * tr)
}

fn mahalanobis_sq(points: &[Vec3], loc: Vec3, inv: &Mat3) -> Vec<f64> {
    points.iter().map(|p| inv.quad_form(*p - loc)).collect()
}

/// Indices of the `h` smallest distances, ascending by index.
fn smallest_h(d2: &[f64], h: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..d2.len()).collect();
    idx.select_nth_unstable_by(h - 1, |&a, &b| d2[a].total_cmp(&d2[b]).then(a.cmp(&b)));
    idx.truncate(h);
    idx.sort_unstable();
    idx
}

fn concentrate(points: &[Vec3], mut subset: Vec<usize>, h: usize) -> Result<Candidate> {
    let mut prev_det = f64::INFINITY;
    let mut best: Option<Candidate> = None;
    for _ in 0..MAX_C_STEPS {
        let loc = mean_of(points, &subset);
        let cov = covariance_of(points, &subset, loc);
        if is_degenerate(&cov) {
            return Err(Error::Singular("h-subset covariance is degenerate".into()));
        }
        let det = cov.determinant();
        let converged = prev_det.is_finite() && (prev_det - det) <= DET_REL_TOL * prev_det;
        let inv = cov.inverse().ok_or_else(|| Error::Singular("non-invertible".into()))?;
        let next = smallest_h(&mahalanobis_sq(points, loc, &inv), h);
        if best.as_ref().is_none_or(|b| det < b.det) {
            best = Some(Candidate {
                det,
                location: loc,
                covariance: cov,
                subset,
            });
        }
        if converged {
            break;
        }
        subset = next;
        prev_det = det;
    }
    best.ok_or_else(|| Error::Singular("no C-step completed".into()))
}

fn elemental_start(points: &[Vec3], h: usize, rng: &mut rng::Rng) -> Result<Vec<usize>> {
    let n = points.len();
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..DIM + 1 {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let start = &idx[..DIM + 1];
    let loc = mean_of(points, start);
    let cov = covariance_of(points, start, loc);
    if is_degenerate(&cov) {
        return Err(Error::Singular("elemental subset is degenerate".into()));
    }
    let inv = cov.inverse().ok_or_else(|| Error::Singular("non-invertible".into()))?;
    Ok(smallest_h(&mahalanobis_sq(points, loc, &inv), h))
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Minimum covariance determinant estimate of `points`.
///
/// 50 random 4-point elemental starts are concentrated by C-steps; the
/// minimum-determinant subset is rescaled for consistency at the normal
/// model and points within the 0.975 chi-square cutoff are the inliers.
pub fn mincovdet(points: &[Vec3], support_fraction: f64, seed: u64) -> Result<McdEstimate> {
    let n = points.len();
    if n < 10 {
        return Err(Error::InvalidInput(format!("MCD needs at least 10 points, got {n}")));
    }
    if !(0.5..1.0).contains(&support_fraction) {
        return Err(Error::InvalidInput(format!(
            "support_fraction {support_fraction} outside [0.5, 1)"
        )));
    }
    let h = ((support_fraction * n as f64).ceil() as usize).min(n);
    if h < DIM + 1 {
        return Err(Error::InvalidInput(format!("support size {h} below 4")));
    }

    let mut best: Option<Candidate> = None;
    for start in 0..N_STARTS {
        let mut rng = rng::stream(&[tag::MCD, seed, start as u64]);
        let Ok(subset) = elemental_start(points, h, &mut rng) else {
            continue;
        };
        let Ok(cand) = concentrate(points, subset, h) else {
            continue;
        };
        if best.as_ref().is_none_or(|b| cand.det < b.det) {
            best = Some(cand);
        }
    }
    let best = best.ok_or_else(|| Error::Singular("every MCD start was degenerate".into()))?;

    let inv = best
        .covariance
        .inverse()
        .ok_or_else(|| Error::Singular("raw MCD scatter not invertible".into()))?;
    let raw_d2 = mahalanobis_sq(points, best.location, &inv);
    let factor = median(&raw_d2) / CHI2_3_Q50;
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Singular("consistency factor is zero".into()));
    }
    let covariance = best.covariance.scale(factor);
    let distances_sq: Vec<f64> = raw_d2.iter().map(|d| d / factor).collect();
    let inlier_mask: Vec<bool> = distances_sq.iter().map(|&d| d <= CHI2_3_Q975).collect();
    let inliers: Vec<usize> = (0..n).filter(|&i| inlier_mask[i]).collect();
    let location = mean_of(points, &inliers);

    Ok(McdEstimate {
        location,
        covariance,
        distances_sq,
        inlier_mask,
        raw_location: best.location,
        raw_covariance: best.covariance,
        raw_determinant: best.det,
        support: best.subset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn gaussian_cloud(center: Vec3, sigma: f64, n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = rng::stream(&[seed]);
        (0..n)
            .map(|_| {
                center
                    + Vec3::new(
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                    ) * sigma
            })
            .collect()
    }

    #[test]
    fn chi_square_constants() {
        // Independent check: regularized lower incomplete gamma P(3/2, x/2)
        // for k = 3 has the closed form erf(sqrt(x/2)) - sqrt(2x/pi) exp(-x/2).
        let cdf = |x: f64| {
            libm::erf((x / 2.0).sqrt()) - (2.0 * x / std::f64::consts::PI).sqrt() * (-x / 2.0).exp()
        };
        assert!((cdf(CHI2_3_Q975) - 0.975).abs() < 1e-14);
        assert!((cdf(CHI2_3_Q50) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn clean_cloud() {
        let sigma = 1.5;
        let n = 500;
        let truth = Vec3::new(2.0, -1.0, 4.0);
        let pts = gaussian_cloud(truth, sigma, n, 3);
        let est = mincovdet(&pts, 0.75, 1).unwrap();
        let bound = 3.0 * sigma / (n as f64).sqrt();
        let err = est.location - truth;
        assert!(err.x.abs() < bound && err.y.abs() < bound && err.z.abs() < bound, "{err:?}");
        let frac = est.inlier_mask.iter().filter(|&&b| b).count() as f64 / n as f64;
        assert!(frac >= 0.9, "{frac}");
    }

    #[test]
    fn contamination_is_rejected() {
        let sigma = 1.0;
        let mut pts = gaussian_cloud(Vec3::ZERO, sigma, 400, 5);
        pts.extend(gaussian_cloud(Vec3::new(20.0, 0.0, 0.0), sigma, 100, 6));
        let est = mincovdet(&pts, 0.75, 2).unwrap();
        assert!(est.location.norm() < 0.3, "{:?}", est.location);
        assert!(est.inlier_mask[400..].iter().all(|&b| !b));
    }

    #[test]
    fn beats_random_subsets() {
        let mut pts = gaussian_cloud(Vec3::ZERO, 1.0, 120, 8);
        pts.extend(gaussian_cloud(Vec3::new(0.0, 6.0, 0.0), 2.0, 40, 9));
        let est = mincovdet(&pts, 0.75, 4).unwrap();
        let h = est.support.len();
        let mut rng = rng::stream(&[77]);
        let mut idx: Vec<usize> = (0..pts.len()).collect();
        for _ in 0..1000 {
            for i in 0..h {
                let j = rng.random_range(i..idx.len());
                idx.swap(i, j);
            }
            let s = &idx[..h];
            let c = covariance_of(&pts, s, mean_of(&pts, s));
            assert!(est.raw_determinant <= c.determinant());
        }
    }

    #[test]
    fn input_validation() {
        let pts = gaussian_cloud(Vec3::ZERO, 1.0, 9, 1);
        assert!(matches!(mincovdet(&pts, 0.75, 0), Err(Error::InvalidInput(_))));
        let pts = gaussian_cloud(Vec3::ZERO, 1.0, 20, 1);
        assert!(mincovdet(&pts, 0.4, 0).is_err());
        assert!(mincovdet(&pts, 1.0, 0).is_err());
        let flat: Vec<Vec3> = (0..30).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(mincovdet(&flat, 0.75, 0), Err(Error::Singular(_))));
    }
}
