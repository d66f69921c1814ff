use super::{
    density_weighted_centroid, direction_of, knn_density_weights, mincovdet, ClusterSet, Method,
    DEFAULT_K_NN, DEFAULT_SUPPORT_FRACTION,
};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionParams {
    pub k_nn: usize,
    pub support_fraction: f64,
    pub seed: u64,
}

impl Default for CorrectionParams {
    fn default() -> Self {
        Self {
            k_nn: DEFAULT_K_NN,
            support_fraction: DEFAULT_SUPPORT_FRACTION,
            seed: 0,
        }
    }
}

fn corrected_center(
    members: &[Vec3],
    method: Method,
    params: &CorrectionParams,
    cluster: usize,
) -> Result<Vec3> {
    let mcd_seed = || rng::derive(&[tag::MCD, params.seed, cluster as u64]);
    match method {
        Method::Density => {
            let w = knn_density_weights(members, params.k_nn)?;
            density_weighted_centroid(members, &w)
        }
        Method::MinCovDet => Ok(mincovdet(members, params.support_fraction, mcd_seed())?.location),
        Method::DensityMinCovDet => {
            let est = mincovdet(members, params.support_fraction, mcd_seed())?;
            let inliers: Vec<Vec3> = members
                .iter()
                .zip(&est.inlier_mask)
                .filter(|(_, &keep)| keep)
                .map(|(p, _)| *p)
                .collect();
            let w = knn_density_weights(&inliers, params.k_nn)?;
            density_weighted_centroid(&inliers, &w)
        }
        Method::KMeans | Method::Gmm => unreachable!("not a correction"),
    }
}

/// Move each K-means center with the chosen correction. Memberships and
/// sizes are left untouched. Clusters too small for the correction keep
/// their K-means center and are marked `fallback`.
pub fn correct_centers(
    points: &[Vec3],
    base: &ClusterSet,
    method: Method,
    params: &CorrectionParams,
) -> Result<ClusterSet> {
    if base.method != Method::KMeans {
        return Err(Error::InvalidInput(format!(
            "corrections apply to K-means partitions, got {}",
            base.method
        )));
    }
    if !method.is_correction() {
        return Err(Error::InvalidInput(format!("{method} is not a center correction")));
    }
    let mut out = base.clone();
    out.method = method;
    for (ci, cluster) in out.clusters.iter_mut().enumerate() {
        let members: Vec<Vec3> = cluster.member_indices.iter().map(|&i| points[i]).collect();
        match corrected_center(&members, method, params, ci) {
            Ok(c) => {
                cluster.centroid = c;
                cluster.direction = direction_of(c);
                cluster.fallback = false;
            }
            Err(e) => {
                log::debug!("cluster {ci}: {method} correction skipped ({e})");
                cluster.fallback = true;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::kmeans;
    use crate::geometry::mean_of;
    use rand::Rng as _;

    /// Points on a sphere of radius 5 in a cap of half-angle `spread` around `axis`.
    fn cap(axis: Vec3, spread_rad: f64, n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = rng::stream(&[seed]);
        let a = axis / axis.norm();
        let t = if a.x.abs() < 0.9 { Vec3::X } else { Vec3::Y };
        let e1 = (t - a * t.dot(a)).try_normalize(1e-12).unwrap();
        let e2 = a.cross(e1);
        (0..n)
            .map(|_| {
                // Uniform in solid angle on the cap.
                let cos_max = spread_rad.cos();
                let c = 1.0 - rng.random::<f64>() * (1.0 - cos_max);
                let s = (1.0 - c * c).sqrt();
                let phi = rng.random::<f64>() * std::f64::consts::TAU;
                (a * c + e1 * (s * phi.cos()) + e2 * (s * phi.sin())) * 5.0
            })
            .collect()
    }

    fn angle(a: Vec3, b: Vec3) -> f64 {
        (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn uniform_cluster_is_nearly_unchanged() {
        // Flat density leaves the MCD subset non-unique (equal-area ellipses
        // share a determinant), so MCD variants get a looser bound.
        let spread = 0.4;
        let pts = cap(Vec3::Z, spread, 800, 1);
        let base = kmeans(&pts, 1, 0).unwrap();
        for (m, tol) in [
            (Method::Density, 0.05 * spread),
            (Method::MinCovDet, 0.15 * spread),
            (Method::DensityMinCovDet, 0.15 * spread),
        ] {
            let c = correct_centers(&pts, &base, m, &CorrectionParams::default()).unwrap();
            let a = angle(c.clusters[0].direction, base.clusters[0].direction);
            assert!(a < tol, "{m}: {} deg", a.to_degrees());
            assert!(!c.clusters[0].fallback);
        }
    }

    #[test]
    fn stragglers_pull_kmeans_but_not_corrections() {
        let core_axis = Vec3::new(0.2, 0.1, 1.0);
        let mut pts = cap(core_axis, 0.25, 900, 2);
        // Sparse stragglers off to one side, mimicking interference from
        // a neighbouring transmitter.
        pts.extend(cap(Vec3::new(1.0, 0.1, 0.4), 0.35, 100, 3));
        let base = kmeans(&pts, 1, 0).unwrap();
        let km = angle(base.clusters[0].direction, core_axis);
        for m in [Method::Density, Method::MinCovDet, Method::DensityMinCovDet] {
            let c = correct_centers(&pts, &base, m, &CorrectionParams::default()).unwrap();
            let a = angle(c.clusters[0].direction, core_axis);
            assert!(a < km, "{m}: {a} vs kmeans {km}");
        }
    }

    #[test]
    fn hybrid_is_composition_of_public_ops() {
        let mut pts = cap(Vec3::Y, 0.3, 300, 4);
        pts.extend(cap(Vec3::X, 0.3, 40, 5));
        let base = kmeans(&pts, 1, 0).unwrap();
        let params = CorrectionParams { seed: 17, ..Default::default() };
        let c = correct_centers(&pts, &base, Method::DensityMinCovDet, &params).unwrap();
        let members: Vec<Vec3> = base.clusters[0].member_indices.iter().map(|&i| pts[i]).collect();
        let est = mincovdet(&members, params.support_fraction, rng::derive(&[tag::MCD, 17, 0])).unwrap();
        let inl: Vec<Vec3> = members
            .iter()
            .zip(&est.inlier_mask)
            .filter(|(_, &b)| b)
            .map(|(p, _)| *p)
            .collect();
        let w = knn_density_weights(&inl, params.k_nn).unwrap();
        assert_eq!(c.clusters[0].centroid, density_weighted_centroid(&inl, &w).unwrap());
    }

    #[test]
    fn memberships_are_preserved_and_small_clusters_fall_back() {
        let mut pts = cap(Vec3::Z, 0.3, 200, 6);
        pts.extend(cap(-Vec3::Z, 0.05, 6, 7));
        let base = kmeans(&pts, 2, 1).unwrap();
        for m in [Method::Density, Method::MinCovDet, Method::DensityMinCovDet] {
            let c = correct_centers(&pts, &base, m, &CorrectionParams::default()).unwrap();
            assert_eq!(c.sizes(), base.sizes());
            for (a, b) in c.clusters.iter().zip(&base.clusters) {
                assert_eq!(a.member_indices, b.member_indices);
                if a.size < 10 {
                    assert!(a.fallback);
                    assert_eq!(a.centroid, mean_of(&pts, &b.member_indices));
                }
            }
        }
    }

    #[test]
    fn rejects_non_kmeans_base() {
        let pts = cap(Vec3::Z, 0.3, 50, 8);
        let mut base = kmeans(&pts, 1, 0).unwrap();
        assert!(correct_centers(&pts, &base, Method::KMeans, &CorrectionParams::default()).is_err());
        base.method = Method::Gmm;
        assert!(correct_centers(&pts, &base, Method::Density, &CorrectionParams::default()).is_err());
    }
}
