use approx::assert_relative_eq;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

use mcvd_core::channel::{hit_probability, invert_distance, ChannelParams};
use mcvd_core::clustering::{correct_centers, imbalance, kmeans, mincovdet, CorrectionParams, Method};
use mcvd_core::eval::{ecdf, match_clusters, total_angular_error};
use mcvd_core::rng;
use mcvd_core::sim::segment_sphere_hit;
use mcvd_core::{Mat3, Vec3};

fn gaussian(r: &mut rng::Rng) -> Vec3 {
    Vec3::new(
        StandardNormal.sample(r),
        StandardNormal.sample(r),
        StandardNormal.sample(r),
    )
}

/// Points on a sphere of radius 5 scattered around `k` separated poles.
fn blobs(k: usize, per: usize, spread: f64, seed: u64) -> Vec<Vec3> {
    let poles = [Vec3::Z, -Vec3::Z, Vec3::X, -Vec3::X, Vec3::Y, -Vec3::Y];
    let mut r = rng::stream(&[seed]);
    let mut pts = Vec::new();
    for pole in poles.iter().take(k) {
        for _ in 0..per {
            let p = (*pole + gaussian(&mut r) * spread).try_normalize(0.0).unwrap();
            pts.push(p * 5.0);
        }
    }
    pts
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn kmeans_partitions_and_is_rotation_equivariant(
        k in 2usize..5,
        seed in any::<u64>(),
        axis in (-1.0f64..1.0, -1.0f64..1.0, 0.1f64..1.0),
        angle in 0.0f64..std::f64::consts::TAU,
    ) {
        let pts = blobs(k, 60, 0.2, seed);
        let rot = Mat3::rotation(Vec3::new(axis.0, axis.1, axis.2).try_normalize(0.0).unwrap(), angle);
        let rotated: Vec<Vec3> = pts.iter().map(|p| rot.mul_vec(*p)).collect();
        let a = kmeans(&pts, k, 7).unwrap();
        let b = kmeans(&rotated, k, 7).unwrap();
        prop_assert!(a.labels(pts.len()).is_some());
        prop_assert_eq!(a.labels(pts.len()), b.labels(pts.len()));
        for (ca, cb) in a.clusters.iter().zip(&b.clusters) {
            prop_assert!(rot.mul_vec(ca.direction).dist(cb.direction) < 1e-9);
        }
    }

    #[test]
    fn corrections_keep_memberships(seed in any::<u64>(), k in 2usize..4) {
        let pts = blobs(k, 50, 0.3, seed);
        let base = kmeans(&pts, k, seed).unwrap();
        let params = CorrectionParams { seed, ..CorrectionParams::default() };
        for m in [Method::Density, Method::MinCovDet, Method::DensityMinCovDet] {
            let c = correct_centers(&pts, &base, m, &params).unwrap();
            prop_assert_eq!(c.labels(pts.len()), base.labels(pts.len()));
            prop_assert_eq!(c.sizes(), base.sizes());
            for cl in &c.clusters {
                prop_assert!((cl.direction.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn first_hit_is_monotone(d in 5.5f64..25.0, dd in 0.01f64..5.0, t in 0.01f64..2.0) {
        let p = ChannelParams::new(5.0, 79.4, t).unwrap();
        let later = ChannelParams::new(5.0, 79.4, t * 1.5).unwrap();
        let near = hit_probability(d, &p).unwrap().value();
        prop_assert!(hit_probability(d + dd, &p).unwrap().value() < near);
        prop_assert!(hit_probability(d, &later).unwrap().value() > near);
        prop_assert!(near > 0.0 && near < 5.0 / d);
    }

    #[test]
    fn inversion_round_trips(d in 5.5f64..25.0) {
        let p = ChannelParams::new(5.0, 79.4, 0.4).unwrap();
        let back = invert_distance(hit_probability(d, &p).unwrap().value(), &p, 30.0).unwrap();
        prop_assert!((back - d).abs() / d < 1e-9);
    }

    #[test]
    fn segment_hits_agree_with_dense_sampling(
        from in (-12.0f64..12.0, -12.0f64..12.0, -12.0f64..12.0),
        step in (-8.0f64..8.0, -8.0f64..8.0, -8.0f64..8.0),
    ) {
        let r = 5.0;
        let a = Vec3::new(from.0, from.1, from.2);
        prop_assume!(a.norm() > r + 1e-6);
        let b = a + Vec3::new(step.0, step.1, step.2);
        let samples = 20_000;
        let first_inside = (0..=samples)
            .map(|i| i as f64 / samples as f64)
            .find(|&s| (a + (b - a) * s).norm() < r);
        match segment_sphere_hit(a, b, r) {
            Some((p, s)) => {
                prop_assert!((p.norm() - r).abs() < 1e-9);
                prop_assert!((0.0..=1.0).contains(&s));
                prop_assert!(p.dist(a + (b - a) * s) < 1e-9);
                if let Some(s_grid) = first_inside {
                    prop_assert!(s <= s_grid && s_grid - s <= 1.0 / samples as f64 + 1e-12);
                }
            }
            None => prop_assert!(first_inside.is_none()),
        }
    }

    #[test]
    fn imbalance_is_bounded_and_symmetric(sizes in prop::collection::vec(0.0f64..3000.0, 2..6)) {
        prop_assume!(sizes.iter().any(|&s| s > 0.0));
        let v = imbalance(&sizes).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&v));
        let mut rev = sizes.clone();
        rev.reverse();
        prop_assert!((imbalance(&rev).unwrap().value - v).abs() < 1e-12);
        let scaled: Vec<f64> = sizes.iter().map(|s| s * 3.0).collect();
        prop_assert!((imbalance(&scaled).unwrap().value - v).abs() < 1e-12);
    }

    #[test]
    fn ecdf_is_monotone_step(values in prop::collection::vec(0.0f64..180.0, 1..200)) {
        let e = ecdf(&values).unwrap();
        prop_assert!(e.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
        prop_assert!((e.last().unwrap().1 - 1.0).abs() < 1e-15);
        for &(x, f) in &e {
            let below = values.iter().filter(|&&v| v <= x).count() as f64 / values.len() as f64;
            prop_assert!((f - below).abs() < 1e-12);
        }
    }

    #[test]
    fn matching_is_exhaustively_optimal(k in 1usize..7, seed in any::<u64>()) {
        let mut r = rng::stream(&[seed]);
        let est: Vec<Vec3> = (0..k).map(|_| gaussian(&mut r).try_normalize(0.0).unwrap()).collect();
        let truth: Vec<Vec3> = (0..k).map(|_| gaussian(&mut r).try_normalize(0.0).unwrap()).collect();
        let perm = match_clusters(&est, &truth).unwrap();
        let best = total_angular_error(&est, &truth, &perm);
        for p in permutations(k) {
            prop_assert!(best <= total_angular_error(&est, &truth, &p) + 1e-9);
        }
    }
}

#[test]
fn imbalance_arithmetic() {
    assert_relative_eq!(imbalance(&[300.0, 100.0]).unwrap().value, 0.5);
    assert_relative_eq!(imbalance(&[250.0, 250.0]).unwrap().value, 0.0);
    assert_relative_eq!(imbalance(&[10.0, 0.0]).unwrap().value, 1.0);
    // Pairs: (1,3) 0.5, (1,4) 0.6, (3,4) 1/7.
    assert_relative_eq!(
        imbalance(&[1.0, 3.0, 4.0]).unwrap().value,
        (0.5 + 0.6 + 1.0 / 7.0) / 3.0,
        epsilon = 1e-15
    );
}

#[test]
fn mcd_recovers_location_under_contamination() {
    let mut r = rng::stream(&[99]);
    let center = Vec3::new(1.0, -2.0, 3.0);
    let mut pts: Vec<Vec3> = (0..240).map(|_| center + gaussian(&mut r) * 0.5).collect();
    // 20% gross outliers in one clump.
    pts.extend((0..60).map(|_| Vec3::new(15.0, 15.0, 15.0) + gaussian(&mut r) * 0.3));
    let naive = pts.iter().fold(Vec3::ZERO, |a, p| a + *p) / pts.len() as f64;
    let est = mincovdet(&pts, 0.75, 3).unwrap();
    assert!(naive.dist(center) > 5.0);
    assert!(est.location.dist(center) < 0.15, "{:?}", est.location);
    assert!(est.inlier_mask[240..].iter().all(|&m| !m));
    let kept = est.inlier_mask[..240].iter().filter(|&&m| m).count();
    assert!(kept > 220, "{kept}");
}
