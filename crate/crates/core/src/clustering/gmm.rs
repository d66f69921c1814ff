//! Gaussian mixture with full covariances fitted by EM, seeded from K-means.

use std::f64::consts::PI;

use super::{kmeans, ClusterSet, Method};
use crate::error::{Error, Result};
use crate::geometry::{covariance_of, Mat3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmOptions {
    /// Added to every covariance diagonal (µm²).
    pub ridge: f64,
    pub max_iter: usize,
    /// Stop when the relative log-likelihood change drops below this.
    pub tol: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            ridge: 1e-6,
            max_iter: 200,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub weights: Vec<f64>,
    pub means: Vec<Vec3>,
    pub covariances: Vec<Mat3>,
    /// Total log-likelihood before the first M-step and after every EM iteration.
    pub log_likelihood: Vec<f64>,
    pub labels: Vec<usize>,
}

struct Component {
    log_norm: f64,
    inv: Mat3,
}

fn prepare(weights: &[f64], covs: &[Mat3]) -> Result<Vec<Component>> {
    weights
        .iter()
        .zip(covs)
        .map(|(&w, c)| {
            let det = c.determinant();
            let inv = c.inverse();
            match (inv, det > 0.0 && det.is_finite() && c.cholesky().is_some()) {
                (Some(inv), true) => Ok(Component {
                    log_norm: w.ln() - 0.5 * (3.0 * (2.0 * PI).ln() + det.ln()),
                    inv,
                }),
                _ => Err(Error::Singular(format!(
                    "mixture covariance collapsed (det = {det:e})"
                ))),
            }
        })
        .collect()
}

/// E-step: responsibilities (row per point) and total log-likelihood.
fn e_step(points: &[Vec3], means: &[Vec3], comps: &[Component], resp: &mut [f64]) -> f64 {
    let k = means.len();
    let mut ll = 0.0;
    for (i, p) in points.iter().enumerate() {
        let row = &mut resp[i * k..(i + 1) * k];
        let mut max = f64::NEG_INFINITY;
        for j in 0..k {
            let d = *p - means[j];
            row[j] = comps[j].log_norm - 0.5 * comps[j].inv.quad_form(d);
            max = max.max(row[j]);
        }
        let mut sum = 0.0;
        for r in row.iter_mut() {
            *r = (*r - max).exp();
            sum += *r;
        }
        for r in row.iter_mut() {
            *r /= sum;
        }
        ll += max + sum.ln();
    }
    ll
}

pub fn gmm_with_trace(points: &[Vec3], k: usize, seed: u64, opts: &GmmOptions) -> Result<GmmFit> {
    let n = points.len();
    if k == 0 || n < 4 * k {
        return Err(Error::InvalidInput(format!(
            "GMM with k = {k} needs at least {} points, got {n}",
            4 * k.max(1)
        )));
    }
    let init = kmeans(points, k, seed)?;
    let ridge = Mat3::diag(opts.ridge);
    let mut weights: Vec<f64> = init.clusters.iter().map(|c| c.size as f64 / n as f64).collect();
    let mut means: Vec<Vec3> = init.clusters.iter().map(|c| c.centroid).collect();
    let mut covs: Vec<Mat3> = init
        .clusters
        .iter()
        .map(|c| covariance_of(points, &c.member_indices, c.centroid).add(&ridge))
        .collect();

    let mut resp = vec![0.0; n * k];
    let mut history = Vec::new();
    let mut ll = e_step(points, &means, &prepare(&weights, &covs)?, &mut resp);
    history.push(ll);

    for _ in 0..opts.max_iter {
        // M-step.
        for j in 0..k {
            let mut nk = 0.0;
            let mut mu = Vec3::ZERO;
            for (i, p) in points.iter().enumerate() {
                let r = resp[i * k + j];
                nk += r;
                mu += *p * r;
            }
            if !(nk > 1e-10) {
                return Err(Error::Singular(format!("mixture component {j} lost all mass")));
            }
            mu = mu / nk;
            let mut c = [[0.0; 3]; 3];
            for (i, p) in points.iter().enumerate() {
                let r = resp[i * k + j];
                let d = (*p - mu).to_array();
                for a in 0..3 {
                    for b in a..3 {
                        c[a][b] += r * d[a] * d[b];
                    }
                }
            }
            for a in 0..3 {
                for b in a..3 {
                    c[a][b] /= nk;
                    c[b][a] = c[a][b];
                }
            }
            weights[j] = nk / n as f64;
            means[j] = mu;
            covs[j] = Mat3(c).add(&ridge);
        }
        let next = e_step(points, &means, &prepare(&weights, &covs)?, &mut resp);
        history.push(next);
        let converged = ((next - ll) / ll.abs().max(f64::MIN_POSITIVE)).abs() < opts.tol;
        ll = next;
        if converged {
            break;
        }
    }

    let mut labels: Vec<usize> = (0..n)
        .map(|i| {
            let row = &resp[i * k..(i + 1) * k];
            (0..k).fold(0, |b, j| if row[j] > row[b] { j } else { b })
        })
        .collect();
    repair_empty_components(&resp, k, &mut labels);

    Ok(GmmFit {
        weights,
        means,
        covariances: covs,
        log_likelihood: history,
        labels,
    })
}

/// Give every component with no hard members the point with the highest
/// responsibility for it, taken from a cluster that can spare one.
fn repair_empty_components(resp: &[f64], k: usize, labels: &mut [usize]) {
    let n = labels.len();
    for j in 0..k {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        if counts[j] > 0 {
            continue;
        }
        let donor = (0..n)
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| resp[a * k + j].total_cmp(&resp[b * k + j]).then(b.cmp(&a)));
        if let Some(i) = donor {
            labels[i] = j;
        }
    }
}

/// Hard-assignment GMM clustering. Centroids are the component means and
/// sizes the hard-assignment counts.
pub fn gmm(points: &[Vec3], k: usize, seed: u64) -> Result<ClusterSet> {
    let fit = gmm_with_trace(points, k, seed, &GmmOptions::default())?;
    let mut cs = ClusterSet::from_labels(Method::Gmm, points, &fit.labels, k);
    for (c, mu) in cs.clusters.iter_mut().zip(&fit.means) {
        c.centroid = *mu;
        c.direction = super::direction_of(*mu);
    }
    Ok(cs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mean;
    use crate::rng;
    use rand::Rng as _;
    use rand_distr::StandardNormal;

    fn blob(center: Vec3, sigma: f64, n: usize, rng: &mut rng::Rng) -> Vec<Vec3> {
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
    fn separated_blobs() {
        let mut rng = rng::stream(&[1]);
        let a = blob(Vec3::new(10.0, 0.0, 0.0), 0.5, 300, &mut rng);
        let b = blob(Vec3::new(-10.0, 0.0, 0.0), 0.5, 300, &mut rng);
        let (ma, mb) = (mean(&a), mean(&b));
        let mut pts = a;
        pts.extend(b);
        let cs = gmm(&pts, 2, 3).unwrap();
        let mut found = [false, false];
        for c in &cs.clusters {
            if (c.centroid - ma).norm() < 1e-2 {
                found[0] = true;
            }
            if (c.centroid - mb).norm() < 1e-2 {
                found[1] = true;
            }
            assert_eq!(c.size, 300);
        }
        assert_eq!(found, [true, true]);
    }

    #[test]
    fn single_component_is_sample_moments() {
        let mut rng = rng::stream(&[2]);
        let pts = blob(Vec3::new(1.0, 2.0, 3.0), 2.0, 200, &mut rng);
        let fit = gmm_with_trace(&pts, 1, 0, &GmmOptions::default()).unwrap();
        let m = mean(&pts);
        assert!((fit.means[0] - m).norm() < 1e-12);
        let idx: Vec<usize> = (0..pts.len()).collect();
        let c = covariance_of(&pts, &idx, m).add(&Mat3::diag(1e-6));
        for a in 0..3 {
            for b in 0..3 {
                assert!((fit.covariances[0].0[a][b] - c.0[a][b]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn log_likelihood_non_decreasing() {
        for seed in 0..100u64 {
            let mut rng = rng::stream(&[seed, 5]);
            let k = 2 + (seed % 3) as usize;
            let mut pts = Vec::new();
            for _ in 0..k {
                let c = blob(Vec3::ZERO, 4.0, 1, &mut rng)[0];
                let s = 0.5 + rng.random::<f64>();
                pts.extend(blob(c, s, 40, &mut rng));
            }
            let fit = gmm_with_trace(&pts, k, seed, &GmmOptions::default()).unwrap();
            for w in fit.log_likelihood.windows(2) {
                assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "seed {seed}: {w:?}");
            }
        }
    }

    #[test]
    fn needs_enough_points() {
        let pts = vec![Vec3::X; 7];
        assert!(matches!(gmm(&pts, 2, 0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn identical_points_survive_on_ridge() {
        // Only the ridge keeps the covariances invertible here.
        let pts = vec![Vec3::new(1.0, 1.0, 1.0); 16];
        let cs = gmm(&pts, 2, 0).unwrap();
        assert_eq!(cs.sizes().iter().sum::<usize>(), 16);
        assert!(cs.sizes().iter().all(|&s| s >= 1));
    }
}
