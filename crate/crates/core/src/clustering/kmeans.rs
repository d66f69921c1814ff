use rand::Rng as _;

use super::{ClusterSet, Method};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop when no centroid moves more than this (µm).
    pub tol: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iter: 300,
            tol: 1e-7,
        }
    }
}

/// One run of Lloyd's algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct LloydRun {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec3>,
    /// Within-cluster sum of squares after every iteration.
    pub wcss_history: Vec<f64>,
}

impl LloydRun {
    pub fn wcss(&self) -> f64 {
        *self.wcss_history.last().unwrap_or(&f64::INFINITY)
    }
}

/// Within-cluster sum of squared distances.
pub fn wcss(points: &[Vec3], labels: &[usize], centroids: &[Vec3]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| p.dist_sq(centroids[l]))
        .sum()
}

fn nearest(p: Vec3, centroids: &[Vec3]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = p.dist_sq(*c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

fn plus_plus_init(points: &[Vec3], k: usize, rng: &mut rng::Rng) -> Vec<Vec3> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..n)]);
    let mut d2: Vec<f64> = points.iter().map(|p| p.dist_sq(centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = points[next];
        centroids.push(c);
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(p.dist_sq(c));
        }
    }
    centroids
}

/// Move the point farthest from its centroid out of the largest cluster into
/// each empty cluster.
fn repair_empty(points: &[Vec3], labels: &mut [usize], centroids: &mut [Vec3]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let largest = (0..k).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap();
        if counts[largest] < 2 {
            return;
        }
        let far = (0..points.len())
            .filter(|&i| labels[i] == largest)
            .max_by(|&a, &b| {
                points[a]
                    .dist_sq(centroids[largest])
                    .total_cmp(&points[b].dist_sq(centroids[largest]))
                    .then(b.cmp(&a))
            })
            .unwrap();
        labels[far] = empty;
        centroids[empty] = points[far];
    }
}

fn update_centroids(points: &[Vec3], labels: &[usize], k: usize) -> Vec<Vec3> {
    let mut sums = vec![Vec3::ZERO; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        sums[l] += *p;
        counts[l] += 1;
    }
    sums.into_iter()
        .zip(counts)
        .map(|(s, c)| if c > 0 { s / c as f64 } else { Vec3::ZERO })
        .collect()
}

/// Lloyd iterations from the given initial centroids.
pub fn lloyd(points: &[Vec3], init: Vec<Vec3>, opts: &KMeansOptions) -> LloydRun {
    let k = init.len();
    let mut centroids = init;
    let mut labels = vec![0usize; points.len()];
    let mut history = Vec::new();
    for _ in 0..opts.max_iter.max(1) {
        for (l, p) in labels.iter_mut().zip(points) {
            *l = nearest(*p, &centroids);
        }
        repair_empty(points, &mut labels, &mut centroids);
        let next = update_centroids(points, &labels, k);
        let moved = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| a.dist(*b))
            .fold(0.0, f64::max);
        centroids = next;
        history.push(wcss(points, &labels, &centroids));
        if moved < opts.tol {
            break;
        }
    }
    LloydRun {
        labels,
        centroids,
        wcss_history: history,
    }
}

/// K-means with k-means++ seeding and the default restart policy.
pub fn kmeans(points: &[Vec3], k: usize, seed: u64) -> Result<ClusterSet> {
    kmeans_with_options(points, k, seed, &KMeansOptions::default())
}

pub fn kmeans_with_options(
    points: &[Vec3],
    k: usize,
    seed: u64,
    opts: &KMeansOptions,
) -> Result<ClusterSet> {
    if k == 0 || points.len() < k {
        return Err(Error::InvalidInput(format!(
            "kmeans needs at least k = {k} >= 1 points, got {}",
            points.len()
        )));
    }
    let mut best: Option<LloydRun> = None;
    for restart in 0..opts.restarts.max(1) {
        let mut rng = rng::stream(&[tag::KMEANS, seed, restart as u64]);
        let init = plus_plus_init(points, k, &mut rng);
        let run = lloyd(points, init, opts);
        if best.as_ref().is_none_or(|b| run.wcss() < b.wcss()) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one restart");
    Ok(ClusterSet::from_labels(Method::KMeans, points, &best.labels, k))
}
