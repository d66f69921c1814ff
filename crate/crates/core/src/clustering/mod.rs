//! Grouping of receiver hit positions into per-transmitter clusters.
//!
//! [`kmeans`] and [`gmm`] partition the points; [`correct_centers`] then
//! moves K-means centers with density weighting, the MCD robust mean, or
//! both, without touching memberships.

mod correct;
mod density;
mod gmm;
mod kmeans;
mod mcd;

use serde::{Deserialize, Serialize};

pub use correct::{correct_centers, CorrectionParams};
pub use density::{density_weighted_centroid, knn_density_weights, DENSITY_EPS};
pub use gmm::{gmm, gmm_with_trace, GmmFit, GmmOptions};
pub use kmeans::{kmeans, kmeans_with_options, lloyd, wcss, KMeansOptions, LloydRun};
pub use mcd::{mincovdet, McdEstimate, CHI2_3_Q50, CHI2_3_Q975};

use crate::error::{Error, Result};
use crate::geometry::{mean_of, Vec3};

/// Default neighbour count for density weights.
pub const DEFAULT_K_NN: usize = 10;
/// Default MCD support fraction.
pub const DEFAULT_SUPPORT_FRACTION: f64 = 0.75;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    KMeans,
    Gmm,
    Density,
    MinCovDet,
    DensityMinCovDet,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::KMeans,
        Method::Gmm,
        Method::Density,
        Method::MinCovDet,
        Method::DensityMinCovDet,
    ];

    /// Identifier used on the command line and in file names.
    pub fn slug(self) -> &'static str {
        match self {
            Method::KMeans => "kmeans",
            Method::Gmm => "gmm",
            Method::Density => "density",
            Method::MinCovDet => "mincovdet",
            Method::DensityMinCovDet => "density-mincovdet",
        }
    }

    pub fn from_slug(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.slug() == s)
    }

    /// Whether this is a center correction applied on top of K-means.
    pub fn is_correction(self) -> bool {
        matches!(
            self,
            Method::Density | Method::MinCovDet | Method::DensityMinCovDet
        )
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.slug())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// Center in ambient space (not necessarily on the sphere).
    pub centroid: Vec3,
    /// Normalized centroid.
    pub direction: Vec3,
    pub size: usize,
    pub member_indices: Vec<usize>,
    /// Set when a correction could not be applied and the K-means center was kept.
    pub fallback: bool,
}

impl Cluster {
    pub fn new(centroid: Vec3, member_indices: Vec<usize>) -> Self {
        Self {
            centroid,
            direction: direction_of(centroid),
            size: member_indices.len(),
            member_indices,
            fallback: false,
        }
    }
}

/// Unit vector along `c`; a centroid at the origin has no direction and maps to +z.
pub fn direction_of(c: Vec3) -> Vec3 {
    c.try_normalize(1e-300).unwrap_or(Vec3::Z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    pub method: Method,
    pub clusters: Vec<Cluster>,
}

impl ClusterSet {
    /// Build clusters from hard labels; centroids are the member means.
    pub(crate) fn from_labels(method: Method, points: &[Vec3], labels: &[usize], k: usize) -> Self {
        let mut members = vec![Vec::new(); k];
        for (i, &l) in labels.iter().enumerate() {
            members[l].push(i);
        }
        let clusters = members
            .into_iter()
            .map(|m| {
                let c = if m.is_empty() { Vec3::ZERO } else { mean_of(points, &m) };
                Cluster::new(c, m)
            })
            .collect();
        Self { method, clusters }
    }

    pub fn k(&self) -> usize {
        self.clusters.len()
    }

    pub fn directions(&self) -> Vec<Vec3> {
        self.clusters.iter().map(|c| c.direction).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.size).collect()
    }

    /// Cluster label of every point, or `None` if memberships do not
    /// partition `0..n`.
    pub fn labels(&self, n: usize) -> Option<Vec<usize>> {
        let mut labels = vec![usize::MAX; n];
        for (ci, c) in self.clusters.iter().enumerate() {
            for &i in &c.member_indices {
                if i >= n || labels[i] != usize::MAX {
                    return None;
                }
                labels[i] = ci;
            }
        }
        labels.iter().all(|&l| l != usize::MAX).then_some(labels)
    }
}

/// Outcome of [`imbalance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Imbalance {
    pub value: f64,
    /// Pairs skipped because both sizes were zero.
    pub skipped_pairs: usize,
}

/// Mean pairwise `|n_i - n_j| / (n_i + n_j)` over unordered pairs.
pub fn imbalance(sizes: &[f64]) -> Result<Imbalance> {
    if sizes.len() < 2 {
        return Err(Error::InvalidInput("imbalance needs at least two sizes".into()));
    }
    if sizes.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
        return Err(Error::InvalidInput("sizes must be finite and non-negative".into()));
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for i in 0..sizes.len() {
        for j in i + 1..sizes.len() {
            let tot = sizes[i] + sizes[j];
            if tot > 0.0 {
                sum += (sizes[i] - sizes[j]).abs() / tot;
                used += 1;
            } else {
                skipped += 1;
            }
        }
    }
    if used == 0 {
        return Err(Error::InvalidInput("every pair of sizes sums to zero".into()));
    }
    Ok(Imbalance {
        value: sum / used as f64,
        skipped_pairs: skipped,
    })
}
