//! K-means cluster summaries as network inputs.

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterSet;
use crate::error::{Error, Result};
use crate::geometry::{Mat3, Vec3};

/// Coordinate frame the network sees directions in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Receiver coordinates as simulated.
    Ambient,
    /// Rotated so the largest cluster points along +z and the second
    /// largest lies in the x-z half-plane with x >= 0, then mirrored if
    /// needed so the next cluster off that plane has y > 0. Removes the
    /// global orientation, which carries no information for an isotropic
    /// medium.
    #[default]
    Canonical,
}

impl Frame {
    pub fn slug(self) -> &'static str {
        match self {
            Frame::Ambient => "ambient",
            Frame::Canonical => "canonical",
        }
    }

    pub fn from_slug(s: &str) -> Option<Frame> {
        match s {
            "ambient" => Some(Frame::Ambient),
            "canonical" => Some(Frame::Canonical),
            _ => None,
        }
    }
}

/// Flat `4K` input: per cluster `(normalized size, ux, uy, uz)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn k(&self) -> usize {
        self.0.len() / 4
    }
}

/// Network input plus what is needed to map outputs back.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub vector: FeatureVector,
    /// `order[c]` is the index of the input cluster placed at canonical slot `c`.
    pub order: Vec<usize>,
    /// K-means directions in canonical order, receiver coordinates.
    pub base_dirs: Vec<Vec3>,
    /// K-means sizes in canonical order, normalized by the emitted count
    /// and capped at 1.
    pub base_sizes: Vec<f64>,
    /// K-means sizes in canonical order, as counts.
    pub base_counts: Vec<f64>,
    pub n_emitted: f64,
    pub frame: Frame,
    /// Maps receiver coordinates into the network frame.
    pub rotation: Mat3,
}

impl Features {
    pub fn k(&self) -> usize {
        self.order.len()
    }

    /// K-means directions in the network frame.
    pub fn frame_dirs(&self) -> Vec<Vec3> {
        self.base_dirs.iter().map(|d| self.rotation.mul_vec(*d)).collect()
    }
}

fn any_perpendicular(u: Vec3) -> Vec3 {
    let axis = [Vec3::X, Vec3::Y, Vec3::Z]
        .into_iter()
        .min_by(|a, b| a.dot(u).abs().total_cmp(&b.dot(u).abs()))
        .unwrap();
    (axis - u * axis.dot(u)).try_normalize(0.0).unwrap_or(Vec3::X)
}

fn canonical_rotation(dirs: &[Vec3]) -> Mat3 {
    let e_z = dirs[0];
    let e_x = dirs
        .get(1)
        .and_then(|u| (*u - e_z * u.dot(e_z)).try_normalize(1e-9))
        .unwrap_or_else(|| any_perpendicular(e_z));
    let mut e_y = e_z.cross(e_x);
    // Diffusion is mirror symmetric, so the handedness is fixed too: the
    // first later cluster off the x-z plane gets y > 0.
    if let Some(y) = dirs[2.min(dirs.len())..].iter().map(|u| u.dot(e_y)).find(|y| y.abs() > 1e-9) {
        if y < 0.0 {
            e_y = -e_y;
        }
    }
    Mat3::from_rows(e_x, e_y, e_z)
}

/// Canonical ordering: descending size, ties broken by lexicographic direction.
pub fn canonical_order(dirs: &[Vec3], sizes: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dirs.len()).collect();
    order.sort_by(|&a, &b| {
        sizes[b]
            .total_cmp(&sizes[a])
            .then_with(|| dirs[a].lex_cmp(&dirs[b]))
            .then(a.cmp(&b))
    });
    order
}

/// Build features from unit directions and raw sizes in any cluster order.
pub fn features_from_parts(
    dirs: &[Vec3],
    sizes: &[f64],
    n_emitted: f64,
    frame: Frame,
) -> Result<Features> {
    let k = dirs.len();
    if k == 0 || sizes.len() != k {
        return Err(Error::InvalidInput(format!(
            "need K >= 1 matching directions and sizes, got {} and {}",
            k,
            sizes.len()
        )));
    }
    if !(n_emitted > 0.0) {
        return Err(Error::InvalidInput("emitted count must be positive".into()));
    }
    for d in dirs {
        if (d.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("direction {d:?} is not unit length")));
        }
    }
    for &s in sizes {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::InvalidInput(format!("size {s} must be a finite count")));
        }
    }
    let order = canonical_order(dirs, sizes);
    let base_dirs: Vec<Vec3> = order.iter().map(|&i| dirs[i]).collect();
    // A cluster that swallowed part of a neighbour can exceed the emitted
    // count; no single transmitter can, so the feature saturates at 1.
    let base_sizes: Vec<f64> = order.iter().map(|&i| (sizes[i] / n_emitted).min(1.0)).collect();
    let base_counts: Vec<f64> = order.iter().map(|&i| sizes[i]).collect();
    let rotation = match frame {
        Frame::Ambient => Mat3::identity(),
        Frame::Canonical => canonical_rotation(&base_dirs),
    };
    let mut values = Vec::with_capacity(4 * k);
    for (d, s) in base_dirs.iter().zip(&base_sizes) {
        let u = rotation.mul_vec(*d);
        values.extend_from_slice(&[*s, u.x, u.y, u.z]);
    }
    Ok(Features {
        vector: FeatureVector(values),
        order,
        base_dirs,
        base_sizes,
        base_counts,
        n_emitted,
        frame,
        rotation,
    })
}

/// Features of a K-means clustering; `expected_k` guards against feeding a
/// model trained for a different transmitter count.
pub fn build_features(
    clusters: &ClusterSet,
    n_emitted: u64,
    expected_k: Option<usize>,
    frame: Frame,
) -> Result<Features> {
    if let Some(k) = expected_k {
        if clusters.k() != k {
            return Err(Error::InvalidInput(format!(
                "model expects K = {k}, clustering has K = {}",
                clusters.k()
            )));
        }
    }
    let sizes: Vec<f64> = clusters.sizes().into_iter().map(|s| s as f64).collect();
    features_from_parts(&clusters.directions(), &sizes, n_emitted as f64, frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::{Cluster, Method};

    fn set(parts: &[(Vec3, usize)]) -> ClusterSet {
        let mut next = 0;
        let clusters = parts
            .iter()
            .map(|&(c, n)| {
                let m: Vec<usize> = (next..next + n).collect();
                next += n;
                Cluster::new(c, m)
            })
            .collect();
        ClusterSet {
            method: Method::KMeans,
            clusters,
        }
    }

    #[test]
    fn sizes_normalized_and_sorted() {
        let cs = set(&[(Vec3::new(0.0, 4.0, 0.0), 1000), (Vec3::new(4.0, 0.0, 0.0), 3000)]);
        let f = build_features(&cs, 10_000, Some(2), Frame::Ambient).unwrap();
        assert_eq!(f.vector.0, vec![0.3, 1.0, 0.0, 0.0, 0.1, 0.0, 1.0, 0.0]);
        assert_eq!(f.order, vec![1, 0]);
    }

    #[test]
    fn permutation_invariant() {
        let a = (Vec3::new(1.0, 2.0, 3.0), 500);
        let b = (Vec3::new(-3.0, 1.0, 0.5), 800);
        let c = (Vec3::new(0.3, -2.0, 1.0), 120);
        for frame in [Frame::Ambient, Frame::Canonical] {
            let f1 = build_features(&set(&[a, b, c]), 2000, None, frame).unwrap();
            let f2 = build_features(&set(&[c, a, b]), 2000, None, frame).unwrap();
            assert_eq!(f1.vector, f2.vector);
        }
    }

    #[test]
    fn ties_break_on_direction() {
        let a = (Vec3::new(0.0, 0.0, 1.0), 400);
        let b = (Vec3::new(0.0, 1.0, 0.0), 400);
        let f = build_features(&set(&[a, b]), 1000, None, Frame::Ambient).unwrap();
        // (0,0,1) < (0,1,0) lexicographically.
        assert_eq!(f.order, vec![0, 1]);
        let f = build_features(&set(&[b, a]), 1000, None, Frame::Ambient).unwrap();
        assert_eq!(f.order, vec![1, 0]);
    }

    #[test]
    fn canonical_frame_layout() {
        let cs = set(&[
            (Vec3::new(1.0, 1.0, 0.0), 100),
            (Vec3::new(0.0, 0.0, -1.0), 900),
            (Vec3::new(0.2, -1.0, 0.4), 300),
        ]);
        let f = build_features(&cs, 2000, None, Frame::Canonical).unwrap();
        let v = &f.vector.0;
        assert!((v[1]).abs() < 1e-15 && v[2].abs() < 1e-15 && (v[3] - 1.0).abs() < 1e-15);
        assert!(v[5] >= 0.0 && v[6].abs() < 1e-15);
        for c in 0..3 {
            let n = (v[4 * c + 1].powi(2) + v[4 * c + 2].powi(2) + v[4 * c + 3].powi(2)).sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn oversized_cluster_saturates() {
        let cs = set(&[(Vec3::X, 2300), (Vec3::Y, 500)]);
        let f = build_features(&cs, 2000, None, Frame::Ambient).unwrap();
        assert_eq!(f.base_sizes, vec![1.0, 0.25]);
    }

    #[test]
    fn k_mismatch_rejected() {
        let cs = set(&[(Vec3::X, 3), (Vec3::Y, 3)]);
        assert!(build_features(&cs, 100, Some(3), Frame::Canonical).is_err());
    }
}
