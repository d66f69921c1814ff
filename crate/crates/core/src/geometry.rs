//! Small fixed-size linear algebra: 3-vectors and 3x3 matrices in micrometers.

use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// A point or displacement in 3D space, in micrometers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };
    pub const X: Vec3 = Vec3 { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: Vec3 = Vec3 { x: 0.0, y: 1.0, z: 0.0 };
    pub const Z: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    #[inline]
    pub fn dist_sq(self, o: Vec3) -> f64 {
        (self - o).norm_sq()
    }

    #[inline]
    pub fn dist(self, o: Vec3) -> f64 {
        self.dist_sq(o).sqrt()
    }

    /// Unit vector in the same direction, or `None` when the norm is below `min_norm`.
    pub fn try_normalize(self, min_norm: f64) -> Option<Vec3> {
        let n = self.norm();
        if n.is_finite() && n >= min_norm && n > 0.0 {
            Some(self / n)
        } else {
            None
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }

    /// Outer product `self * o^T`.
    pub fn outer(self, o: Vec3) -> Mat3 {
        let a = self.to_array();
        let b = o.to_array();
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = a[i] * b[j];
            }
        }
        Mat3(m)
    }

    /// Lexicographic comparison on (x, y, z) using total ordering of floats.
    pub fn lex_cmp(&self, o: &Vec3) -> std::cmp::Ordering {
        self.x
            .total_cmp(&o.x)
            .then(self.y.total_cmp(&o.y))
            .then(self.z.total_cmp(&o.z))
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    #[inline]
    fn sub_assign(&mut self, o: Vec3) {
        self.x -= o.x;
        self.y -= o.y;
        self.z -= o.z;
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    #[inline]
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const ZERO: Mat3 = Mat3([[0.0; 3]; 3]);

    pub fn identity() -> Self {
        Mat3::diag(1.0)
    }

    pub fn diag(v: f64) -> Self {
        Mat3([[v, 0.0, 0.0], [0.0, v, 0.0], [0.0, 0.0, v]])
    }

    pub fn from_rows(r0: Vec3, r1: Vec3, r2: Vec3) -> Self {
        Mat3([r0.to_array(), r1.to_array(), r2.to_array()])
    }

    pub fn row(&self, i: usize) -> Vec3 {
        Vec3::from_array(self.0[i])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        let mut t = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                t[i][j] = m[j][i];
            }
        }
        Mat3(t)
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        Vec3::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(r)
    }

    pub fn scale(&self, s: f64) -> Mat3 {
        let mut r = self.0;
        r.iter_mut().flatten().for_each(|x| *x *= s);
        Mat3(r)
    }

    pub fn add(&self, o: &Mat3) -> Mat3 {
        let mut r = self.0;
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] += o.0[i][j];
            }
        }
        Mat3(r)
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Inverse via the adjugate; `None` when the determinant is zero or not finite.
    pub fn inverse(&self) -> Option<Mat3> {
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let m = &self.0;
        let inv = [
            [
                m[1][1] * m[2][2] - m[1][2] * m[2][1],
                m[0][2] * m[2][1] - m[0][1] * m[2][2],
                m[0][1] * m[1][2] - m[0][2] * m[1][1],
            ],
            [
                m[1][2] * m[2][0] - m[1][0] * m[2][2],
                m[0][0] * m[2][2] - m[0][2] * m[2][0],
                m[0][2] * m[1][0] - m[0][0] * m[1][2],
            ],
            [
                m[1][0] * m[2][1] - m[1][1] * m[2][0],
                m[0][1] * m[2][0] - m[0][0] * m[2][1],
                m[0][0] * m[1][1] - m[0][1] * m[1][0],
            ],
        ];
        Some(Mat3(inv).scale(1.0 / det))
    }

    /// Quadratic form `v^T M v`.
    #[inline]
    pub fn quad_form(&self, v: Vec3) -> f64 {
        v.dot(self.mul_vec(v))
    }

    /// Lower Cholesky factor of a symmetric positive definite matrix.
    pub fn cholesky(&self) -> Option<Mat3> {
        let a = &self.0;
        let mut l = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..=i {
                let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
                if i == j {
                    let d = a[i][i] - s;
                    if !(d > 0.0) {
                        return None;
                    }
                    l[i][j] = d.sqrt();
                } else {
                    l[i][j] = (a[i][j] - s) / l[j][j];
                }
            }
        }
        Some(Mat3(l))
    }

    /// Rotation by `angle` radians about the (normalized) `axis`.
    pub fn rotation(axis: Vec3, angle: f64) -> Mat3 {
        let u = axis / axis.norm();
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        Mat3([
            [
                c + u.x * u.x * t,
                u.x * u.y * t - u.z * s,
                u.x * u.z * t + u.y * s,
            ],
            [
                u.y * u.x * t + u.z * s,
                c + u.y * u.y * t,
                u.y * u.z * t - u.x * s,
            ],
            [
                u.z * u.x * t - u.y * s,
                u.z * u.y * t + u.x * s,
                c + u.z * u.z * t,
            ],
        ])
    }
}

/// Arithmetic mean of a non-empty slice of points.
pub fn mean(points: &[Vec3]) -> Vec3 {
    let mut s = Vec3::ZERO;
    for p in points {
        s += *p;
    }
    s / points.len() as f64
}

/// Mean of the points selected by `idx`.
pub fn mean_of(points: &[Vec3], idx: &[usize]) -> Vec3 {
    let mut s = Vec3::ZERO;
    for &i in idx {
        s += points[i];
    }
    s / idx.len() as f64
}

/// Maximum-likelihood (divide by n) covariance of the selected points about `center`.
pub fn covariance_of(points: &[Vec3], idx: &[usize], center: Vec3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for &i in idx {
        let d = (points[i] - center).to_array();
        for a in 0..3 {
            for b in a..3 {
                c[a][b] += d[a] * d[b];
            }
        }
    }
    let n = idx.len() as f64;
    for a in 0..3 {
        for b in a..3 {
            c[a][b] /= n;
            c[b][a] = c[a][b];
        }
    }
    Mat3(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_times_matrix_is_identity() {
        let m = Mat3([[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]]);
        let p = m.mul_mat(&m.inverse().unwrap());
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((p.0[i][j] - e).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn singular_has_no_inverse() {
        let m = Mat3([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 0.0, 1.0]]);
        assert!(m.inverse().is_none());
        assert!(Mat3::ZERO.cholesky().is_none());
    }

    #[test]
    fn cholesky_reconstructs() {
        let m = Mat3([[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]]);
        let l = m.cholesky().unwrap();
        let r = l.mul_mat(&l.transpose());
        for i in 0..3 {
            for j in 0..3 {
                assert!((r.0[i][j] - m.0[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rotation_is_orthonormal() {
        let r = Mat3::rotation(Vec3::new(1.0, 2.0, -0.5), 0.7);
        let p = r.mul_mat(&r.transpose());
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((p.0[i][j] - e).abs() < 1e-14);
            }
        }
        assert!((r.determinant() - 1.0).abs() < 1e-14);
    }
}
