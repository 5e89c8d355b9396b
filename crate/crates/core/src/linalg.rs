//! Small dense linear algebra on row-major `d x d` matrices.
//!
//! The recursion works in dimensions 1-4 in practice, so matrices are kept
//! as flat buffers that hot loops can reuse without allocating.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    dim: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(dim: usize) -> Self {
        Mat {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Mat::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn scaled_identity(dim: usize, c: f64) -> Self {
        let mut m = Mat::identity(dim);
        m.scale(c);
        m
    }

    /// Build from rows; returns `None` when the rows are not square.
    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let dim = rows.len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return None;
        }
        Some(Mat {
            dim,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn scale(&mut self, c: f64) {
        for x in &mut self.data {
            *x *= c;
        }
    }

    pub fn copy_from(&mut self, other: &Mat) {
        self.dim = other.dim;
        self.data.clear();
        self.data.extend_from_slice(&other.data);
    }

    pub fn set_identity(&mut self) {
        let d = self.dim;
        for (k, x) in self.data.iter_mut().enumerate() {
            *x = if k / d == k % d { 1.0 } else { 0.0 };
        }
    }

    pub fn transpose(&self) -> Mat {
        let d = self.dim;
        let mut t = Mat::zeros(d);
        for i in 0..d {
            for j in 0..d {
                t.data[j * d + i] = self.data[i * d + j];
            }
        }
        t
    }

    /// `out = M x` (column action).
    #[inline]
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let row = &self.data[i * d..(i + 1) * d];
            out[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// `out = v M` (row action), equivalently `M^T v`.
    #[inline]
    pub fn row_mul_into(&self, v: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (j, o) in out.iter_mut().enumerate().take(d) {
            let mut s = 0.0;
            for i in 0..d {
                s += v[i] * self.data[i * d + j];
            }
            *o = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.mul_vec_into(x, &mut out);
        out
    }

    pub fn row_mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.row_mul_into(v, &mut out);
        out
    }

    /// `out = self * rhs`.
    pub fn mul_into(&self, rhs: &Mat, out: &mut Mat) {
        let d = self.dim;
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for k in 0..d {
                    s += self.data[i * d + k] * rhs.data[k * d + j];
                }
                out.data[i * d + j] = s;
            }
        }
    }

    pub fn mul(&self, rhs: &Mat) -> Mat {
        let mut out = Mat::zeros(self.dim);
        self.mul_into(rhs, &mut out);
        out
    }

    pub fn determinant(&self) -> f64 {
        let a = &self.data;
        match self.dim {
            1 => a[0],
            2 => a[0] * a[3] - a[1] * a[2],
            3 => {
                a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
                    + a[2] * (a[3] * a[7] - a[4] * a[6])
            }
            d => nalgebra::DMatrix::from_row_slice(d, d, a).determinant(),
        }
    }

    /// Singular values in decreasing order.
    pub fn singular_values(&self) -> Vec<f64> {
        let a = &self.data;
        match self.dim {
            1 => vec![a[0].abs()],
            2 => {
                let (p, q, r, t) = (a[0], a[1], a[2], a[3]);
                let h1 = (p + t).hypot(q - r);
                let h2 = (p - t).hypot(q + r);
                let s1 = 0.5 * (h1 + h2);
                let s2 = 0.5 * (h1 - h2).abs();
                vec![s1, s2]
            }
            d => {
                let m = nalgebra::DMatrix::from_row_slice(d, d, a);
                let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
                s.sort_by(|x, y| y.total_cmp(x));
                s
            }
        }
    }

    /// Operator norm `sup_{|x|=1} |xM|`, the largest singular value.
    pub fn op_norm(&self) -> f64 {
        match self.dim {
            1 => self.data[0].abs(),
            _ => self.singular_values()[0],
        }
    }

    /// `inf_{|v|=1} |vM|`, the smallest singular value.
    pub fn min_stretch(&self) -> f64 {
        *self
            .singular_values()
            .last()
            .expect("matrix has at least one singular value")
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Haar-distributed rotation in SO(d), written into `out`.
///
/// d = 2 uses a uniform angle. Larger d orthogonalises a Gaussian matrix
/// with Gram-Schmidt (which yields Haar on O(d) because the triangular
/// factor has positive diagonal) and flips one column when the
/// determinant is negative.
pub fn random_rotation_into<R: Rng + ?Sized>(rng: &mut R, out: &mut Mat) {
    let d = out.dim;
    match d {
        1 => out.data[0] = 1.0,
        2 => {
            let theta = rng.random::<f64>() * std::f64::consts::TAU;
            let (s, c) = theta.sin_cos();
            out.data.copy_from_slice(&[c, -s, s, c]);
        }
        _ => loop {
            // Columns stored as rows of `cols` during orthogonalisation.
            let mut cols: Vec<Vec<f64>> = (0..d)
                .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
                .collect();
            let mut ok = true;
            for k in 0..d {
                let (done, rest) = cols.split_at_mut(k);
                let c = &mut rest[0];
                for p in done.iter() {
                    let proj = dot(c, p);
                    for (ci, pi) in c.iter_mut().zip(p) {
                        *ci -= proj * pi;
                    }
                }
                let n = norm(c);
                if n < 1e-10 {
                    ok = false;
                    break;
                }
                for ci in c.iter_mut() {
                    *ci /= n;
                }
            }
            if !ok {
                continue;
            }
            for (j, col) in cols.iter().enumerate() {
                for (i, v) in col.iter().enumerate() {
                    out.data[i * d + j] = *v;
                }
            }
            if out.determinant() < 0.0 {
                for i in 0..d {
                    out.data[i * d] = -out.data[i * d];
                }
            }
            break;
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn products_and_actions() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(a.mul_vec(&[1.0, 1.0]), vec![3.0, 7.0]);
        assert_eq!(a.row_mul(&[1.0, 1.0]), vec![4.0, 6.0]);
        assert_eq!(a.transpose().mul_vec(&[1.0, 1.0]), a.row_mul(&[1.0, 1.0]));
        let sq = a.mul(&a);
        assert_eq!(sq.rows(), vec![vec![7.0, 10.0], vec![15.0, 22.0]]);
        assert_eq!(a.determinant(), -2.0);
    }

    #[test]
    fn singular_values_closed_form_matches_nalgebra() {
        let a = Mat::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
        let ours = a.singular_values();
        let n = nalgebra::DMatrix::from_row_slice(2, 2, a.as_slice());
        let mut theirs: Vec<f64> = n.singular_values().iter().copied().collect();
        theirs.sort_by(|x, y| y.total_cmp(x));
        for (x, y) in ours.iter().zip(&theirs) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn rotations_are_orthogonal_with_unit_determinant() {
        let mut rng = substream(1, 0);
        for d in 1..=4 {
            let mut r = Mat::zeros(d);
            for _ in 0..20 {
                random_rotation_into(&mut rng, &mut r);
                let p = r.mul(&r.transpose());
                for i in 0..d {
                    for j in 0..d {
                        let e = if i == j { 1.0 } else { 0.0 };
                        assert!((p.get(i, j) - e).abs() < 1e-12);
                    }
                }
                assert!((r.determinant() - 1.0).abs() < 1e-12);
            }
        }
    }
}
