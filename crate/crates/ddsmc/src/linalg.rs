//! Small dense row-major matrices and a cyclic Jacobi eigensolver.
//!
//! The measurement operators handled here are at most a few hundred columns
//! wide with very few rows, so nothing beyond `O(d_y^3 + d_y d_x)` work is
//! ever needed.

use serde::{Deserialize, Serialize};

use crate::scalar::{dot, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_diagonal(rows: usize, cols: usize, diag: &[T]) -> Self {
        let mut m = Self::zeros(rows, cols);
        for (i, &v) in diag.iter().enumerate().take(rows.min(cols)) {
            m[(i, i)] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// `self * x`
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `self^T * x`
    pub fn tr_mul_vec(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (i, &xi) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimensions must agree");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    /// `self * self^T`
    pub fn gram_rows(&self) -> Self {
        let mut g = Self::zeros(self.rows, self.rows);
        for i in 0..self.rows {
            for j in i..self.rows {
                let v = dot(self.row(i), self.row(j));
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` where column `k` of the second matrix
/// is the unit eigenvector for `eigenvalues[k]`. Eigenvalues are left in the
/// order the sweep produces; an already diagonal input is returned unchanged
/// with the identity as eigenvectors.
pub fn symmetric_eigen<T: Scalar>(sym: &Matrix<T>) -> (Vec<T>, Matrix<T>) {
    let n = sym.rows();
    assert_eq!(n, sym.cols(), "matrix must be square");
    let mut a = sym.clone();
    let mut v = Matrix::identity(n);
    let two = T::of(2.0);

    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut scale = T::zero();
        for i in 0..n {
            scale += a[(i, i)] * a[(i, i)];
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off <= T::epsilon() * T::epsilon() * scale || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (two * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values = (0..n).map(|i| a[(i, i)]).collect();
    (values, v)
}

/// Extends `basis` (orthonormal vectors of length `dim`) to a full orthonormal
/// basis of `R^dim`, drawing candidates from the standard basis.
pub(crate) fn complete_orthonormal_basis<T: Scalar>(basis: &mut Vec<Vec<T>>, dim: usize) {
    let mut used = vec![false; dim];
    while basis.len() < dim {
        // Pick the standard basis vector with the largest residual norm; ties
        // resolve to the lowest index, so an identity-aligned basis stays put.
        let mut best: Option<(usize, T, Vec<T>)> = None;
        for k in (0..dim).filter(|&k| !used[k]) {
            let mut r = vec![T::zero(); dim];
            r[k] = T::one();
            for _ in 0..2 {
                for b in basis.iter() {
                    let proj = dot(&r, b);
                    for (ri, &bi) in r.iter_mut().zip(b) {
                        *ri -= proj * bi;
                    }
                }
            }
            let norm = dot(&r, &r).sqrt();
            let better = match &best {
                None => true,
                Some((_, bn, _)) => norm > *bn + T::of(1e-12),
            };
            if better {
                best = Some((k, norm, r));
            }
        }
        let (k, norm, mut r) = best.expect("dimension not exhausted");
        used[k] = true;
        for ri in r.iter_mut() {
            *ri /= norm;
        }
        basis.push(r);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_recovers_known_spectrum() {
        let m = Matrix::from_rows(&[vec![2.0_f64, 1.0], vec![1.0, 2.0]]).unwrap();
        let (mut vals, vecs) = symmetric_eigen(&m);
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((vals[0] - 1.0).abs() < 1e-14);
        assert!((vals[1] - 3.0).abs() < 1e-14);
        let vtv = vecs.transpose().mul(&vecs);
        assert!(vtv.max_abs_diff(&Matrix::identity(2)) < 1e-14);
    }

    #[test]
    fn diagonal_input_is_untouched() {
        let m = Matrix::from_diagonal(3, 3, &[3.0, 1.0, 2.0]);
        let (vals, vecs) = symmetric_eigen(&m);
        assert_eq!(vals, vec![3.0, 1.0, 2.0]);
        assert_eq!(vecs, Matrix::identity(3));
    }

    #[test]
    fn completion_is_orthonormal() {
        let s = 0.5_f64.sqrt();
        let mut basis = vec![vec![s, s, 0.0, 0.0]];
        complete_orthonormal_basis(&mut basis, 4);
        let m = Matrix::from_rows(&basis).unwrap();
        assert!(m.gram_rows().max_abs_diff(&Matrix::identity(4)) < 1e-14);
    }
}
