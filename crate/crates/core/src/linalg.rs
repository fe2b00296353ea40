//! Dense vectors and symmetric matrices, plus a cyclic Jacobi eigensolver.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scaled(alpha: f64, a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| alpha * x).collect()
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Real symmetric `d x d` matrix stored densely in row-major order.
///
/// Every mutating method writes both `(i, j)` and `(j, i)`, so the stored
/// entries are symmetric bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = v;
        }
        m
    }

    /// Builds a matrix from the upper triangle of `f(i, j)`, `i <= j`.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Wraps a row-major buffer, symmetrizing it as `(A + A^T) / 2`.
    pub fn from_row_major(dim: usize, data: &[f64]) -> Result<Self> {
        check_dim(dim * dim, data.len())?;
        Ok(Self::from_fn(dim, |i, j| 0.5 * (data[i * dim + j] + data[j * dim + i])))
    }

    /// `weight * u u^T`
    pub fn outer(weight: f64, u: &[f64]) -> Self {
        let mut m = Self::zeros(u.len());
        m.add_outer(weight, u);
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// `self += weight * u u^T`
    pub fn add_outer(&mut self, weight: f64, u: &[f64]) {
        let d = self.dim;
        for i in 0..d {
            let wi = weight * u[i];
            for j in 0..d {
                self.data[i * d + j] += wi * u[j];
            }
        }
    }

    /// `self += weight * (u v^T + v u^T)`
    pub fn add_sym_outer(&mut self, weight: f64, u: &[f64], v: &[f64]) {
        let d = self.dim;
        for i in 0..d {
            for j in 0..d {
                self.data[i * d + j] += weight * (u[i] * v[j] + v[i] * u[j]);
            }
        }
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.dim {
            self.data[i * self.dim + i] += v;
        }
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &SymMatrix) {
        axpy(alpha, &other.data, &mut self.data);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix> {
        check_dim(self.dim, other.dim)?;
        Ok(SymMatrix {
            dim: self.dim,
            data: sub(&self.data, &other.data),
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        Ok(self.mul_vec_unchecked(x))
    }

    pub(crate) fn mul_vec_unchecked(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|i| dot(self.row(i), x)).collect()
    }

    /// `x^T A x`
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(&self.mul_vec_unchecked(x), x)
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Largest absolute eigenvalue.
    pub fn spectral_norm(&self) -> Result<f64> {
        let e = self.eigen()?;
        Ok(e.values.iter().fold(0.0, |m: f64, v| m.max(v.abs())))
    }

    /// `Q^T A Q` for a matrix `Q` given by its columns.
    pub fn congruence(&self, columns: &[Vec<f64>]) -> SymMatrix {
        let images: Vec<Vec<f64>> = columns.iter().map(|c| self.mul_vec_unchecked(c)).collect();
        SymMatrix::from_fn(columns.len(), |i, j| dot(&columns[i], &images[j]))
    }

    /// Eigendecomposition by cyclic Jacobi rotations.
    pub fn eigen(&self) -> Result<SymEigen> {
        jacobi_eigen(self)
    }
}

/// Eigenpairs sorted by ascending eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// `vectors[k]` is the unit eigenvector for `values[k]`.
    pub vectors: Vec<Vec<f64>>,
}

impl SymEigen {
    pub fn min_value(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn max_abs_value(&self) -> f64 {
        self.values.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

const JACOBI_MAX_SWEEPS: usize = 64;

fn jacobi_eigen(m: &SymMatrix) -> Result<SymEigen> {
    let n = m.dim;
    let mut a = m.data.clone();
    let mut v = SymMatrix::identity(n).data;
    let scale = m.frobenius_norm();

    let off_norm = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                s += 2.0 * a[p * n + q] * a[p * n + q];
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    let trivial = scale == 0.0 || n < 2;
    loop {
        if trivial || off_norm(&a) <= f64::EPSILON * scale {
            break;
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::EigenNoConvergence {
                sweeps,
                off_norm: off_norm(&a),
            });
        }
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // skip entries already negligible against both diagonal terms
                if apq.abs() <= f64::EPSILON * 1e-3 * (app.abs() + aqq.abs()) || apq == 0.0 {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                rotated = true;
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    let values = order.iter().map(|&k| a[k * n + k]).collect();
    let vectors = order
        .iter()
        .map(|&k| (0..n).map(|i| v[i * n + k]).collect())
        .collect();
    Ok(SymEigen { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(e: &SymEigen) -> SymMatrix {
        let mut m = SymMatrix::zeros(e.values.len());
        for (l, v) in e.values.iter().zip(&e.vectors) {
            m.add_outer(*l, v);
        }
        m
    }

    #[test]
    fn set_writes_both_triangles() {
        let mut m = SymMatrix::zeros(3);
        m.set(0, 2, 5.0);
        assert_eq!(m.get(2, 0), 5.0);
    }

    #[test]
    fn diagonal_matrix_eigenvalues_sorted() {
        let e = SymMatrix::diagonal(&[3.0, -2.0, 1.0]).eigen().unwrap();
        assert_eq!(e.values, vec![-2.0, 1.0, 3.0]);
        assert_eq!(e.vectors[0], vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn jacobi_reconstructs_dense_matrix() {
        let m = SymMatrix::from_fn(5, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0 + (i == j) as u8 as f64);
        let e = m.eigen().unwrap();
        let r = reconstruct(&e);
        for i in 0..5 {
            for j in 0..5 {
                assert!((r.get(i, j) - m.get(i, j)).abs() < 1e-12);
            }
        }
        for a in 0..5 {
            for b in 0..5 {
                let ip = dot(&e.vectors[a], &e.vectors[b]);
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_by_two_closed_form() {
        let m = SymMatrix::from_fn(2, |i, j| [[2.0, 1.0], [1.0, 2.0]][i][j]);
        let e = m.eigen().unwrap();
        assert!((e.values[0] - 1.0).abs() < 1e-15);
        assert!((e.values[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn zero_matrix_is_trivially_diagonal() {
        let e = SymMatrix::zeros(4).eigen().unwrap();
        assert!(e.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn congruence_with_identity_columns() {
        let m = SymMatrix::from_fn(3, |i, j| (i + 2 * j) as f64);
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|k| (0..3).map(|i| (i == k) as u8 as f64).collect())
            .collect();
        assert_eq!(m.congruence(&cols), m);
    }

    #[test]
    fn mul_vec_rejects_wrong_length() {
        let m = SymMatrix::identity(3);
        assert_eq!(
            m.mul_vec(&[1.0, 2.0]),
            Err(Error::DimensionMismatch {
                expected: 3,
                found: 2
            })
        );
    }
}
