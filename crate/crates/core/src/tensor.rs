//! Dense symmetric third-order tensors and maximization of cubic forms on the
//! unit sphere.
//!
//! [`SymTensor3`] stores all `d^3` entries; [`SymTensor3::set`] writes every
//! index permutation so the array is symmetric by construction. Anything that
//! can evaluate `T[y]^2` implements [`CubicForm`] and can be maximized with
//! [`maximize_cubic`], which runs a shifted symmetric higher-order power method
//! from several random starts. The result is always attained by the returned
//! unit vector, so it is a certified lower bound on the spectral norm
//! `sup_{|y|=1} |T[y]^3|`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_dim, dot, norm, SymMatrix};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymTensor3 {
    dim: usize,
    data: Vec<f64>,
}

impl SymTensor3 {
    pub fn zeros(dim: usize) -> Self {
        SymTensor3 {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    /// `weight * a ⊗ a ⊗ a`
    pub fn rank_one(weight: f64, a: &[f64]) -> Self {
        let mut t = Self::zeros(a.len());
        t.add_rank_one(weight, a);
        t
    }

    /// Builds a tensor from `f(i, j, k)` evaluated on `i <= j <= k`.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                for k in j..dim {
                    t.set(i, j, k, f(i, j, k));
                }
            }
        }
        t
    }

    /// Wraps a dense `d^3` buffer, averaging over the six index permutations.
    pub fn from_dense(dim: usize, data: &[f64]) -> Result<Self> {
        check_dim(dim * dim * dim, data.len())?;
        let at = |i: usize, j: usize, k: usize| data[(i * dim + j) * dim + k];
        Ok(Self::from_fn(dim, |i, j, k| {
            (at(i, j, k) + at(i, k, j) + at(j, i, k) + at(j, k, i) + at(k, i, j) + at(k, j, i)) / 6.0
        }))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dim + j) * self.dim + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.idx(i, j, k)]
    }

    /// Sets `(i, j, k)` and all of its permutations.
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        for (a, b, c) in [(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)] {
            let p = self.idx(a, b, c);
            self.data[p] = v;
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `self += weight * a ⊗ a ⊗ a`
    pub fn add_rank_one(&mut self, weight: f64, a: &[f64]) {
        let d = self.dim;
        for i in 0..d {
            let wi = weight * a[i];
            if wi == 0.0 {
                continue;
            }
            for j in 0..d {
                let wij = wi * a[j];
                let row = &mut self.data[(i * d + j) * d..(i * d + j + 1) * d];
                row.iter_mut().zip(a).for_each(|(t, ak)| *t += wij * ak);
            }
        }
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &SymTensor3) {
        crate::linalg::axpy(alpha, &other.data, &mut self.data);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn sub(&self, other: &SymTensor3) -> Result<SymTensor3> {
        check_dim(self.dim, other.dim)?;
        Ok(SymTensor3 {
            dim: self.dim,
            data: crate::linalg::sub(&self.data, &other.data),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    /// Sum of `|T_ijk|` over all `d^3` entries; a crude spectral norm bound.
    pub fn abs_sum(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `M_ij = sum_k T_ijk s_k`
    pub fn contract1(&self, s: &[f64]) -> Result<SymMatrix> {
        check_dim(self.dim, s.len())?;
        Ok(self.contract1_unchecked(s))
    }

    pub(crate) fn contract1_unchecked(&self, s: &[f64]) -> SymMatrix {
        let d = self.dim;
        SymMatrix::from_fn(d, |i, j| dot(&self.data[(i * d + j) * d..(i * d + j + 1) * d], s))
    }

    /// `v_i = sum_jk T_ijk s_j s_k`
    pub fn contract2(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, s.len())?;
        Ok(self.contract2_unchecked(s))
    }

    pub(crate) fn contract2_unchecked(&self, s: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| s[j] * dot(&self.data[(i * d + j) * d..(i * d + j + 1) * d], s))
                    .sum()
            })
            .collect()
    }

    /// `sum_ijk T_ijk s_i s_j s_k`
    pub fn contract3(&self, s: &[f64]) -> Result<f64> {
        check_dim(self.dim, s.len())?;
        Ok(dot(&self.contract2_unchecked(s), s))
    }

    /// Multilinear form `T(u, v, w)`.
    pub fn trilinear(&self, u: &[f64], v: &[f64], w: &[f64]) -> f64 {
        let d = self.dim;
        let mut acc = 0.0;
        for i in 0..d {
            if u[i] == 0.0 {
                continue;
            }
            for j in 0..d {
                acc += u[i] * v[j] * dot(&self.data[(i * d + j) * d..(i * d + j + 1) * d], w);
            }
        }
        acc
    }

    /// `T'(a, b, c) = T(q_a, q_b, q_c)` for the given columns `q`.
    ///
    /// With an orthonormal basis this is a change of coordinates; with fewer
    /// columns it restricts the tensor to their span.
    pub fn congruence(&self, columns: &[Vec<f64>]) -> SymTensor3 {
        let d = self.dim;
        let m = columns.len();
        // mode-3 product: A[i][j][c] = sum_k T_ijk q_c[k]
        let mut a = vec![0.0; d * d * m];
        for ij in 0..d * d {
            let fiber = &self.data[ij * d..(ij + 1) * d];
            for (c, q) in columns.iter().enumerate() {
                a[ij * m + c] = dot(fiber, q);
            }
        }
        // mode-2: B[i][b][c] = sum_j A[i][j][c] q_b[j]
        let mut b = vec![0.0; d * m * m];
        for i in 0..d {
            for (bb, q) in columns.iter().enumerate() {
                for c in 0..m {
                    let mut s = 0.0;
                    for j in 0..d {
                        s += a[(i * d + j) * m + c] * q[j];
                    }
                    b[(i * m + bb) * m + c] = s;
                }
            }
        }
        SymTensor3::from_fn(m, |x, y, z| {
            let mut s = 0.0;
            for i in 0..d {
                s += b[(i * m + y) * m + z] * columns[x][i];
            }
            s
        })
    }

    /// Multi-start lower bound on `sup_{|y|=1} |T[y]^3|`.
    pub fn spectral_norm_lower(&self, opts: &PowerOptions, seed: u64) -> Result<CubicMax> {
        opts.validate()?;
        Ok(maximize_cubic(self, None, opts, seed))
    }
}

/// A symmetric trilinear form that can be contracted with a single vector.
pub trait CubicForm {
    fn dim(&self) -> usize;

    /// `T[y]^2`, the gradient of `T[y]^3 / 3`.
    fn apply2(&self, y: &[f64]) -> Vec<f64>;

    fn apply3(&self, y: &[f64]) -> f64 {
        dot(&self.apply2(y), y)
    }

    /// Any upper bound on the spectral norm; sets the power-method shift.
    fn norm_bound(&self) -> f64;
}

impl CubicForm for SymTensor3 {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply2(&self, y: &[f64]) -> Vec<f64> {
        self.contract2_unchecked(y)
    }

    fn norm_bound(&self) -> f64 {
        self.frobenius_norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerOptions {
    pub restarts: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerOptions {
    fn default() -> Self {
        PowerOptions {
            restarts: 16,
            tol: 1e-10,
            max_iter: 500,
        }
    }
}

impl PowerOptions {
    pub fn with_restarts(restarts: usize) -> Self {
        PowerOptions {
            restarts,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::invalid("restarts", "must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tol", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter", "must be at least 1"));
        }
        Ok(())
    }
}

/// Best point found by [`maximize_cubic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubicMax {
    /// `T[vector]^3`, non-negative.
    pub value: f64,
    /// Unit vector in the ambient space.
    pub vector: Vec<f64>,
    /// Whether the start that produced `value` met the tolerance.
    pub converged: bool,
    pub iterations: usize,
}

fn lift(basis: Option<&[Vec<f64>]>, c: &[f64], d: usize) -> Vec<f64> {
    match basis {
        None => c.to_vec(),
        Some(b) => {
            let mut y = vec![0.0; d];
            for (ci, v) in c.iter().zip(b) {
                crate::linalg::axpy(*ci, v, &mut y);
            }
            y
        }
    }
}

fn project(basis: Option<&[Vec<f64>]>, g: Vec<f64>) -> Vec<f64> {
    match basis {
        None => g,
        Some(b) => b.iter().map(|v| dot(v, &g)).collect(),
    }
}

/// Maximizes `T[y]^3` over unit `y`, optionally restricted to the span of an
/// orthonormal `basis`.
///
/// Because `T[-y]^3 = -T[y]^3`, the maximum equals `sup |T[y]^3|`. Restart
/// `r` draws its start from `rng::derive(seed, POWER_START, r)`, so running
/// more restarts with the same seed never lowers the result.
pub fn maximize_cubic<F: CubicForm + ?Sized>(
    form: &F,
    basis: Option<&[Vec<f64>]>,
    opts: &PowerOptions,
    seed: u64,
) -> CubicMax {
    let d = form.dim();
    let m = basis.map_or(d, |b| b.len());
    let bound = form.norm_bound();
    let shift = 2.0 * bound;

    let mut best: Option<CubicMax> = None;
    for r in 0..opts.restarts.max(1) {
        let mut g = rng::rng(rng::derive(seed, rng::stream::POWER_START, r as u64));
        if m == 0 {
            break;
        }
        let mut c = rng::unit_vec(&mut g, m);
        let mut y = lift(basis, &c, d);
        let mut val = form.apply3(&y);
        if val < 0.0 {
            c.iter_mut().for_each(|x| *x = -*x);
            y.iter_mut().for_each(|x| *x = -*x);
            val = -val;
        }
        let mut converged = bound == 0.0;
        let mut iterations = 0;
        while !converged && iterations < opts.max_iter {
            iterations += 1;
            let mut next = project(basis, form.apply2(&y));
            crate::linalg::axpy(shift, &c, &mut next);
            let n = norm(&next);
            if !(n > 0.0) {
                break;
            }
            next.iter_mut().for_each(|x| *x /= n);
            let y_next = lift(basis, &next, d);
            let val_next = form.apply3(&y_next);
            converged = (val_next - val).abs() <= opts.tol * val.abs().max(1.0);
            c = next;
            y = y_next;
            val = val_next;
        }
        let cand = CubicMax {
            value: val,
            vector: y,
            converged,
            iterations,
        };
        match &best {
            Some(b) if b.value >= cand.value => {}
            _ => best = Some(cand),
        }
    }
    best.unwrap_or(CubicMax {
        value: 0.0,
        vector: Vec::new(),
        converged: true,
        iterations: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo_random_tensor(d: usize, salt: u64) -> SymTensor3 {
        let mut g = rng::rng(salt);
        let mut t = SymTensor3::zeros(d);
        for _ in 0..4 {
            let a = rng::gaussian_vec(&mut g, d);
            t.add_rank_one(1.0, &a);
        }
        let b = rng::gaussian_vec(&mut g, d);
        t.add_rank_one(-2.0, &b);
        t
    }

    #[test]
    fn set_is_permutation_symmetric() {
        let mut t = SymTensor3::zeros(3);
        t.set(0, 1, 2, 4.0);
        for (i, j, k) in [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)] {
            assert_eq!(t.get(i, j, k), 4.0);
        }
    }

    #[test]
    fn rank_one_contractions() {
        let t = SymTensor3::rank_one(1.0, &[1.0, 0.0]);
        let m = t.contract1(&[1.0, 0.0]).unwrap();
        assert_eq!(m.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(t.contract2(&[2.0, 0.0]).unwrap(), vec![4.0, 0.0]);
        let t = SymTensor3::rank_one(1.0, &[1.0, 1.0]);
        assert_eq!(t.contract3(&[1.0, 1.0]).unwrap(), 8.0);
    }

    #[test]
    fn zero_vector_contracts_to_zero() {
        let t = pseudo_random_tensor(4, 3);
        let z = [0.0; 4];
        assert!(t.contract1(&z).unwrap().as_slice().iter().all(|&x| x == 0.0));
        assert!(t.contract2(&z).unwrap().iter().all(|&x| x == 0.0));
        assert_eq!(t.contract3(&z).unwrap(), 0.0);
    }

    #[test]
    fn contraction_dimension_mismatch() {
        let t = SymTensor3::zeros(3);
        assert!(matches!(t.contract1(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(t.contract2(&[1.0; 4]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(t.contract3(&[]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn spectral_norm_of_scaled_rank_one() {
        // |a| = 2 so the norm is 8
        let t = SymTensor3::rank_one(1.0, &[2.0, 0.0, 0.0]);
        let est = t.spectral_norm_lower(&PowerOptions::default(), 1).unwrap();
        assert!((est.value - 8.0).abs() < 1e-8, "{}", est.value);
        let t = SymTensor3::rank_one(1.0, &[0.0, 1.2, 1.6]);
        let est = t.spectral_norm_lower(&PowerOptions::default(), 9).unwrap();
        assert!((est.value - 8.0).abs() < 1e-8, "{}", est.value);
    }

    #[test]
    fn spectral_norm_of_zero_tensor() {
        let est = SymTensor3::zeros(3)
            .spectral_norm_lower(&PowerOptions::default(), 0)
            .unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn spectral_norm_rejects_bad_options() {
        let t = SymTensor3::zeros(2);
        let bad = PowerOptions {
            restarts: 0,
            ..Default::default()
        };
        assert!(t.spectral_norm_lower(&bad, 0).is_err());
        let bad = PowerOptions {
            tol: 0.0,
            ..Default::default()
        };
        assert!(t.spectral_norm_lower(&bad, 0).is_err());
    }

    #[test]
    fn estimate_is_attained_by_its_vector() {
        let t = pseudo_random_tensor(5, 11);
        let est = t.spectral_norm_lower(&PowerOptions::default(), 4).unwrap();
        assert!((norm(&est.vector) - 1.0).abs() < 1e-12);
        assert!((t.contract3(&est.vector).unwrap() - est.value).abs() < 1e-12);
        assert!(est.value <= t.abs_sum());
    }

    #[test]
    fn congruence_with_orthonormal_basis_preserves_norm() {
        let t = pseudo_random_tensor(4, 5);
        let q = SymMatrix::from_fn(4, |i, j| (i as f64 + 1.0) * (j as f64 - 1.5) + (i == j) as u8 as f64)
            .eigen()
            .unwrap()
            .vectors;
        let r = t.congruence(&q);
        assert!((r.frobenius_norm() - t.frobenius_norm()).abs() < 1e-10);
        let y = [0.3, -0.1, 0.5, 0.2];
        let mut qy = vec![0.0; 4];
        for (c, v) in y.iter().zip(&q) {
            crate::linalg::axpy(*c, v, &mut qy);
        }
        assert!((r.contract3(&y).unwrap() - t.contract3(&qy).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn from_dense_symmetrizes() {
        let mut raw = vec![0.0; 8];
        raw[1] = 6.0; // (0,0,1)
        let t = SymTensor3::from_dense(2, &raw).unwrap();
        assert_eq!(t.get(0, 1, 0), 2.0);
        assert_eq!(t.get(1, 0, 0), 2.0);
    }
}
