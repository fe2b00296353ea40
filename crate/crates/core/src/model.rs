//! The regularized third-order model
//! `m(s) = f0 + g^T s + s^T B s / 2 + T[s]^3 / 6 + σ |s|^4 / 4`.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_dim, dot, SymMatrix};
use crate::problems::DerivativeBundle;
use crate::tensor::{CubicForm, SymTensor3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuarticModel {
    pub f0: f64,
    pub g: Vec<f64>,
    pub b: SymMatrix,
    pub t: SymTensor3,
    pub sigma: f64,
}

impl QuarticModel {
    pub fn new(f0: f64, g: Vec<f64>, b: SymMatrix, t: SymTensor3, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid("sigma", "must be positive and finite"));
        }
        check_dim(g.len(), b.dim())?;
        check_dim(g.len(), t.dim())?;
        Ok(QuarticModel { f0, g, b, t, sigma })
    }

    /// Model at `x` built from sampled derivatives and the exact value `f0`.
    pub fn from_bundle(f0: f64, bundle: &DerivativeBundle, sigma: f64) -> Result<Self> {
        QuarticModel::new(
            f0,
            bundle.grad.clone(),
            bundle.hess().clone(),
            bundle.third().clone(),
            sigma,
        )
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    /// `φ(s) - f0`, assembled without the constant so small changes keep
    /// their precision.
    pub fn phi_delta(&self, s: &[f64]) -> f64 {
        let bs = self.b.mul_vec_unchecked(s);
        let ts = self.t.contract2_unchecked(s);
        dot(&self.g, s) + 0.5 * dot(&bs, s) + dot(&ts, s) / 6.0
    }

    /// `σ |s|^4 / 4`.
    pub fn quartic(&self, s: &[f64]) -> f64 {
        let r2 = dot(s, s);
        0.25 * self.sigma * r2 * r2
    }

    /// `m(s) - f0`.
    pub fn delta(&self, s: &[f64]) -> f64 {
        self.phi_delta(s) + self.quartic(s)
    }

    /// `φ(0) - φ(s)`.
    pub fn phi_decrease(&self, s: &[f64]) -> f64 {
        -self.phi_delta(s)
    }

    pub fn eval_phi(&self, s: &[f64]) -> Result<f64> {
        check_dim(self.dim(), s.len())?;
        Ok(self.f0 + self.phi_delta(s))
    }

    pub fn eval(&self, s: &[f64]) -> Result<f64> {
        check_dim(self.dim(), s.len())?;
        Ok(self.f0 + self.delta(s))
    }

    pub fn grad(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), s.len())?;
        Ok(self.grad_unchecked(s))
    }

    pub(crate) fn grad_unchecked(&self, s: &[f64]) -> Vec<f64> {
        let mut out = self.b.mul_vec_unchecked(s);
        let ts = self.t.contract2_unchecked(s);
        let r2 = dot(s, s);
        for i in 0..out.len() {
            out[i] += self.g[i] + 0.5 * ts[i] + self.sigma * r2 * s[i];
        }
        out
    }

    pub fn hess(&self, s: &[f64]) -> Result<SymMatrix> {
        check_dim(self.dim(), s.len())?;
        Ok(self.hess_unchecked(s))
    }

    pub(crate) fn hess_unchecked(&self, s: &[f64]) -> SymMatrix {
        let mut h = self.b.clone();
        h.add_scaled(1.0, &self.t.contract1_unchecked(s));
        h.add_scaled(self.sigma, &quartic_hessian(s));
        h
    }

    /// Third derivative at `s`, as a contraction-only view.
    pub fn third(&self, s: &[f64]) -> Result<ModelThird<'_>> {
        check_dim(self.dim(), s.len())?;
        Ok(ModelThird {
            t: &self.t,
            sigma: self.sigma,
            s: s.to_vec(),
        })
    }
}

/// `|s|^2 I + 2 s s^T`, the Hessian of `|s|^4 / 4`.
pub fn quartic_hessian(s: &[f64]) -> SymMatrix {
    let mut h = SymMatrix::identity(s.len());
    h.scale(dot(s, s));
    h.add_outer(2.0, s);
    h
}

/// `∇³m(s) = T + σ Q(s)` where `Q(s)[y]^3 = 6 (s^T y) |y|^2`.
#[derive(Debug, Clone)]
pub struct ModelThird<'a> {
    t: &'a SymTensor3,
    sigma: f64,
    s: Vec<f64>,
}

impl ModelThird<'_> {
    /// Materializes the tensor.
    pub fn to_dense(&self) -> SymTensor3 {
        let d = self.s.len();
        let s = &self.s;
        let delta = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
        let mut out = self.t.clone();
        out.add_scaled(
            1.0,
            &SymTensor3::from_fn(d, |i, j, k| {
                2.0 * self.sigma * (s[i] * delta(j, k) + s[j] * delta(i, k) + s[k] * delta(i, j))
            }),
        );
        out
    }
}

impl CubicForm for ModelThird<'_> {
    fn dim(&self) -> usize {
        self.s.len()
    }

    fn apply2(&self, y: &[f64]) -> Vec<f64> {
        let mut out = self.t.contract2_unchecked(y);
        let sy = dot(&self.s, y);
        let yy = dot(y, y);
        for i in 0..out.len() {
            out[i] += 2.0 * self.sigma * (self.s[i] * yy + 2.0 * sy * y[i]);
        }
        out
    }

    fn norm_bound(&self) -> f64 {
        self.t.frobenius_norm() + 6.0 * self.sigma * crate::linalg::norm(&self.s)
    }
}
