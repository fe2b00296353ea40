//! Finite-sum test objectives `f(x) = (1/n) sum_i f_i(x)` with closed-form
//! derivatives through third order.
//!
//! All three generators draw their data from a seeded ChaCha stream
//! (`rng::derive(seed, PROBLEM_DATA, 0)`): first the `n` unit vectors `a_i`
//! (Gaussian, normalized), then any per-problem extras in a fixed order.
//!
//! The declared Lipschitz constants follow the component derivatives. `L_f`
//! is reported for the component-specific part of `f_i` only; the shared
//! regularizers are identical for every `i`, so they cancel from any
//! sampling deviation and would otherwise make `L_f` unbounded.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_dim, dot, norm, SymMatrix};
use crate::rng;
use crate::tensor::SymTensor3;

/// Highest derivative order requested from an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Order {
    Value,
    Gradient,
    Hessian,
    Third,
}

/// Value and derivatives of a function at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeBundle {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Option<SymMatrix>,
    pub third: Option<SymTensor3>,
}

impl DerivativeBundle {
    pub fn zeros(dim: usize, order: Order) -> Self {
        DerivativeBundle {
            value: 0.0,
            grad: vec![0.0; dim],
            hess: (order >= Order::Hessian).then(|| SymMatrix::zeros(dim)),
            third: (order >= Order::Third).then(|| SymTensor3::zeros(dim)),
        }
    }

    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    pub fn hess(&self) -> &SymMatrix {
        self.hess.as_ref().expect("bundle evaluated without Hessian")
    }

    pub fn third(&self) -> &SymTensor3 {
        self.third.as_ref().expect("bundle evaluated without third derivative")
    }

    pub(crate) fn scale(&mut self, alpha: f64) {
        self.value *= alpha;
        self.grad.iter_mut().for_each(|g| *g *= alpha);
        if let Some(h) = &mut self.hess {
            h.scale(alpha);
        }
        if let Some(t) = &mut self.third {
            t.scale(alpha);
        }
    }
}

/// Lipschitz constants of `f_i`, `∇f_i`, `∇²f_i`, `∇³f_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lipschitz {
    pub f: f64,
    pub g: f64,
    pub b: f64,
    pub t: f64,
}

/// A finite-sum objective with component access.
pub trait FiniteSum: Sync {
    fn name(&self) -> &str;

    /// Number of components `n`.
    fn len(&self) -> usize;

    fn dim(&self) -> usize;

    /// Adds `weight` times the derivatives of `f_i` at `x`, up to `order`, into
    /// `acc`. `x.len()` has already been checked.
    fn accumulate(&self, i: usize, x: &[f64], order: Order, weight: f64, acc: &mut DerivativeBundle);

    fn lipschitz(&self) -> Lipschitz;

    /// A known lower bound on `f`.
    fn f_low(&self) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn component(&self, i: usize, x: &[f64], order: Order) -> Result<DerivativeBundle> {
        self.mean_over(&[i], x, order)
    }

    /// Arithmetic mean of the component derivatives over `indices`
    /// (a multiset; repeated indices count repeatedly).
    fn mean_over(&self, indices: &[usize], x: &[f64], order: Order) -> Result<DerivativeBundle> {
        check_dim(self.dim(), x.len())?;
        if indices.is_empty() {
            return Err(Error::invalid("indices", "sample set is empty"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: bad,
            });
        }
        let mut acc = DerivativeBundle::zeros(self.dim(), order);
        for &i in indices {
            self.accumulate(i, x, order, 1.0, &mut acc);
        }
        acc.scale(1.0 / indices.len() as f64);
        Ok(acc)
    }

    /// Exact derivatives of `f`.
    fn full(&self, x: &[f64], order: Order) -> Result<DerivativeBundle> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.mean_over(&all, x, order)
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.full(x, Order::Value)?.value)
    }
}

fn unit_vectors<R: Rng>(g: &mut R, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| rng::unit_vec(g, d)).collect()
}

fn check_shape(n: usize, d: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    if d == 0 {
        return Err(Error::invalid("d", "must be at least 1"));
    }
    Ok(())
}

/// Adds the rank-one pieces of a ridge function `h(a^T x)`.
fn accumulate_ridge(
    a: &[f64],
    derivs: [f64; 4],
    order: Order,
    weight: f64,
    acc: &mut DerivativeBundle,
) {
    acc.value += weight * derivs[0];
    if order >= Order::Gradient {
        crate::linalg::axpy(weight * derivs[1], a, &mut acc.grad);
    }
    if order >= Order::Hessian {
        acc.hess.as_mut().unwrap().add_outer(weight * derivs[2], a);
    }
    if order >= Order::Third {
        acc.third.as_mut().unwrap().add_rank_one(weight * derivs[3], a);
    }
}

/// `f_i(x) = cos(a_i^T x) + (λ/2)|x|^2` with unit `a_i`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CosineSum {
    pub directions: Vec<Vec<f64>>,
    pub lambda: f64,
}

pub fn make_cosine_sum(n: usize, d: usize, seed: u64, lambda: f64) -> Result<CosineSum> {
    check_shape(n, d)?;
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda", "must be non-negative"));
    }
    let mut g = rng::rng(rng::derive(seed, rng::stream::PROBLEM_DATA, 0));
    Ok(CosineSum {
        directions: unit_vectors(&mut g, n, d),
        lambda,
    })
}

impl FiniteSum for CosineSum {
    fn name(&self) -> &str {
        "cosine_sum"
    }

    fn len(&self) -> usize {
        self.directions.len()
    }

    fn dim(&self) -> usize {
        self.directions[0].len()
    }

    fn accumulate(&self, i: usize, x: &[f64], order: Order, weight: f64, acc: &mut DerivativeBundle) {
        let a = &self.directions[i];
        let z = dot(a, x);
        let (s, c) = (z.sin(), z.cos());
        accumulate_ridge(a, [c, -s, -c, s], order, weight, acc);
        let lam = weight * self.lambda;
        acc.value += 0.5 * lam * dot(x, x);
        if order >= Order::Gradient {
            crate::linalg::axpy(lam, x, &mut acc.grad);
        }
        if order >= Order::Hessian {
            acc.hess.as_mut().unwrap().add_diagonal(lam);
        }
    }

    fn lipschitz(&self) -> Lipschitz {
        Lipschitz {
            f: 1.0,
            g: 1.0 + self.lambda,
            b: 1.0,
            t: 1.0,
        }
    }

    fn f_low(&self) -> f64 {
        -1.0
    }
}

/// `f_i(x) = |x - b_i|^2 / 2`, minimized at the mean of the `b_i`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadraticSum {
    pub centers: Vec<Vec<f64>>,
}

pub fn make_quadratic_sum(n: usize, d: usize, seed: u64) -> Result<QuadraticSum> {
    check_shape(n, d)?;
    let mut g = rng::rng(rng::derive(seed, rng::stream::PROBLEM_DATA, 0));
    Ok(QuadraticSum {
        centers: (0..n).map(|_| rng::gaussian_vec(&mut g, d)).collect(),
    })
}

impl QuadraticSum {
    pub fn minimizer(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for b in &self.centers {
            crate::linalg::axpy(1.0 / self.len() as f64, b, &mut m);
        }
        m
    }
}

impl FiniteSum for QuadraticSum {
    fn name(&self) -> &str {
        "quadratic_sum"
    }

    fn len(&self) -> usize {
        self.centers.len()
    }

    fn dim(&self) -> usize {
        self.centers[0].len()
    }

    fn accumulate(&self, i: usize, x: &[f64], order: Order, weight: f64, acc: &mut DerivativeBundle) {
        let r = crate::linalg::sub(x, &self.centers[i]);
        acc.value += 0.5 * weight * dot(&r, &r);
        if order >= Order::Gradient {
            crate::linalg::axpy(weight, &r, &mut acc.grad);
        }
        if order >= Order::Hessian {
            acc.hess.as_mut().unwrap().add_diagonal(weight);
        }
    }

    fn lipschitz(&self) -> Lipschitz {
        Lipschitz {
            f: self.centers.iter().map(|b| norm(b)).fold(0.0, f64::max),
            g: 1.0,
            b: 0.0,
            t: 0.0,
        }
    }

    fn f_low(&self) -> f64 {
        let m = self.minimizer();
        self.centers
            .iter()
            .map(|b| 0.5 * dot(&crate::linalg::sub(&m, b), &crate::linalg::sub(&m, b)))
            .sum::<f64>()
            / self.len() as f64
    }
}

/// Logistic loss on unit features with the separable non-convex penalty
/// `λ sum_j x_j^2 / (1 + x_j^2)`:
///
/// `f_i(x) = log(1 + exp(-y_i a_i^T x)) + λ sum_j r(x_j)`.
///
/// Labels come from a planted direction `w` (Gaussian, scaled to norm 3):
/// `y_i = +1` with probability `1 / (1 + exp(-a_i^T w))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonconvexLogistic {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub lambda: f64,
}

pub fn make_nonconvex_logistic(n: usize, d: usize, seed: u64, lambda: f64) -> Result<NonconvexLogistic> {
    check_shape(n, d)?;
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda", "must be non-negative"));
    }
    let mut g = rng::rng(rng::derive(seed, rng::stream::PROBLEM_DATA, 0));
    let features = unit_vectors(&mut g, n, d);
    let planted = crate::linalg::scaled(3.0, &rng::unit_vec(&mut g, d));
    let labels = features
        .iter()
        .map(|a| {
            let p = sigmoid(dot(a, &planted));
            if g.random::<f64>() < p {
                1.0
            } else {
                -1.0
            }
        })
        .collect();
    Ok(NonconvexLogistic {
        features,
        labels,
        lambda,
    })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(-z))` and its first three derivatives.
fn logistic_loss(z: f64) -> [f64; 4] {
    let value = if z >= 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    };
    let s = sigmoid(z);
    let p = s * (1.0 - s);
    [value, s - 1.0, p, p * (1.0 - 2.0 * s)]
}

/// `t^2 / (1 + t^2)` and its first three derivatives.
fn penalty(t: f64) -> [f64; 4] {
    let q = 1.0 + t * t;
    [
        t * t / q,
        2.0 * t / (q * q),
        (2.0 - 6.0 * t * t) / (q * q * q),
        24.0 * t * (t * t - 1.0) / (q * q * q * q),
    ]
}

/// `sup_t |r'''(t)|`, attained where `5t^4 - 10t^2 + 1 = 0`.
pub fn penalty_third_derivative_bound() -> f64 {
    let t = (1.0 - 2.0 / 5.0f64.sqrt()).sqrt();
    penalty(t)[3].abs()
}

impl FiniteSum for NonconvexLogistic {
    fn name(&self) -> &str {
        "nonconvex_logistic"
    }

    fn len(&self) -> usize {
        self.features.len()
    }

    fn dim(&self) -> usize {
        self.features[0].len()
    }

    fn accumulate(&self, i: usize, x: &[f64], order: Order, weight: f64, acc: &mut DerivativeBundle) {
        let a = &self.features[i];
        let y = self.labels[i];
        let l = logistic_loss(y * dot(a, x));
        // y^2 = 1, y^3 = y
        accumulate_ridge(a, [l[0], y * l[1], l[2], y * l[3]], order, weight, acc);
        if self.lambda == 0.0 {
            return;
        }
        let lam = weight * self.lambda;
        for (j, &xj) in x.iter().enumerate() {
            let r = penalty(xj);
            acc.value += lam * r[0];
            if order >= Order::Gradient {
                acc.grad[j] += lam * r[1];
            }
            if order >= Order::Hessian {
                let h = acc.hess.as_mut().unwrap();
                let v = h.get(j, j) + lam * r[2];
                h.set(j, j, v);
            }
            if order >= Order::Third {
                let t = acc.third.as_mut().unwrap();
                let v = t.get(j, j, j) + lam * r[3];
                t.set(j, j, j, v);
            }
        }
    }

    fn lipschitz(&self) -> Lipschitz {
        // |l'| <= 1, |l''| <= 1/4, |l'''| <= 1/(6 sqrt 3), |l''''| <= 1/8;
        // |r''| <= 2, |r''''| <= 24.
        Lipschitz {
            f: 1.0,
            g: 0.25 + 2.0 * self.lambda,
            b: 1.0 / (6.0 * 3.0f64.sqrt()) + self.lambda * penalty_third_derivative_bound(),
            t: 0.125 + 24.0 * self.lambda,
        }
    }

    fn f_low(&self) -> f64 {
        0.0
    }
}

/// Problem selection by name, as used by configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    CosineSum {
        n: usize,
        d: usize,
        seed: u64,
        #[serde(default = "default_cosine_lambda")]
        lambda: f64,
    },
    QuadraticSum {
        n: usize,
        d: usize,
        seed: u64,
    },
    NonconvexLogistic {
        n: usize,
        d: usize,
        seed: u64,
        #[serde(default = "default_logistic_lambda")]
        lambda: f64,
    },
}

fn default_cosine_lambda() -> f64 {
    0.05
}

fn default_logistic_lambda() -> f64 {
    0.01
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Box<dyn FiniteSum>> {
        Ok(match *self {
            ProblemSpec::CosineSum { n, d, seed, lambda } => Box::new(make_cosine_sum(n, d, seed, lambda)?),
            ProblemSpec::QuadraticSum { n, d, seed } => Box::new(make_quadratic_sum(n, d, seed)?),
            ProblemSpec::NonconvexLogistic { n, d, seed, lambda } => {
                Box::new(make_nonconvex_logistic(n, d, seed, lambda)?)
            }
        })
    }

    pub fn label(&self) -> String {
        match self {
            ProblemSpec::CosineSum { .. } => "cosine_sum".into(),
            ProblemSpec::QuadraticSum { .. } => "quadratic_sum".into(),
            ProblemSpec::NonconvexLogistic { .. } => "nonconvex_logistic".into(),
        }
    }
}
