//! Sample sizes, index samplers, sub-sampled derivative estimates and the
//! closed-form tail bounds they come from.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::problems::{DerivativeBundle, FiniteSum, Lipschitz, Order};
use crate::rng;
use crate::tensor::PowerOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    WithReplacement,
    WithoutReplacement,
}

/// Covering constant `2k / ln(3/2)` of the order-`k` tensor bounds.
pub fn covering_constant(order: usize) -> f64 {
    2.0 * order as f64 / 1.5f64.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappas {
    pub g: f64,
    pub b: f64,
    pub t: f64,
}

impl Default for Kappas {
    fn default() -> Self {
        Kappas {
            g: 0.25,
            b: 0.25,
            t: 0.5,
        }
    }
}

/// Range bounds `σ_g, σ_b, σ_t` of the sampled derivative components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spreads {
    pub g: f64,
    pub b: f64,
    pub t: f64,
}

impl Spreads {
    /// `σ_g = L_f`, `σ_b = L_g`, `σ_t = 2 L_b`.
    pub fn from_lipschitz(l: &Lipschitz) -> Self {
        Spreads {
            g: l.f,
            b: l.g,
            t: 2.0 * l.b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanInputs {
    pub eps: f64,
    pub delta: f64,
    pub kappas: Kappas,
    pub spreads: Spreads,
    pub dim: usize,
    pub population: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub n_g: usize,
    pub n_b: usize,
    pub n_t: usize,
    pub scheme: Scheme,
    /// Unrounded values of the three bounds.
    pub raw: [f64; 3],
    /// Per order, whether the size was clamped to the population (full batch).
    pub exact: [bool; 3],
    pub inputs: PlanInputs,
}

impl SamplePlan {
    pub fn sizes(&self) -> [usize; 3] {
        [self.n_g, self.n_b, self.n_t]
    }

    /// Clamps every size to `population`; with replacement the clamp only
    /// bounds the work and does not make an estimate exact.
    pub fn clamp_to(&self, population: usize) -> SamplePlan {
        let mut p = self.clone();
        for n in [&mut p.n_g, &mut p.n_b, &mut p.n_t] {
            *n = (*n).min(population);
        }
        if self.scheme == Scheme::WithoutReplacement {
            p.exact = [p.n_g, p.n_b, p.n_t].map(|n| n == population);
        }
        p.inputs.population = Some(population);
        p
    }

    /// A plan that uses all `population` components for every order.
    pub fn full_batch(population: usize, dim: usize) -> SamplePlan {
        SamplePlan {
            n_g: population,
            n_b: population,
            n_t: population,
            scheme: Scheme::WithoutReplacement,
            raw: [f64::INFINITY; 3],
            exact: [true; 3],
            inputs: PlanInputs {
                eps: 0.0,
                delta: 1.0,
                kappas: Kappas::default(),
                spreads: Spreads {
                    g: 0.0,
                    b: 0.0,
                    t: 0.0,
                },
                dim,
                population: Some(population),
            },
        }
    }
}

fn validate(eps: f64, delta: f64, kappas: &Kappas, spreads: &Spreads, dim: usize) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::invalid("eps", "must lie in (0, 1]"));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::invalid("delta", "must lie in (0, 1]"));
    }
    if !(kappas.g > 0.0 && kappas.b > 0.0 && kappas.t > 0.0) {
        return Err(Error::invalid("kappa", "must be positive"));
    }
    // A zero spread means every component agrees, so one sample is exact.
    if !(spreads.g >= 0.0 && spreads.b >= 0.0 && spreads.t >= 0.0)
        || !(spreads.g.is_finite() && spreads.b.is_finite() && spreads.t.is_finite())
    {
        return Err(Error::invalid("lipschitz", "must be finite and non-negative"));
    }
    if dim == 0 {
        return Err(Error::invalid("d", "must be at least 1"));
    }
    Ok(())
}

/// Deviation targets `κ_g ε`, `κ_b ε^{2/3}`, `κ_t ε^{1/3}`.
fn targets(eps: f64, k: &Kappas) -> [f64; 3] {
    [k.g * eps, k.b * eps.powf(2.0 / 3.0), k.t * eps.cbrt()]
}

/// `ln(2 k0^{3d} / δ)` for the order-3 bound.
fn tensor_log_term(dim: usize, delta: f64) -> f64 {
    2.0f64.ln() + 3.0 * dim as f64 * covering_constant(3).ln() - delta.ln()
}

fn to_size(raw: f64) -> usize {
    // `as` saturates, so astronomically large bounds become usize::MAX
    (raw.ceil() as usize).max(1)
}

pub fn plan_without_replacement(
    eps: f64,
    delta: f64,
    kappas: Kappas,
    spreads: Spreads,
    dim: usize,
    population: usize,
) -> Result<SamplePlan> {
    validate(eps, delta, &kappas, &spreads, dim)?;
    if population == 0 {
        return Err(Error::invalid("N", "must be at least 1"));
    }
    let nn = population as f64;
    let [tg, tb, tt] = targets(eps, &kappas);
    let lm = (2.0 * dim as f64 / delta).ln();
    let lt = tensor_log_term(dim, delta);
    let matrix = |s: f64, t: f64| {
        let a = s * s * lm;
        16.0 * a / (t * t + 8.0 * a / nn)
    };
    let a = spreads.t * spreads.t * lt;
    let raw = [
        matrix(spreads.g, tg),
        matrix(spreads.b, tb),
        4.0 * a / (tt * tt + 2.0 * a / nn),
    ];
    let sizes = raw.map(|r| to_size(r).min(population));
    Ok(SamplePlan {
        n_g: sizes[0],
        n_b: sizes[1],
        n_t: sizes[2],
        scheme: Scheme::WithoutReplacement,
        raw,
        exact: sizes.map(|n| n == population),
        inputs: PlanInputs {
            eps,
            delta,
            kappas,
            spreads,
            dim,
            population: Some(population),
        },
    })
}

pub fn plan_with_replacement(
    eps: f64,
    delta: f64,
    kappas: Kappas,
    spreads: Spreads,
    dim: usize,
) -> Result<SamplePlan> {
    validate(eps, delta, &kappas, &spreads, dim)?;
    let [tg, tb, tt] = targets(eps, &kappas);
    let lm = (dim as f64 / delta).ln();
    let lt = tensor_log_term(dim, delta);
    let raw = [
        8.0 * spreads.g * spreads.g / (tg * tg) * lm,
        8.0 * spreads.b * spreads.b / (tb * tb) * lm,
        2.0 * spreads.t * spreads.t / (tt * tt) * lt,
    ];
    let sizes = raw.map(to_size);
    Ok(SamplePlan {
        n_g: sizes[0],
        n_b: sizes[1],
        n_t: sizes[2],
        scheme: Scheme::WithReplacement,
        raw,
        exact: [false; 3],
        inputs: PlanInputs {
            eps,
            delta,
            kappas,
            spreads,
            dim,
            population: None,
        },
    })
}

/// Draws `n` indices from `0..population`.
///
/// Without replacement the result is a uniformly random `n`-subset returned in
/// increasing order, so a full draw is exactly `0..population`. With
/// replacement the `n` draws are i.i.d. and kept in draw order.
pub fn sample_indices(population: usize, n: usize, scheme: Scheme, seed: u64) -> Result<Vec<usize>> {
    if population == 0 {
        return Err(Error::invalid("N", "must be at least 1"));
    }
    let mut g = rng::rng(seed);
    match scheme {
        Scheme::WithoutReplacement => {
            if n > population {
                return Err(Error::SampleTooLarge {
                    requested: n,
                    population,
                });
            }
            let mut idx = rand::seq::index::sample(&mut g, population, n).into_vec();
            idx.sort_unstable();
            Ok(idx)
        }
        Scheme::WithReplacement => Ok((0..n).map(|_| g.random_range(0..population)).collect()),
    }
}

/// Sub-sampled gradient, Hessian and third derivative at `x`, each averaged
/// over its own independently drawn index set. `value` is the mean over the
/// gradient set.
pub fn estimate_derivatives(
    problem: &dyn FiniteSum,
    x: &[f64],
    plan: &SamplePlan,
    seed: u64,
) -> Result<DerivativeBundle> {
    let n = problem.len();
    let draw = |size: usize, stream: u64| sample_indices(n, size, plan.scheme, rng::derive(seed, stream, 0));
    let sg = draw(plan.n_g, rng::stream::GRADIENT_SAMPLE)?;
    let sb = draw(plan.n_b, rng::stream::HESSIAN_SAMPLE)?;
    let st = draw(plan.n_t, rng::stream::TENSOR_SAMPLE)?;
    let g = problem.mean_over(&sg, x, Order::Gradient)?;
    let b = problem.mean_over(&sb, x, Order::Hessian)?;
    let t = problem.mean_over(&st, x, Order::Third)?;
    Ok(DerivativeBundle {
        value: g.value,
        grad: g.grad,
        hess: b.hess,
        third: t.third,
    })
}

/// Deviations of a sampled bundle from the exact one, in the norms of the
/// sampling condition: `|g - ∇f|`, `|B - ∇²f|` (spectral) and a lower
/// estimate of `|T - ∇³f|` (symmetric spectral norm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition1Check {
    pub grad_error: f64,
    pub hess_error: f64,
    pub third_error: f64,
    pub grad_ok: bool,
    pub hess_ok: bool,
    pub third_ok: bool,
}

impl Condition1Check {
    pub fn holds(&self) -> bool {
        self.grad_ok && self.hess_ok && self.third_ok
    }
}

pub fn check_condition1(
    sampled: &DerivativeBundle,
    exact: &DerivativeBundle,
    eps: f64,
    kappas: &Kappas,
    opts: &PowerOptions,
    seed: u64,
) -> Result<Condition1Check> {
    let [tg, tb, tt] = targets(eps, kappas);
    let grad_error = norm(&crate::linalg::sub(&sampled.grad, &exact.grad));
    let hess_error = sampled.hess().sub(exact.hess())?.spectral_norm()?;
    let dt = sampled.third().sub(exact.third())?;
    let third_error = if dt.max_abs() == 0.0 {
        0.0
    } else {
        dt.spectral_norm_lower(opts, seed)?.value
    };
    Ok(Condition1Check {
        grad_error,
        hess_error,
        third_error,
        grad_ok: grad_error <= tg,
        hess_ok: hess_error <= tb,
        third_ok: third_error <= tt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailBoundKind {
    /// `k0^{Σd} 2 exp(-t² n² / (2σ²(n+1)(1-n/N)))`
    TensorHoeffdingSerfling,
    /// `k0^{Σd} 2 exp(-t² / (2nσ²))`
    TensorHoeffding,
    /// `(d1+d2) exp(-n t² / (8σ²(1+1/n)(1-n/N)))`
    MatrixHoeffdingSerfling,
    /// `d exp(-t² / (8σ²))`
    MatrixHoeffding,
}

/// A closed-form deviation bound `t -> P(|X - EX| >= t)`, evaluated in log
/// space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailBound {
    pub kind: TailBoundKind,
    pub order: usize,
    pub dims: Vec<usize>,
    pub sigma: f64,
    pub n: usize,
    pub population: Option<usize>,
}

impl TailBound {
    fn checked(self) -> Result<Self> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid("sigma", "must be positive and finite"));
        }
        if self.dims.contains(&0) || self.dims.is_empty() {
            return Err(Error::invalid("dims", "must be positive"));
        }
        let needs_n = !matches!(self.kind, TailBoundKind::MatrixHoeffding);
        if needs_n && self.n == 0 {
            return Err(Error::invalid("n", "must be at least 1"));
        }
        if let Some(nn) = self.population {
            if self.n > nn {
                return Err(Error::SampleTooLarge {
                    requested: self.n,
                    population: nn,
                });
            }
        }
        Ok(self)
    }

    pub fn tensor_without_replacement(order: usize, dim: usize, sigma: f64, n: usize, population: usize) -> Result<Self> {
        TailBound {
            kind: TailBoundKind::TensorHoeffdingSerfling,
            order,
            dims: alloc::vec![dim; order],
            sigma,
            n,
            population: Some(population),
        }
        .checked()
    }

    pub fn tensor_with_replacement(order: usize, dim: usize, sigma: f64, n: usize) -> Result<Self> {
        TailBound {
            kind: TailBoundKind::TensorHoeffding,
            order,
            dims: alloc::vec![dim; order],
            sigma,
            n,
            population: None,
        }
        .checked()
    }

    pub fn matrix_without_replacement(d1: usize, d2: usize, sigma: f64, n: usize, population: usize) -> Result<Self> {
        TailBound {
            kind: TailBoundKind::MatrixHoeffdingSerfling,
            order: 2,
            dims: alloc::vec![d1, d2],
            sigma,
            n,
            population: Some(population),
        }
        .checked()
    }

    /// `sigma` is the variance proxy `|Σ A_k²|^{1/2}`.
    pub fn matrix_hoeffding(d: usize, sigma: f64) -> Result<Self> {
        TailBound {
            kind: TailBoundKind::MatrixHoeffding,
            order: 2,
            dims: alloc::vec![d],
            sigma,
            n: 0,
            population: None,
        }
        .checked()
    }

    /// `ln` of the multiplicative prefactor.
    pub fn ln_prefactor(&self) -> f64 {
        let sum: usize = self.dims.iter().sum();
        match self.kind {
            TailBoundKind::TensorHoeffdingSerfling | TailBoundKind::TensorHoeffding => {
                sum as f64 * covering_constant(self.order).ln() + 2.0f64.ln()
            }
            TailBoundKind::MatrixHoeffdingSerfling | TailBoundKind::MatrixHoeffding => (sum as f64).ln(),
        }
    }

    /// Coefficient `c` in the exponent `-c t²`; infinite for an exhaustive
    /// draw without replacement.
    pub fn rate(&self) -> f64 {
        let s2 = self.sigma * self.sigma;
        let n = self.n as f64;
        let fpc = || self.population.map_or(1.0, |nn| 1.0 - n / nn as f64);
        match self.kind {
            TailBoundKind::TensorHoeffdingSerfling => n * n / (2.0 * s2 * (n + 1.0) * fpc()),
            TailBoundKind::TensorHoeffding => 1.0 / (2.0 * n * s2),
            TailBoundKind::MatrixHoeffdingSerfling => n / (8.0 * s2 * (1.0 + 1.0 / n) * fpc()),
            TailBoundKind::MatrixHoeffding => 1.0 / (8.0 * s2),
        }
    }

    pub fn ln_value(&self, t: f64) -> f64 {
        let rate = self.rate();
        let exponent = if t == 0.0 { 0.0 } else { rate * t * t };
        self.ln_prefactor() - exponent
    }

    /// The unclamped bound; may exceed 1 or overflow to infinity.
    pub fn raw(&self, t: f64) -> f64 {
        self.ln_value(t).exp()
    }

    /// `min(bound, 1)`.
    pub fn value(&self, t: f64) -> f64 {
        self.raw(t).min(1.0)
    }

    /// Whether the bound is below 1 at `t`.
    pub fn is_informative(&self, t: f64) -> bool {
        self.ln_value(t) < 0.0
    }

    /// Smallest `t` at which the bound drops below 1, or `None` when it is
    /// still vacuous at `t_max`.
    pub fn crossover(&self, t_max: f64) -> Option<f64> {
        if self.ln_prefactor() < 0.0 || self.rate().is_infinite() {
            return Some(0.0);
        }
        if !self.is_informative(t_max) {
            return None;
        }
        let (mut lo, mut hi) = (0.0, t_max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.is_informative(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-15 * hi.max(1.0) {
                break;
            }
        }
        Some(hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_spreads() -> Spreads {
        Spreads { g: 1.0, b: 1.0, t: 1.0 }
    }

    #[test]
    fn covering_constant_for_order_three() {
        assert!((covering_constant(3) - 14.797820774).abs() < 1e-8);
    }

    #[test]
    fn with_replacement_gradient_size() {
        // t = κ_g ε = 0.1 with ε = 0.4, κ_g = 0.25
        let p = plan_with_replacement(0.4, 0.1, Kappas::default(), unit_spreads(), 10).unwrap();
        assert_eq!(p.n_g, 3685);
    }

    #[test]
    fn doubling_spread_quadruples_size() {
        let a = plan_with_replacement(0.4, 0.1, Kappas::default(), unit_spreads(), 10).unwrap();
        let mut s = unit_spreads();
        s.g = 2.0;
        let b = plan_with_replacement(0.4, 0.1, Kappas::default(), s, 10).unwrap();
        assert_eq!(b.raw[0], 4.0 * a.raw[0]);
    }

    #[test]
    fn huge_target_floors_at_one() {
        let k = Kappas { g: 1e9, b: 1e9, t: 1e9 };
        let p = plan_with_replacement(1.0, 0.5, k, unit_spreads(), 3).unwrap();
        assert_eq!(p.sizes(), [1, 1, 1]);
    }

    #[test]
    fn clamp_marks_exact() {
        let p = plan_without_replacement(0.01, 0.1, Kappas::default(), unit_spreads(), 5, 100).unwrap();
        assert_eq!(p.sizes(), [100, 100, 100]);
        assert_eq!(p.exact, [true; 3]);
    }

    #[test]
    fn invalid_inputs_rejected() {
        let k = Kappas::default();
        assert!(plan_with_replacement(0.1, 0.0, k, unit_spreads(), 3).is_err());
        assert!(plan_with_replacement(0.0, 0.1, k, unit_spreads(), 3).is_err());
        assert!(plan_without_replacement(0.1, 0.1, k, unit_spreads(), 3, 0).is_err());
        let bad = Kappas { g: 0.0, ..k };
        assert!(plan_with_replacement(0.1, 0.1, bad, unit_spreads(), 3).is_err());
        let neg = Spreads { g: -1.0, ..unit_spreads() };
        assert!(plan_with_replacement(0.1, 0.1, k, neg, 3).is_err());
    }

    #[test]
    fn full_draw_is_identity_permutation() {
        let idx = sample_indices(17, 17, Scheme::WithoutReplacement, 5).unwrap();
        assert_eq!(idx, (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn oversized_draw_without_replacement_fails() {
        assert_eq!(
            sample_indices(4, 5, Scheme::WithoutReplacement, 0),
            Err(Error::SampleTooLarge {
                requested: 5,
                population: 4
            })
        );
        assert_eq!(sample_indices(4, 9, Scheme::WithReplacement, 0).unwrap().len(), 9);
    }

    #[test]
    fn tensor_hoeffding_vacuous_at_zero() {
        let b = TailBound::tensor_with_replacement(3, 5, 1.0, 100).unwrap();
        assert!(b.raw(0.0) >= 1.0);
        assert_eq!(b.value(0.0), 1.0);
    }

    #[test]
    fn exhaustive_serfling_bound_is_zero() {
        let b = TailBound::tensor_without_replacement(3, 5, 1.0, 40, 40).unwrap();
        assert_eq!(b.value(1e-3), 0.0);
        assert_eq!(b.crossover(10.0), Some(0.0));
    }

    #[test]
    fn crossover_none_when_vacuous() {
        let b = TailBound::tensor_with_replacement(3, 5, 1.0, 100).unwrap();
        assert_eq!(b.crossover(10.0), None);
    }
}
