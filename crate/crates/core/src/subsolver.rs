//! Approximate minimization of the quartic model.
//!
//! Starting from `s = 0`, the solver alternates damped saddle-free Newton
//! steps (Armijo backtracking) with escape steps along a negative-curvature
//! eigenvector or a third-order certificate, until the step satisfies
//!
//! `m(s) < m(0)`, `χ_{m,1}(s) <= θ|s|^3`, `χ_{m,2}(s) <= θ|s|^2`, `χ_{m,3}(s) <= θ|s|`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::criticality::{chi1, chi2_from_eigen, chi3_with_eigen, CriticalityTriple};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, SymEigen};
use crate::model::QuarticModel;
use crate::rng;
use crate::tensor::PowerOptions;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsolverOptions {
    pub theta: f64,
    /// Curvature tolerance of the model's third-order measure. `None` uses
    /// `θ^2|s|^2`: at `θ|s|^2` a genuine minimizer whose smallest Hessian
    /// eigenvalue sits just under the tolerance fails the third-order test.
    pub zeta: Option<f64>,
    /// Maximum number of model-gradient evaluations.
    pub budget: usize,
    /// Restarts for `χ_{m,3}` inside the loop.
    pub inner_restarts: usize,
    /// Power-method settings for the final `χ_{m,3}` verification.
    pub verify: PowerOptions,
    pub armijo: f64,
    pub backtrack: f64,
    /// Newton steps taken after the conditions first hold, to move the step
    /// closer to a stationary point of the model.
    pub polish: usize,
}

impl SubsolverOptions {
    pub fn new(theta: f64, zeta: Option<f64>) -> Self {
        SubsolverOptions {
            theta,
            zeta,
            budget: 500,
            inner_restarts: 4,
            verify: PowerOptions::default(),
            armijo: 1e-4,
            backtrack: 0.5,
            polish: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0) {
            return Err(Error::invalid("theta", "must be positive"));
        }
        if self.zeta.is_some_and(|z| !(z >= 0.0)) {
            return Err(Error::invalid("zeta", "must be non-negative"));
        }
        if self.budget == 0 {
            return Err(Error::invalid("budget", "must be at least 1"));
        }
        if self.inner_restarts == 0 {
            return Err(Error::invalid("inner_restarts", "must be at least 1"));
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return Err(Error::invalid("armijo", "must lie in (0, 1)"));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::invalid("backtrack", "must lie in (0, 1)"));
        }
        self.verify.validate()
    }

    /// The curvature tolerance used at a step of length `r`.
    pub fn zeta_at(&self, r: f64) -> f64 {
        self.zeta.unwrap_or(self.theta * self.theta * r * r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsolveStatus {
    Converged,
    MaxIter,
    StalledAtZero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsolveResult {
    pub s: Vec<f64>,
    pub model_value: f64,
    pub chi_m: CriticalityTriple,
    /// Curvature tolerance `chi_m.chi3` was computed with.
    pub zeta: f64,
    /// Model-gradient evaluations used.
    pub iterations: usize,
    pub status: SubsolveStatus,
}

/// Checks the approximate-minimization conditions for `s` against measures
/// computed at `s`.
pub fn condition2_holds(model: &QuarticModel, s: &[f64], chi: &CriticalityTriple, theta: f64) -> bool {
    let r = norm(s);
    model.phi_decrease(s) > model.quartic(s)
        && chi.chi1 <= theta * r * r * r
        && chi.chi2 <= theta * r * r
        && chi.chi3 <= theta * r
}

const MAX_HALVINGS: usize = 60;

struct State<'a> {
    model: &'a QuarticModel,
    opts: &'a SubsolverOptions,
    s: Vec<f64>,
    /// `m(s) - f0`
    delta: f64,
    evals: usize,
}

impl State<'_> {
    /// Saddle-free Newton direction `-|H|^{-1} g` with an Armijo search.
    fn newton_step(&mut self, g: &[f64], e: &SymEigen) -> bool {
        let d = g.len();
        let floor = 1e-10 * e.max_abs_value().max(1.0);
        let mut dir = vec![0.0; d];
        for (l, v) in e.values.iter().zip(&e.vectors) {
            axpy(-dot(v, g) / l.abs().max(floor), v, &mut dir);
        }
        let slope = dot(g, &dir);
        if !(slope < 0.0) || !slope.is_finite() {
            return false;
        }
        let mut alpha = 1.0;
        for _ in 0..MAX_HALVINGS {
            let trial = self.offset(alpha, &dir);
            let mt = self.model.delta(&trial);
            if mt <= self.delta + self.opts.armijo * alpha * slope {
                self.accept(trial, mt);
                return true;
            }
            alpha *= self.opts.backtrack;
        }
        // Near the rounding floor Armijo cannot certify progress; take the full
        // step if it does not raise m and shrinks the gradient.
        if self.evals < self.opts.budget {
            let trial = self.offset(1.0, &dir);
            let mt = self.model.delta(&trial);
            if mt <= self.delta {
                self.evals += 1;
                if norm(&self.model.grad_unchecked(&trial)) < norm(g) {
                    self.accept(trial, mt);
                    return true;
                }
            }
        }
        false
    }

    /// Tries `s ± α v`, halving `α` from `σ^{-1/2}` until one sign decreases m.
    fn escape(&mut self, v: &[f64]) -> bool {
        if v.is_empty() {
            return false;
        }
        let mut alpha = 1.0 / self.model.sigma.sqrt();
        for _ in 0..MAX_HALVINGS {
            let plus = self.offset(alpha, v);
            let minus = self.offset(-alpha, v);
            let (mp, mm) = (self.model.delta(&plus), self.model.delta(&minus));
            let (trial, mt) = if mm < mp { (minus, mm) } else { (plus, mp) };
            if mt < self.delta {
                self.accept(trial, mt);
                return true;
            }
            alpha *= self.opts.backtrack;
        }
        false
    }

    fn offset(&self, alpha: f64, dir: &[f64]) -> Vec<f64> {
        let mut t = self.s.clone();
        axpy(alpha, dir, &mut t);
        t
    }

    fn accept(&mut self, s: Vec<f64>, delta: f64) {
        self.s = s;
        self.delta = delta;
    }
}

pub fn solve(model: &QuarticModel, opts: &SubsolverOptions, seed: u64) -> Result<SubsolveResult> {
    opts.validate()?;
    let mut best = descend(model, opts, vec![0.0; model.dim()], seed)?;
    // With indefinite B the descent from zero can settle in a non-global
    // basin; also start from the global minimizer of the model without T.
    let e = model.b.eigen()?;
    if e.min_value() < 0.0 {
        let start = regularized_quadratic_minimizer(&model.g, &e, model.sigma);
        let other = descend(model, opts, start, rng::derive(seed, rng::stream::SUBSOLVER, 1 << 32))?;
        let evals = best.iterations + other.iterations;
        let better = match (best.status, other.status) {
            (SubsolveStatus::Converged, SubsolveStatus::Converged) => other.model_value < best.model_value,
            (_, SubsolveStatus::Converged) => true,
            _ => false,
        };
        if better {
            best = other;
        }
        best.iterations = evals;
    }
    Ok(best)
}

/// Global minimizer of `g^T s + s^T B s / 2 + σ|s|^4 / 4` for indefinite `B`:
/// `s = -(B + λI)^{-1} g` with `λ = σ|s|^2 >= -λ_min`, found by Newton on the
/// concave increasing `λ - σ|s(λ)|^2` from the left of its root.
fn regularized_quadratic_minimizer(g: &[f64], e: &SymEigen, sigma: f64) -> Vec<f64> {
    let c: Vec<f64> = e.vectors.iter().map(|v| dot(v, g)).collect();
    let lo = -e.min_value();
    let r2 = |lam: f64| -> (f64, f64) {
        let mut r2 = 0.0;
        let mut dr2 = 0.0;
        for (l, ci) in e.values.iter().zip(&c) {
            let q = ci / (l + lam);
            r2 += q * q;
            dr2 -= 2.0 * q * q / (l + lam);
        }
        (r2, dr2)
    };
    let h = |lam: f64| lam - sigma * r2(lam).0;
    let mut lam = lo * (1.0 + 1e-12) + 1e-300;
    let mut hard = h(lam) >= 0.0;
    if !hard {
        for _ in 0..200 {
            let (r, dr) = r2(lam);
            let next = lam - (lam - sigma * r) / (1.0 - sigma * dr);
            if !(next > lam) || !next.is_finite() {
                break;
            }
            lam = next;
        }
        hard = !(lam > lo);
    }
    let mut s = vec![0.0; g.len()];
    for ((l, ci), v) in e.values.iter().zip(&c).zip(&e.vectors) {
        if l + lam > 0.0 && !(hard && *l == -lo) {
            axpy(-ci / (l + lam), v, &mut s);
        }
    }
    if hard {
        // g has no weight on the bottom eigenvector: fill the gap along it
        let tau = (lo / sigma - dot(&s, &s)).max(0.0).sqrt();
        axpy(tau, &e.vectors[0], &mut s);
    }
    s
}

fn descend(model: &QuarticModel, opts: &SubsolverOptions, start: Vec<f64>, seed: u64) -> Result<SubsolveResult> {
    let theta = opts.theta;
    let inner = PowerOptions {
        restarts: opts.inner_restarts,
        ..opts.verify
    };
    let delta = model.delta(&start);
    let mut st = State {
        model,
        opts,
        s: start,
        delta,
        evals: 0,
    };

    let mut round: u64 = 0;
    let (status, chi_m, zeta) = loop {
        round += 1;
        let g = model.grad_unchecked(&st.s);
        st.evals += 1;
        let h = model.hess_unchecked(&st.s);
        let e = h.eigen()?;
        let third = model.third(&st.s)?;
        let r = norm(&st.s);
        let c1 = chi1(&g);
        let c2 = chi2_from_eigen(&e);
        let zeta = opts.zeta_at(r);
        let inner_chi3 = |tag: u64| {
            chi3_with_eigen(&h, &e, &third, zeta, &inner, rng::derive(seed, rng::stream::SUBSOLVER, tag))
        };
        let triple = |c3: crate::criticality::Chi3| CriticalityTriple {
            chi1: c1,
            chi2: c2,
            chi3: c3.value,
            chi3_certificate: c3.certificate,
        };
        let decreased = model.phi_decrease(&st.s) > model.quartic(&st.s);

        if decreased && c1 <= theta * r * r * r && c2 <= theta * r * r {
            let c3 = inner_chi3(round)?;
            let cert = if c3.value <= theta * r {
                let fin = chi3_with_eigen(
                    &h,
                    &e,
                    &third,
                    zeta,
                    &opts.verify,
                    rng::derive(seed, rng::stream::VERIFY, round),
                )?;
                if fin.value <= theta * r {
                    break (SubsolveStatus::Converged, triple(fin), zeta);
                }
                fin.certificate
            } else {
                c3.certificate
            };
            if st.evals >= opts.budget || !st.escape(&cert) {
                break (SubsolveStatus::MaxIter, triple(inner_chi3(0)?), zeta);
            }
            continue;
        }

        if st.evals >= opts.budget {
            break (SubsolveStatus::MaxIter, triple(inner_chi3(0)?), zeta);
        }
        if st.newton_step(&g, &e) {
            continue;
        }
        if c2 > 0.0 && st.escape(&e.vectors[0]) {
            continue;
        }
        let c3 = inner_chi3(round)?;
        if st.escape(&c3.certificate) {
            continue;
        }
        let status = if r == 0.0 {
            SubsolveStatus::StalledAtZero
        } else {
            SubsolveStatus::MaxIter
        };
        break (status, triple(c3), zeta);
    };

    let (chi_m, zeta) = if status == SubsolveStatus::Converged && opts.polish > 0 {
        polish(&mut st, chi_m, zeta, seed)?
    } else {
        (chi_m, zeta)
    };

    Ok(SubsolveResult {
        model_value: model.f0 + st.delta,
        s: st.s,
        chi_m,
        zeta,
        iterations: st.evals,
        status,
    })
}

/// Newton refinement of an accepted step. The refined step is kept only if
/// it still passes the full verification.
fn polish(st: &mut State<'_>, chi: CriticalityTriple, zeta: f64, seed: u64) -> Result<(CriticalityTriple, f64)> {
    let model = st.model;
    let opts = st.opts;
    let (s0, d0) = (st.s.clone(), st.delta);
    let floor = 1e-14 * (1.0 + norm(&model.g));
    let mut moved = false;
    for _ in 0..opts.polish {
        if st.evals >= opts.budget {
            break;
        }
        let g = model.grad_unchecked(&st.s);
        st.evals += 1;
        if norm(&g) <= floor {
            break;
        }
        let e = model.hess_unchecked(&st.s).eigen()?;
        if !st.newton_step(&g, &e) {
            break;
        }
        moved = true;
    }
    if !moved {
        return Ok((chi, zeta));
    }
    let r = norm(&st.s);
    let z = opts.zeta_at(r);
    let h = model.hess_unchecked(&st.s);
    let third = model.third(&st.s)?;
    let fin = crate::criticality::evaluate(
        &model.grad_unchecked(&st.s),
        &h,
        &third,
        z,
        &opts.verify,
        rng::derive(seed, rng::stream::VERIFY, 0),
    )?;
    if condition2_holds(model, &st.s, &fin, opts.theta) {
        Ok((fin, z))
    } else {
        st.s = s0;
        st.delta = d0;
        Ok((chi, zeta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymMatrix;
    use crate::tensor::SymTensor3;

    #[test]
    fn scalar_model_converges_to_root() {
        let m = QuarticModel::new(0.0, vec![1.0], SymMatrix::zeros(1), SymTensor3::zeros(1), 4.0).unwrap();
        let r = solve(&m, &SubsolverOptions::new(0.5, Some(0.0)), 1).unwrap();
        assert_eq!(r.status, SubsolveStatus::Converged);
        assert!((r.s[0] + 0.25f64.cbrt()).abs() < 1e-10, "{:?}", r.s);
        assert!(condition2_holds(&m, &r.s, &r.chi_m, 0.5));
    }

    #[test]
    fn critical_model_stalls_at_zero() {
        let m = QuarticModel::new(1.0, vec![0.0; 3], SymMatrix::diagonal(&[1.0, 0.0, 2.0]), SymTensor3::zeros(3), 1.0)
            .unwrap();
        let r = solve(&m, &SubsolverOptions::new(0.1, Some(0.1)), 1).unwrap();
        assert_eq!(r.status, SubsolveStatus::StalledAtZero);
        assert_eq!(r.s, vec![0.0; 3]);
        assert_eq!(r.model_value, 1.0);
    }

    #[test]
    fn saddle_at_origin_is_escaped() {
        let m = QuarticModel::new(0.0, vec![0.0; 2], SymMatrix::diagonal(&[1.0, -1.0]), SymTensor3::zeros(2), 1.0)
            .unwrap();
        let r = solve(&m, &SubsolverOptions::new(0.1, Some(0.1)), 1).unwrap();
        assert_eq!(r.status, SubsolveStatus::Converged);
        // minimizers at s = (0, ±1)
        assert!((r.s[1].abs() - 1.0).abs() < 1e-6);
        assert!((r.model_value + 0.25).abs() < 1e-10);
    }

    #[test]
    fn cubic_term_along_flat_direction_is_used() {
        let m = QuarticModel::new(0.0, vec![0.0; 2], SymMatrix::diagonal(&[0.0, 1.0]), SymTensor3::rank_one(6.0, &[1.0, 0.0]), 1.0)
            .unwrap();
        let r = solve(&m, &SubsolverOptions::new(0.1, Some(0.1)), 1).unwrap();
        assert_eq!(r.status, SubsolveStatus::Converged);
        assert!(r.model_value < 0.0);
    }

    #[test]
    fn unpolished_step_still_meets_conditions() {
        let m = QuarticModel::new(0.0, vec![1.0], SymMatrix::zeros(1), SymTensor3::zeros(1), 4.0).unwrap();
        let o = SubsolverOptions {
            polish: 0,
            ..SubsolverOptions::new(0.5, Some(0.0))
        };
        let r = solve(&m, &o, 1).unwrap();
        assert_eq!(r.status, SubsolveStatus::Converged);
        // stopping once |m'(s)| <= θ|s|^3 leaves |s - s*| <= 0.125 / m''(s*) < 0.03
        assert!((r.s[0] + 0.25f64.cbrt()).abs() < 0.03, "{:?}", r.s);
        assert!(condition2_holds(&m, &r.s, &r.chi_m, 0.5));
    }

    #[test]
    fn bad_options_rejected() {
        let m = QuarticModel::new(0.0, vec![1.0], SymMatrix::zeros(1), SymTensor3::zeros(1), 1.0).unwrap();
        let mut o = SubsolverOptions::new(0.1, None);
        o.budget = 0;
        assert!(solve(&m, &o, 0).is_err());
        assert!(solve(&m, &SubsolverOptions::new(0.0, None), 0).is_err());
    }
}
