//! First-, second- and third-order criticality measures.
//!
//! `χ1 = |g|`, `χ2 = max(0, -λ_min(H))` and
//! `χ3 = max { |T[y]^3| : |y| = 1, |H[y]^2| <= ζ }`. The last one is a
//! non-convex maximization; the value returned is a lower bound attained by
//! the accompanying certificate.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, SymEigen, SymMatrix};
use crate::rng;
use crate::tensor::{maximize_cubic, CubicForm, CubicMax, PowerOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityTriple {
    pub chi1: f64,
    pub chi2: f64,
    pub chi3: f64,
    /// Unit vector attaining `chi3`; empty when no feasible direction exists.
    pub chi3_certificate: Vec<f64>,
}

impl CriticalityTriple {
    pub fn values(&self) -> [f64; 3] {
        [self.chi1, self.chi2, self.chi3]
    }

    /// Whether `chi_i <= eps_i` for all three orders.
    pub fn within(&self, eps: &[f64; 3]) -> bool {
        self.chi1 <= eps[0] && self.chi2 <= eps[1] && self.chi3 <= eps[2]
    }
}

pub fn chi1(grad: &[f64]) -> f64 {
    norm(grad)
}

pub fn chi2(hess: &SymMatrix) -> Result<f64> {
    Ok(chi2_from_eigen(&hess.eigen()?))
}

pub fn chi2_from_eigen(e: &SymEigen) -> f64 {
    (-e.min_value()).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chi3 {
    pub value: f64,
    pub certificate: Vec<f64>,
}

pub fn chi3<F: CubicForm + ?Sized>(
    hess: &SymMatrix,
    third: &F,
    zeta: f64,
    opts: &PowerOptions,
    seed: u64,
) -> Result<Chi3> {
    let e = hess.eigen()?;
    chi3_with_eigen(hess, &e, third, zeta, opts, seed)
}

const ASCENT_PHASES: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];
const ASCENT_STEPS: usize = 60;
const BOUNDARY_HALVINGS: usize = 50;
const CONE_STARTS: usize = 4;
const EDGE_STEPS: usize = 300;

/// `χ3` given a precomputed eigendecomposition of `hess`.
pub fn chi3_with_eigen<F: CubicForm + ?Sized>(
    hess: &SymMatrix,
    eigen: &SymEigen,
    third: &F,
    zeta: f64,
    opts: &PowerOptions,
    seed: u64,
) -> Result<Chi3> {
    if !(zeta >= 0.0) {
        return Err(Error::invalid("zeta", "must be non-negative"));
    }
    opts.validate()?;
    let d = hess.dim();
    if third.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: third.dim(),
        });
    }
    let basis: Vec<Vec<f64>> = eigen
        .values
        .iter()
        .zip(&eigen.vectors)
        .filter(|(l, _)| l.abs() <= zeta)
        .map(|(_, v)| v.clone())
        .collect();

    // the whole sphere is feasible: plain spectral-norm estimate
    if basis.len() == d {
        let m = maximize_cubic(third, None, opts, seed);
        return Ok(finish(third, m.vector));
    }

    let feasible = |y: &[f64]| hess.quad_form(y).abs() <= zeta;
    let mut best: Option<Vec<f64>> = None;
    let mut best_val = f64::NEG_INFINITY;
    // candidates are normalized before the feasibility test so the stored
    // certificate is exactly the point that passed it
    let offer = |y: &[f64], best: &mut Option<Vec<f64>>, best_val: &mut f64| {
        let n = norm(y);
        if !(n > 0.0) {
            return;
        }
        let y: Vec<f64> = y.iter().map(|v| v / n).collect();
        if !feasible(&y) {
            return;
        }
        let v = third.apply3(&y).abs();
        let better = v > *best_val || (v == *best_val && best.as_deref().is_some_and(|b| lex_less(&y, b)));
        if better {
            *best_val = v;
            *best = Some(y);
        }
    };

    let mut starts = Vec::new();
    if !basis.is_empty() {
        let sub = maximize_cubic(third, Some(&basis), opts, seed);
        offer(&sub.vector, &mut best, &mut best_val);
        starts.push(sub.vector);
    }
    let free: CubicMax = maximize_cubic(third, None, opts, rng::derive(seed, rng::stream::CRITICALITY, 1));
    if !free.vector.is_empty() {
        offer(&free.vector, &mut best, &mut best_val);
        starts.push(free.vector);
    }

    // exact zeros of the quadratic form between eigenvectors of opposite sign
    let mut cone: Vec<(f64, Vec<f64>)> = Vec::new();
    for (li, vi) in eigen.values.iter().zip(&eigen.vectors).filter(|(l, _)| **l < -zeta) {
        for (lj, vj) in eigen.values.iter().zip(&eigen.vectors).filter(|(l, _)| **l > zeta) {
            let (a, b) = (lj.sqrt(), (-li).sqrt());
            for sign in [1.0, -1.0] {
                let mut y: Vec<f64> = vi.iter().map(|x| a * x).collect();
                axpy(sign * b, vj, &mut y);
                let n = norm(&y);
                y.iter_mut().for_each(|x| *x /= n);
                offer(&y, &mut best, &mut best_val);
                cone.push((third.apply3(&y).abs(), y));
            }
        }
    }
    cone.sort_by(|a, b| b.0.total_cmp(&a.0));
    starts.extend(cone.into_iter().take(CONE_STARTS).map(|(_, y)| y));

    let h_norm = eigen.max_abs_value();
    let bound = third.norm_bound();
    if h_norm > 0.0 && bound > 0.0 {
        // T is odd, so climbing +T from both y and -y covers |T|
        let signed: Vec<Vec<f64>> = starts
            .iter()
            .flat_map(|s| [s.clone(), s.iter().map(|x| -x).collect()])
            .collect();
        for start in &signed {
            let end = penalized_ascent(hess, third, zeta, h_norm, bound, start, |y| {
                offer(y, &mut best, &mut best_val)
            });
            // the penalty leaves the end slightly outside the band; walk back
            // to its edge towards the last feasible iterate, then climb
            let from = match end {
                Some((_, y)) if feasible(&y) => y,
                Some((Some(lo), hi)) => to_edge(hess, zeta, lo, hi),
                // never inside: pull the end onto the edge directly
                Some((None, hi)) => {
                    let target = hess.quad_form(&hi).signum() * zeta * (1.0 - 1e-12);
                    match retract(hess, target, hi) {
                        Some(y) if feasible(&y) => y,
                        _ => continue,
                    }
                }
                None => continue,
            };
            let top = feasible_climb(hess, third, zeta, bound, from);
            offer(&top, &mut best, &mut best_val);
        }
        // the incumbent may have been met mid-ascent and never climbed
        if let Some(b) = best.clone() {
            let top = feasible_climb(hess, third, zeta, bound, b);
            offer(&top, &mut best, &mut best_val);
        }
    }

    Ok(match best {
        Some(c) => Chi3 {
            value: best_val,
            certificate: c,
        },
        None => Chi3 {
            value: 0.0,
            certificate: Vec::new(),
        },
    })
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).find(|(x, y)| x != y).is_some_and(|(x, y)| x < y)
}

/// Reported value is always recomputed at the (normalized) certificate.
fn finish<F: CubicForm + ?Sized>(third: &F, mut y: Vec<f64>) -> Chi3 {
    let n = norm(&y);
    if n == 0.0 {
        return Chi3 {
            value: 0.0,
            certificate: Vec::new(),
        };
    }
    y.iter_mut().for_each(|v| *v /= n);
    Chi3 {
        value: third.apply3(&y).abs(),
        certificate: y,
    }
}

/// Bisects along the arc from feasible `lo` to infeasible `hi` and returns
/// the last feasible point, which lies on the band edge.
fn to_edge(hess: &SymMatrix, zeta: f64, mut lo: Vec<f64>, mut hi: Vec<f64>) -> Vec<f64> {
    for _ in 0..BOUNDARY_HALVINGS {
        let mut mid: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| a + b).collect();
        let n = norm(&mid);
        if !(n > 0.0) {
            break;
        }
        mid.iter_mut().for_each(|x| *x /= n);
        if hess.quad_form(&mid).abs() <= zeta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Monotone ascent of `|T[y]^3|` over the feasible band from a feasible
/// point. Inside the band this is a plain sphere step; a step that leaves
/// is cut back to the edge, and on the edge the outward part of the step is
/// projected away and the iterate pulled back by Newton on the form.
fn feasible_climb<F: CubicForm + ?Sized>(hess: &SymMatrix, third: &F, zeta: f64, bound: f64, mut y: Vec<f64>) -> Vec<f64> {
    let sign = if third.apply3(&y) >= 0.0 { 1.0 } else { -1.0 };
    let value = |z: &[f64]| sign * third.apply3(z);
    let mut val = value(&y);
    let mut step = 1.0 / (6.0 * bound);
    for _ in 0..EDGE_STEPS {
        let mut g: Vec<f64> = third.apply2(&y).iter().map(|v| sign * v).collect();
        let r = dot(&g, &y);
        axpy(-r, &y, &mut g);
        let mut u = hess.mul_vec_unchecked(&y);
        let q = dot(&u, &y);
        axpy(-q, &y, &mut u);
        let on_edge = q.abs() >= zeta * (1.0 - 1e-9);
        let mut projected = false;
        let uu = dot(&u, &u);
        if on_edge && uu > 0.0 && dot(&g, &u) * q > 0.0 {
            let c = dot(&g, &u) / uu;
            axpy(-c, &u, &mut g);
            projected = true;
        }
        if !(norm(&g) > 0.0) {
            break;
        }
        let target = q.signum() * zeta * (1.0 - 1e-12);
        let mut moved = false;
        while step > 1e-14 {
            let mut z = y.clone();
            axpy(step, &g, &mut z);
            let z = if projected {
                retract(hess, target, z)
            } else {
                let n = norm(&z);
                z.iter_mut().for_each(|v| *v /= n);
                Some(z)
            };
            if let Some(z) = z {
                if hess.quad_form(&z).abs() <= zeta {
                    if value(&z) > val {
                        val = value(&z);
                        y = z;
                        moved = true;
                        step *= 2.0;
                        break;
                    }
                } else if !projected {
                    let e = to_edge(hess, zeta, y.clone(), z);
                    if value(&e) > val {
                        val = value(&e);
                        y = e;
                        moved = true;
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    y
}

fn retract(hess: &SymMatrix, target: f64, mut y: Vec<f64>) -> Option<Vec<f64>> {
    for _ in 0..6 {
        let n = norm(&y);
        if !(n > 0.0) {
            return None;
        }
        y.iter_mut().for_each(|v| *v /= n);
        let mut u = hess.mul_vec_unchecked(&y);
        let q = dot(&u, &y);
        axpy(-q, &y, &mut u);
        let uu = dot(&u, &u);
        if !(uu > 0.0) {
            return None;
        }
        axpy((target - q) / (2.0 * uu), &u, &mut y);
    }
    let n = norm(&y);
    y.iter_mut().for_each(|v| *v /= n);
    Some(y)
}

/// Projected gradient ascent on the sphere for
/// `T[y]^3 - μ max(0, |H[y]^2| - ζ)^2` with increasing `μ`; every iterate
/// is offered to `visit`, which keeps only feasible ones. Returns the last
/// feasible iterate (if any) and the final one.
fn penalized_ascent<F: CubicForm + ?Sized>(
    hess: &SymMatrix,
    third: &F,
    zeta: f64,
    h_norm: f64,
    bound: f64,
    start: &[f64],
    mut visit: impl FnMut(&[f64]),
) -> Option<(Option<Vec<f64>>, Vec<f64>)> {
    let mut y = start.to_vec();
    let mut inside = (hess.quad_form(&y).abs() <= zeta).then(|| y.clone());
    let d = y.len();
    for &scale in &ASCENT_PHASES {
        let mu = scale * bound / (h_norm * h_norm);
        let step = 1.0 / (6.0 * bound + 12.0 * mu * h_norm * h_norm);
        for _ in 0..ASCENT_STEPS {
            let t2 = third.apply2(&y);
            let hy = hess.mul_vec_unchecked(&y);
            let q = dot(&hy, &y);
            let excess = (q.abs() - zeta).max(0.0);
            let mut grad = Vec::with_capacity(d);
            for i in 0..d {
                grad.push(3.0 * t2[i] - 4.0 * mu * excess * q.signum() * hy[i]);
            }
            let radial = dot(&grad, &y);
            for i in 0..d {
                y[i] += step * (grad[i] - radial * y[i]);
            }
            let n = norm(&y);
            if !(n > 0.0) {
                return None;
            }
            y.iter_mut().for_each(|v| *v /= n);
            if hess.quad_form(&y).abs() <= zeta {
                inside = Some(y.clone());
            }
            visit(&y);
        }
    }
    Some((inside, y))
}

/// All three measures from a Hessian and a third-derivative form.
pub fn evaluate<F: CubicForm + ?Sized>(
    grad: &[f64],
    hess: &SymMatrix,
    third: &F,
    zeta: f64,
    opts: &PowerOptions,
    seed: u64,
) -> Result<CriticalityTriple> {
    let e = hess.eigen()?;
    let c3 = chi3_with_eigen(hess, &e, third, zeta, opts, seed)?;
    Ok(CriticalityTriple {
        chi1: chi1(grad),
        chi2: chi2_from_eigen(&e),
        chi3: c3.value,
        chi3_certificate: c3.certificate,
    })
}
