//! Monte Carlo checks of the tensor tail bounds.
//!
//! A [`TensorPopulation`] is a finite set of symmetric order-`k` tensors.
//! Each trial draws `n` members (with or without replacement), forms the
//! deviation of their sum (or mean) from its expectation and measures its
//! spectral norm. Exceedance frequencies over a grid of `t` are then compared
//! with the closed-form bound at each `t`.
//!
//! For order three the norm is only estimated. The power method gives a lower
//! bound. At `d = 3` a latitude/longitude grid on the sphere also gives a
//! certified upper bound, so the comparison can be made in both directions.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, SymMatrix};
use crate::rng::{self, stream};
use crate::sampling::{sample_indices, Scheme, TailBound};
use crate::tensor::{PowerOptions, SymTensor3};

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.5758293035489004;

pub const MIN_TRIALS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    /// `a ⊗ ... ⊗ a` with `a` uniform on the unit sphere.
    RankOne,
    /// Symmetrized standard Gaussian entries scaled by `d^{-k/2}`.
    Gaussian,
}

/// Whether the deviation is measured on the sum of the draws or on their
/// mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorPopulation {
    pub order: usize,
    pub dim: usize,
    pub recipe: Recipe,
    /// Dense row-major `d^k` arrays.
    members: Vec<Vec<f64>>,
    /// Generating vectors of rank-one members.
    factors: Option<Vec<Vec<f64>>>,
    pub mean: Vec<f64>,
    /// Range `b - a` of `Y(u_1, ..., u_k)` fed to the bounds.
    pub sigma: f64,
    pub sigma_probed: f64,
    pub sigma_analytic: f64,
}

fn entries(order: usize, dim: usize) -> usize {
    dim.pow(order as u32)
}

fn symmetrize(order: usize, dim: usize, raw: &[f64]) -> Vec<f64> {
    match order {
        1 => raw.to_vec(),
        2 => SymMatrix::from_row_major(dim, raw).expect("sized").as_slice().to_vec(),
        _ => SymTensor3::from_dense(dim, raw).expect("sized").as_slice().to_vec(),
    }
}

fn rank_one_dense(order: usize, a: &[f64]) -> Vec<f64> {
    let mut out = vec![1.0];
    for _ in 0..order {
        out = out.iter().flat_map(|&x| a.iter().map(move |&y| x * y)).collect();
    }
    out
}

/// `Y(u_1, ..., u_k)` for a dense array.
fn multilinear(order: usize, dim: usize, y: &[f64], us: &[&[f64]]) -> f64 {
    let mut cur = y.to_vec();
    for u in us.iter().take(order).rev() {
        let rows = cur.len() / dim;
        cur = (0..rows).map(|r| dot(&cur[r * dim..(r + 1) * dim], u)).collect();
    }
    cur[0]
}

impl TensorPopulation {
    /// Draws `size` members and computes the range bound from `probes`
    /// random unit-vector tuples and from the analytic estimate; the larger is
    /// used.
    pub fn generate(order: usize, dim: usize, size: usize, recipe: Recipe, probes: usize, seed: u64) -> Result<Self> {
        if !(1..=3).contains(&order) {
            return Err(Error::invalid("order", "must be 1, 2 or 3"));
        }
        if dim == 0 {
            return Err(Error::invalid("dim", "must be positive"));
        }
        if size == 0 {
            return Err(Error::invalid("population", "must be positive"));
        }
        let mut r = rng::rng(rng::derive(seed, stream::PROBLEM_DATA, 0));
        let (members, factors) = match recipe {
            Recipe::RankOne => {
                let a: Vec<Vec<f64>> = (0..size).map(|_| rng::unit_vec(&mut r, dim)).collect();
                (a.iter().map(|v| rank_one_dense(order, v)).collect(), Some(a))
            }
            Recipe::Gaussian => {
                let scale = (entries(order, dim) as f64).sqrt().recip();
                let m: Vec<Vec<f64>> = (0..size)
                    .map(|_| {
                        let mut raw = rng::gaussian_vec(&mut r, entries(order, dim));
                        raw.iter_mut().for_each(|x| *x *= scale);
                        symmetrize(order, dim, &raw)
                    })
                    .collect();
                (m, None)
            }
        };
        let mut mean = vec![0.0; entries(order, dim)];
        for m in &members {
            crate::linalg::axpy(1.0 / size as f64, m, &mut mean);
        }

        // |Y(u, v, w)| <= |a|^k for rank one, <= |Y|_F in general
        let sigma_analytic = 2.0
            * match &factors {
                Some(a) => a.iter().map(|v| norm(v).powi(order as i32)).fold(0.0, f64::max),
                None => members.iter().map(|m| norm(m)).fold(0.0, f64::max),
            };
        let mut pr = rng::rng(rng::derive(seed, stream::PROBE, 0));
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for _ in 0..probes {
            let us: Vec<Vec<f64>> = (0..order).map(|_| rng::unit_vec(&mut pr, dim)).collect();
            for (i, m) in members.iter().enumerate() {
                let v = match &factors {
                    Some(a) => us.iter().map(|u| dot(&a[i], u)).product(),
                    None => {
                        let refs: Vec<&[f64]> = us.iter().map(|u| u.as_slice()).collect();
                        multilinear(order, dim, m, &refs)
                    }
                };
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        let sigma_probed = if probes > 0 { hi - lo } else { 0.0 };
        Ok(TensorPopulation {
            order,
            dim,
            recipe,
            members,
            factors,
            mean,
            sigma: sigma_probed.max(sigma_analytic),
            sigma_probed,
            sigma_analytic,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member(&self, i: usize) -> &[f64] {
        &self.members[i]
    }

    /// The closed-form bound matching `scheme`.
    pub fn tail_bound(&self, n: usize, scheme: Scheme) -> Result<TailBound> {
        match scheme {
            Scheme::WithoutReplacement => TailBound::tensor_without_replacement(self.order, self.dim, self.sigma, n, self.len()),
            Scheme::WithReplacement => TailBound::tensor_with_replacement(self.order, self.dim, self.sigma, n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum NormMethod {
    /// Multi-start power iteration; a lower bound for order three.
    Power { restarts: usize },
    /// Power iteration plus a `resolution x 2 resolution` sphere grid; only
    /// for order three in dimension three.
    Grid { resolution: usize },
}

impl Default for NormMethod {
    fn default() -> Self {
        NormMethod::Power { restarts: 16 }
    }
}

/// Certified bracket on a spectral norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBracket {
    pub lower: f64,
    /// `None` when no certificate is available.
    pub upper: Option<f64>,
}

/// Spectral norm of a symmetric dense array of the given order.
pub fn spectral_norm(order: usize, dim: usize, x: &[f64], method: NormMethod, seed: u64) -> Result<NormBracket> {
    match order {
        1 => {
            let v = norm(x);
            Ok(NormBracket { lower: v, upper: Some(v) })
        }
        2 => {
            let v = SymMatrix::from_row_major(dim, x)?.spectral_norm()?;
            Ok(NormBracket { lower: v, upper: Some(v) })
        }
        3 => {
            let t = SymTensor3::from_dense(dim, x)?;
            match method {
                NormMethod::Power { restarts } => {
                    let m = t.spectral_norm_lower(&PowerOptions::with_restarts(restarts), seed)?;
                    Ok(NormBracket { lower: m.value, upper: None })
                }
                NormMethod::Grid { resolution } => {
                    let m = t.spectral_norm_lower(&PowerOptions::default(), seed)?;
                    let (grid, upper) = sphere_grid_norm(&t, resolution)?;
                    Ok(NormBracket {
                        lower: m.value.max(grid),
                        upper: Some(upper.max(m.value)),
                    })
                }
            }
        }
        _ => Err(Error::invalid("order", "must be 1, 2 or 3")),
    }
}

/// `(max over grid, certified upper bound)` for `sup |T[y]^3|` with `d = 3`.
///
/// Every unit vector lies within geodesic distance `h = π / m` of a grid
/// node, and `|T[y]^3 - T[y']^3| <= 3 |T| |y - y'|`, so
/// `|T| <= max_grid / (1 - 3h)`.
pub fn sphere_grid_norm(t: &SymTensor3, resolution: usize) -> Result<(f64, f64)> {
    if t.dim() != 3 {
        return Err(Error::invalid("dim", "the sphere grid needs dimension 3"));
    }
    let m = resolution;
    let h = core::f64::consts::PI / m as f64;
    if !(3.0 * h < 1.0) {
        return Err(Error::invalid("resolution", "must exceed 3π"));
    }
    let mut best: f64 = 0.0;
    for i in 0..m {
        let th = (i as f64 + 0.5) * core::f64::consts::PI / m as f64;
        let (st, ct) = th.sin_cos();
        for j in 0..2 * m {
            let ph = j as f64 * core::f64::consts::PI / m as f64;
            let (sp, cp) = ph.sin_cos();
            let y = [st * cp, st * sp, ct];
            best = best.max(t.trilinear(&y, &y, &y).abs());
        }
    }
    Ok((best, best / (1.0 - 3.0 * h)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub n: usize,
    pub scheme: Scheme,
    pub normalization: Normalization,
    pub norm: NormMethod,
}

/// Norm of the deviation in trial `index` of a simulation seeded with `seed`.
pub fn trial_deviation(pop: &TensorPopulation, cfg: &TrialConfig, seed: u64, index: u64) -> Result<NormBracket> {
    let s = rng::derive(seed, stream::TRIAL, index);
    let idx = sample_indices(pop.len(), cfg.n, cfg.scheme, s)?;
    let mut x = vec![0.0; pop.mean.len()];
    let w = match cfg.normalization {
        Normalization::Sum => 1.0,
        Normalization::Mean => 1.0 / cfg.n as f64,
    };
    for &i in &idx {
        crate::linalg::axpy(w, &pop.members[i], &mut x);
    }
    let centre = match cfg.normalization {
        Normalization::Sum => cfg.n as f64,
        Normalization::Mean => 1.0,
    };
    crate::linalg::axpy(-centre, &pop.mean, &mut x);
    spectral_norm(pop.order, pop.dim, &x, cfg.norm, rng::derive(s, stream::POWER_START, 0))
}

/// Wilson score interval for `successes` out of `trials` at quantile `z`.
pub fn wilson(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// `count` log-spaced points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::invalid("grid", "needs 0 < lo <= hi < inf"));
    }
    if count == 0 {
        return Err(Error::invalid("grid", "needs at least one point"));
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect())
}

/// Smallest `t` at which `bound` drops below 1. `None` when the bound is
/// vacuous on all of `[0, t_max]`.
pub fn bound_crossover(bound: &TailBound, t_max: f64) -> Option<f64> {
    bound.crossover(t_max)
}

/// The default grid `[c/4, 4c]` around the crossover `c`. Falls back to
/// `[scale/4, 4 scale]` with the population range `scale` when `c` is zero
/// or missing.
pub fn default_grid(bound: &TailBound, scale: f64, count: usize) -> Result<Vec<f64>> {
    let c = bound_crossover(bound, 1e12).filter(|&c| c > 0.0).unwrap_or(scale);
    log_grid(c / 4.0, 4.0 * c, count)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub t: f64,
    pub exceed: usize,
    pub empirical_freq: f64,
    pub wilson_lower: f64,
    pub wilson_upper: f64,
    /// Exceedances measured with the certified upper norm, when available.
    pub exceed_upper: Option<usize>,
    pub bound: f64,
    pub informative: bool,
}

impl TailRow {
    /// Whether the lower Wilson limit lies at or below the bound. Always
    /// true where the bound is vacuous.
    pub fn sound(&self) -> bool {
        !self.informative || self.wilson_lower <= self.bound
    }

    /// The same test on the upper-norm frequencies.
    pub fn sound_upper(&self, trials: usize) -> Option<bool> {
        self.exceed_upper
            .map(|c| !self.informative || wilson(c, trials, Z99).0 <= self.bound)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub trials: usize,
    pub seed: u64,
    pub bound: TailBound,
    pub rows: Vec<TailRow>,
    pub mean_deviation: f64,
    /// Standard error of `mean_deviation`.
    pub deviation_se: f64,
}

impl TailEstimate {
    /// Tabulates exceedance counts of precomputed deviations.
    pub fn tabulate(deviations: &[NormBracket], grid: &[f64], bound: TailBound, seed: u64) -> TailEstimate {
        let trials = deviations.len();
        let two_sided = deviations.iter().all(|d| d.upper.is_some()) && trials > 0;
        let rows = grid
            .iter()
            .map(|&t| {
                let exceed = deviations.iter().filter(|d| d.lower >= t).count();
                let (wl, wu) = wilson(exceed, trials, Z99);
                TailRow {
                    t,
                    exceed,
                    empirical_freq: exceed as f64 / trials.max(1) as f64,
                    wilson_lower: wl,
                    wilson_upper: wu,
                    exceed_upper: two_sided.then(|| deviations.iter().filter(|d| d.upper.unwrap() >= t).count()),
                    bound: bound.value(t),
                    informative: bound.is_informative(t),
                }
            })
            .collect();
        let (mean, se) = mean_se(deviations.iter().map(|d| d.lower));
        TailEstimate {
            trials,
            seed,
            bound,
            rows,
            mean_deviation: mean,
            deviation_se: se,
        }
    }

    /// Whether every informative row is sound, on both norm estimates when
    /// an upper one exists.
    pub fn sound(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.sound() && r.sound_upper(self.trials).unwrap_or(true))
    }

    pub fn informative_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.informative).count()
    }
}

fn mean_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Runs `trials` trials sequentially and tabulates them on `grid`.
pub fn simulate_tail(
    pop: &TensorPopulation,
    cfg: &TrialConfig,
    trials: usize,
    grid: &[f64],
    seed: u64,
) -> Result<TailEstimate> {
    if trials < MIN_TRIALS {
        return Err(Error::invalid("trials", "must be at least 1000"));
    }
    let bound = pop.tail_bound(cfg.n, cfg.scheme)?;
    let dev = (0..trials as u64)
        .map(|i| trial_deviation(pop, cfg, seed, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(TailEstimate::tabulate(&dev, grid, bound, seed))
}

/// Mean-deviation comparison of sampling without and with replacement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dominance {
    pub mean_without: f64,
    pub mean_with: f64,
    /// 99% one-sided margin on the difference.
    pub margin: f64,
    pub holds: bool,
}

pub fn dominance(without: &TailEstimate, with: &TailEstimate) -> Dominance {
    let margin = Z99 * (without.deviation_se.powi(2) + with.deviation_se.powi(2)).sqrt();
    Dominance {
        mean_without: without.mean_deviation,
        mean_with: with.mean_deviation,
        margin,
        holds: without.mean_deviation <= with.mean_deviation + margin,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_range_is_two() {
        let p = TensorPopulation::generate(3, 4, 50, Recipe::RankOne, 200, 1).unwrap();
        assert!((p.sigma_analytic - 2.0).abs() < 1e-12);
        assert!(p.sigma_probed <= p.sigma_analytic + 1e-12);
        assert_eq!(p.sigma, p.sigma_analytic);
    }

    #[test]
    fn dense_members_are_symmetric() {
        let p = TensorPopulation::generate(3, 3, 5, Recipe::Gaussian, 10, 2).unwrap();
        let m = p.member(0);
        let at = |i: usize, j: usize, k: usize| m[(i * 3 + j) * 3 + k];
        assert_eq!(at(0, 1, 2), at(2, 0, 1));
        assert_eq!(at(1, 1, 2), at(2, 1, 1));
    }

    #[test]
    fn multilinear_matches_rank_one() {
        let a = [0.6, 0.8];
        let y = rank_one_dense(3, &a);
        let (u, v, w) = ([1.0, 0.0], [0.0, 1.0], [0.6, 0.8]);
        let want = 0.6 * 0.8 * 1.0;
        assert!((multilinear(3, 2, &y, &[&u, &v, &w]) - want).abs() < 1e-15);
    }

    #[test]
    fn exhaustive_draw_has_no_deviation() {
        let p = TensorPopulation::generate(3, 4, 30, Recipe::RankOne, 0, 3).unwrap();
        let cfg = TrialConfig {
            n: 30,
            scheme: Scheme::WithoutReplacement,
            normalization: Normalization::Sum,
            norm: NormMethod::default(),
        };
        for i in 0..5 {
            assert!(trial_deviation(&p, &cfg, 9, i).unwrap().lower < 1e-12);
        }
    }

    #[test]
    fn wilson_examples() {
        let (lo, hi) = wilson(0, 1000, Z99);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.01);
        let (lo, hi) = wilson(500, 1000, Z99);
        assert!(lo < 0.5 && hi > 0.5);
        assert!(((lo + hi) / 2.0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(0.5, 8.0, 5).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-15 && (g[4] - 8.0).abs() < 1e-12);
        assert!((g[2] - 2.0).abs() < 1e-12);
        assert!(log_grid(0.0, 1.0, 3).is_err());
    }

    #[test]
    fn grid_norm_brackets_rank_one() {
        let a = [0.0, 0.6, 0.8];
        let t = SymTensor3::rank_one(1.0, &a);
        let (g, up) = sphere_grid_norm(&t, 40).unwrap();
        assert!(g <= 1.0 + 1e-12 && up >= 1.0);
        assert!(g > 0.9);
    }

    #[test]
    fn too_few_trials_rejected() {
        let p = TensorPopulation::generate(1, 2, 10, Recipe::RankOne, 0, 0).unwrap();
        let cfg = TrialConfig {
            n: 2,
            scheme: Scheme::WithReplacement,
            normalization: Normalization::Sum,
            norm: NormMethod::default(),
        };
        assert!(simulate_tail(&p, &cfg, 999, &[1.0], 0).is_err());
    }
}
