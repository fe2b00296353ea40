// oracles are written as plain index loops on purpose
#![allow(clippy::needless_range_loop)]

use rand::Rng;
use stm_core::criticality::{chi2, chi3, evaluate};
use stm_core::linalg::{norm, SymMatrix};
use stm_core::rng;
use stm_core::{CubicForm, PowerOptions, SymTensor3};

fn random_sym(d: usize, seed: u64) -> SymMatrix {
    let mut r = rng::rng(seed);
    let raw: Vec<f64> = (0..d * d).map(|_| r.random_range(-2.0..2.0)).collect();
    SymMatrix::from_row_major(d, &raw).unwrap()
}

fn random_tensor(d: usize, seed: u64) -> SymTensor3 {
    let mut r = rng::rng(seed);
    let raw: Vec<f64> = (0..d * d * d).map(|_| r.random_range(-1.0..1.0)).collect();
    SymTensor3::from_dense(d, &raw).unwrap()
}

/// Determinant by Gaussian elimination with partial pivoting.
fn det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut out = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        if a[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            a.swap(p, c);
            out = -out;
        }
        out *= a[c][c];
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    out
}

/// Sylvester: `A - λI` is positive definite iff every leading minor is positive.
fn shifted_is_pd(m: &SymMatrix, lam: f64) -> bool {
    let d = m.dim();
    (1..=d).all(|k| {
        let a = (0..k)
            .map(|i| (0..k).map(|j| m.get(i, j) - if i == j { lam } else { 0.0 }).collect())
            .collect();
        det(a) > 0.0
    })
}

fn lambda_min_by_bisection(m: &SymMatrix) -> f64 {
    let r = m.frobenius_norm() + 1.0;
    let (mut lo, mut hi) = (-r, r);
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if shifted_is_pd(m, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn chi2_matches_determinant_bisection() {
    for seed in 0..25 {
        let m = random_sym(6, seed);
        let want = (-lambda_min_by_bisection(&m)).max(0.0);
        let got = chi2(&m).unwrap();
        assert!((got - want).abs() < 1e-8, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn chi2_examples() {
    assert_eq!(chi2(&SymMatrix::identity(3)).unwrap(), 0.0);
    assert!((chi2(&SymMatrix::diagonal(&[1.0, -2.0])).unwrap() - 2.0).abs() < 1e-15);
}

#[test]
fn chi3_on_a_one_dimensional_kernel() {
    let h = SymMatrix::diagonal(&[0.0, 2.0]);
    let t = SymTensor3::rank_one(1.0, &[1.0, 0.0]);
    let c = chi3(&h, &t, 0.1, &PowerOptions::default(), 3).unwrap();
    assert!((c.value - 1.0).abs() < 1e-12);
    assert!((c.certificate[0].abs() - 1.0).abs() < 1e-12);
}

fn sphere_points(d: usize, count: usize) -> Vec<Vec<f64>> {
    match d {
        2 => (0..count)
            .map(|i| {
                let a = std::f64::consts::PI * i as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                    let rho = (1.0 - z * z).sqrt();
                    let phi = golden * i as f64;
                    vec![rho * phi.cos(), rho * phi.sin(), z]
                })
                .collect()
        }
        _ => unreachable!(),
    }
}

#[test]
fn chi3_reaches_the_feasible_grid_maximum() {
    let mut checked = 0;
    for d in [2usize, 3] {
        let grid = sphere_points(d, if d == 2 { 20_000 } else { 200_000 });
        for seed in 0..40u64 {
            let h = random_sym(d, 500 + seed);
            let t = random_tensor(d, 600 + seed);
            let zeta = 0.5;
            let c = chi3(&h, &t, zeta, &PowerOptions::default(), seed).unwrap();
            let best = grid
                .iter()
                .filter(|y| h.quad_form(y).abs() <= zeta)
                .map(|y| t.apply3(y).abs())
                .fold(0.0, f64::max);
            if c.certificate.is_empty() {
                assert_eq!(best, 0.0, "d {d} seed {seed}: grid found a feasible point");
                continue;
            }
            // certified: feasible and attained
            assert!(h.quad_form(&c.certificate).abs() <= zeta, "d {d} seed {seed}: q {}", h.quad_form(&c.certificate));
            assert!((t.apply3(&c.certificate).abs() - c.value).abs() < 1e-12);
            assert!((norm(&c.certificate) - 1.0).abs() < 1e-12);
            // and close to the best feasible grid point
            assert!(c.value >= best * (1.0 - 2e-3) - 1e-9, "d {d} seed {seed}: {} < {best}", c.value);
            checked += 1;
        }
    }
    assert!(checked > 10);
}

#[test]
fn measures_are_rotation_invariant() {
    let d = 4;
    // orthonormal columns from the eigenvectors of a random matrix
    let q = random_sym(d, 77).eigen().unwrap().vectors;
    for seed in 0..5u64 {
        let h = random_sym(d, 800 + seed);
        let t = random_tensor(d, 900 + seed);
        let g: Vec<f64> = (0..d).map(|i| (i as f64 + seed as f64).sin()).collect();
        let hr = h.congruence(&q);
        let tr = t.congruence(&q);
        let gr: Vec<f64> = q.iter().map(|c| stm_core::linalg::dot(c, &g)).collect();
        let opts = PowerOptions::with_restarts(32);
        let a = evaluate(&g, &h, &t, 0.8, &opts, 1).unwrap();
        let b = evaluate(&gr, &hr, &tr, 0.8, &opts, 1).unwrap();
        assert!((a.chi1 - b.chi1).abs() < 1e-12);
        assert!((a.chi2 - b.chi2).abs() < 1e-10);
        assert!((a.chi3 - b.chi3).abs() < 1e-3 * a.chi3.max(1.0), "{} vs {}", a.chi3, b.chi3);
    }
}
