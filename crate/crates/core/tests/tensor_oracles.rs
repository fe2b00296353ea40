// oracles are written as plain index loops on purpose
#![allow(clippy::needless_range_loop)]

use proptest::prelude::*;
use rand::Rng;
use stm_core::linalg::{dot, SymMatrix};
use stm_core::rng;
use stm_core::{CubicForm, PowerOptions, SymTensor3};

fn random_tensor(d: usize, seed: u64) -> SymTensor3 {
    let mut r = rng::rng(seed);
    let raw: Vec<f64> = (0..d * d * d).map(|_| r.random_range(-1.0..1.0)).collect();
    SymTensor3::from_dense(d, &raw).unwrap()
}

fn random_vec(d: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::rng(seed);
    (0..d).map(|_| r.random_range(-1.0..1.0)).collect()
}

#[test]
fn contract1_matches_triple_loop() {
    let d = 4;
    let t = random_tensor(d, 1);
    let s = random_vec(d, 2);
    let m = t.contract1(&s).unwrap();
    for i in 0..d {
        for j in 0..d {
            let mut want = 0.0;
            for k in 0..d {
                want += t.get(i, j, k) * s[k];
            }
            assert!((m.get(i, j) - want).abs() < 1e-14);
            assert_eq!(m.get(i, j), m.get(j, i));
        }
    }
}

#[test]
fn rank_one_examples() {
    let t = SymTensor3::rank_one(1.0, &[1.0, 0.0]);
    let m = t.contract1(&[1.0, 0.0]).unwrap();
    assert_eq!(m.as_slice(), &[1.0, 0.0, 0.0, 0.0]);
    assert_eq!(t.contract2(&[2.0, 0.0]).unwrap(), vec![4.0, 0.0]);
    let t = SymTensor3::rank_one(1.0, &[1.0, 1.0]);
    assert_eq!(t.contract3(&[1.0, 1.0]).unwrap(), 8.0);
}

/// Largest `|T[y]^3|` over `count` Fibonacci-sphere points in three dimensions.
fn fibonacci_sphere_max(t: &SymTensor3, count: usize) -> f64 {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let rho = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            let y = [rho * phi.cos(), rho * phi.sin(), z];
            t.apply3(&y).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn spectral_norm_dominates_sphere_samples() {
    for seed in 0..20 {
        let t = random_tensor(3, 100 + seed);
        let est = t.spectral_norm_lower(&PowerOptions::default(), seed).unwrap();
        let grid = fibonacci_sphere_max(&t, 10_000);
        assert!(est.value >= grid - 1e-8, "seed {seed}: {} < {grid}", est.value);
        // and it is attained, so it cannot exceed the true maximum
        assert!((t.apply3(&est.vector).abs() - est.value).abs() < 1e-12);
        assert!((dot(&est.vector, &est.vector) - 1.0).abs() < 1e-12);
    }
}

#[test]
fn rank_one_norm_is_cube_of_length() {
    let t = SymTensor3::rank_one(1.0, &[2.0 / 3f64.sqrt(); 3]);
    let est = t.spectral_norm_lower(&PowerOptions::default(), 4).unwrap();
    assert!((est.value - 8.0).abs() < 1e-9);
}

#[test]
fn orthogonal_change_of_basis_keeps_the_norm() {
    // rotation by 0.7 rad in the (0, 1) plane
    let (c, s) = (0.7f64.cos(), 0.7f64.sin());
    let q = vec![vec![c, s, 0.0], vec![-s, c, 0.0], vec![0.0, 0.0, 1.0]];
    for seed in 0..5 {
        let t = random_tensor(3, 300 + seed);
        let rotated = t.congruence(&q);
        let a = t.spectral_norm_lower(&PowerOptions::with_restarts(32), 1).unwrap().value;
        let b = rotated.spectral_norm_lower(&PowerOptions::with_restarts(32), 1).unwrap().value;
        assert!((a - b).abs() < 1e-8 * a.max(1.0), "{a} vs {b}");
    }
}

fn arb_case() -> impl Strategy<Value = (usize, u64, u64, f64)> {
    (1usize..7, any::<u64>(), any::<u64>(), -3.0f64..3.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn contractions_compose((d, ts, ss, _a) in arb_case()) {
        let t = random_tensor(d, ts);
        let s = random_vec(d, ss);
        let m = t.contract1(&s).unwrap();
        let v = t.contract2(&s).unwrap();
        let ms = m.mul_vec(&s).unwrap();
        for i in 0..d {
            prop_assert!((v[i] - ms[i]).abs() < 1e-12);
        }
        let c3 = t.contract3(&s).unwrap();
        prop_assert!((c3 - dot(&v, &s)).abs() < 1e-12);
        prop_assert!((c3 - m.quad_form(&s)).abs() < 1e-12);
        prop_assert!((c3 - t.trilinear(&s, &s, &s)).abs() < 1e-12);
    }

    #[test]
    fn contractions_are_homogeneous((d, ts, ss, a) in arb_case()) {
        let t = random_tensor(d, ts);
        let s = random_vec(d, ss);
        let sa: Vec<f64> = s.iter().map(|x| a * x).collect();
        let lhs = t.contract3(&sa).unwrap();
        let rhs = a * a * a * t.contract3(&s).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-11 * rhs.abs().max(1.0));
        let v = t.contract2(&sa).unwrap();
        let w = t.contract2(&s).unwrap();
        for i in 0..d {
            prop_assert!((v[i] - a * a * w[i]).abs() < 1e-11 * w[i].abs().max(1.0));
        }
    }

    #[test]
    fn more_restarts_never_lower_the_estimate((d, ts, seed, _a) in arb_case(), extra in 1usize..8) {
        let t = random_tensor(d, ts);
        let few = t.spectral_norm_lower(&PowerOptions::with_restarts(2), seed).unwrap().value;
        let many = t.spectral_norm_lower(&PowerOptions::with_restarts(2 + extra), seed).unwrap().value;
        prop_assert!(many >= few);
    }

    #[test]
    fn jacobi_eigenpairs_hold((d, seed, _s, _a) in arb_case()) {
        let raw = random_vec(d * d, seed);
        let m = SymMatrix::from_row_major(d, &raw).unwrap();
        let e = m.eigen().unwrap();
        for (l, v) in e.values.iter().zip(&e.vectors) {
            let mv = m.mul_vec(v).unwrap();
            for i in 0..d {
                prop_assert!((mv[i] - l * v[i]).abs() < 1e-10);
            }
        }
        prop_assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }
}
