use rand::Rng;
use stm_core::rng;
use stm_core::subsolver::{solve, SubsolveStatus, SubsolverOptions};
use stm_core::{CubicForm, QuarticModel, SymMatrix, SymTensor3};

fn random_model(d: usize, seed: u64) -> QuarticModel {
    let mut r = rng::rng(seed);
    let g: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
    let raw: Vec<f64> = (0..d * d).map(|_| r.random_range(-1.0..1.0)).collect();
    let b = SymMatrix::from_row_major(d, &raw).unwrap();
    let raw: Vec<f64> = (0..d * d * d).map(|_| r.random_range(-1.0..1.0)).collect();
    let t = SymTensor3::from_dense(d, &raw).unwrap();
    QuarticModel::new(r.random_range(-2.0..2.0), g, b, t, r.random_range(0.5..3.0)).unwrap()
}

fn random_vec(d: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::rng(seed);
    (0..d).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Plain index loops over the stored entries.
fn value_by_loops(m: &QuarticModel, s: &[f64]) -> f64 {
    let d = s.len();
    let mut lin = 0.0;
    let mut quad = 0.0;
    let mut cub = 0.0;
    let mut r2 = 0.0;
    for i in 0..d {
        lin += m.g[i] * s[i];
        r2 += s[i] * s[i];
        for j in 0..d {
            quad += m.b.get(i, j) * s[i] * s[j];
            for k in 0..d {
                cub += m.t.get(i, j, k) * s[i] * s[j] * s[k];
            }
        }
    }
    m.f0 + lin + quad / 2.0 + cub / 6.0 + m.sigma * r2 * r2 / 4.0
}

#[test]
fn value_matches_term_by_term() {
    for seed in 0..20 {
        let m = random_model(5, seed);
        let s = random_vec(5, 100 + seed);
        let v = m.eval(&s).unwrap();
        assert!((v - value_by_loops(&m, &s)).abs() < 1e-12 * (1.0 + v.abs()));
        let phi = m.eval_phi(&s).unwrap();
        assert!((v - phi - m.quartic(&s)).abs() < 1e-12);
    }
    let m = random_model(4, 3);
    assert_eq!(m.eval(&[0.0; 4]).unwrap(), m.f0);
    assert_eq!(m.grad(&[0.0; 4]).unwrap(), m.g);
    assert_eq!(m.hess(&[0.0; 4]).unwrap(), m.b);
}

#[test]
fn derivatives_match_central_differences() {
    let h = 1e-5;
    for seed in 0..10 {
        let d = 6;
        let m = random_model(d, 40 + seed);
        let s = random_vec(d, 140 + seed);
        let g = m.grad(&s).unwrap();
        let hs = m.hess(&s).unwrap();
        let third = m.third(&s).unwrap().to_dense();
        for i in 0..d {
            let mut p = s.clone();
            let mut q = s.clone();
            p[i] += h;
            q[i] -= h;
            let fd = (m.eval(&p).unwrap() - m.eval(&q).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "grad {i}");
            let (gp, gq) = (m.grad(&p).unwrap(), m.grad(&q).unwrap());
            let (hp, hq) = (m.hess(&p).unwrap(), m.hess(&q).unwrap());
            for j in 0..d {
                assert!(((gp[j] - gq[j]) / (2.0 * h) - hs.get(i, j)).abs() < 1e-5, "hess {i}{j}");
                for k in 0..d {
                    let fd3 = (hp.get(j, k) - hq.get(j, k)) / (2.0 * h);
                    assert!((fd3 - third.get(i, j, k)).abs() < 1e-5, "third {i}{j}{k}");
                }
            }
        }
        // the contraction view agrees with the dense tensor
        let y = random_vec(d, 240 + seed);
        let view = m.third(&s).unwrap();
        assert!((view.apply3(&y) - third.contract3(&y).unwrap()).abs() < 1e-10);
    }
}

fn scalar() -> QuarticModel {
    QuarticModel::new(0.0, vec![1.0], SymMatrix::zeros(1), SymTensor3::zeros(1), 4.0).unwrap()
}

#[test]
fn scalar_model_root() {
    let m = scalar();
    let root = -(4f64.powf(-1.0 / 3.0));
    assert!((root + 0.629_960_524_947_436_6).abs() < 1e-15);
    assert!(m.grad(&[root]).unwrap()[0].abs() < 1e-14);
    for s in [-1.0, -0.3, 0.4, 2.0] {
        assert!((m.eval(&[s]).unwrap() - (s + s.powi(4))).abs() < 1e-14);
    }
}

#[test]
fn subsolver_finds_scalar_root() {
    let r = solve(&scalar(), &SubsolverOptions::new(0.5, None), 1).unwrap();
    assert_eq!(r.status, SubsolveStatus::Converged);
    assert!((r.s[0] + 4f64.powf(-1.0 / 3.0)).abs() < 1e-3, "{:?}", r.s);
    assert!(r.model_value < 0.0);
}

#[test]
fn quartic_hessian_on_axis() {
    let m = QuarticModel::new(0.0, vec![0.0; 2], SymMatrix::zeros(2), SymTensor3::zeros(2), 1.0).unwrap();
    let h = m.hess(&[1.0, 0.0]).unwrap();
    assert_eq!(h, SymMatrix::diagonal(&[3.0, 1.0]));
}
