use rand::Rng;
use stm_core::problems::{make_cosine_sum, make_nonconvex_logistic, make_quadratic_sum};
use stm_core::{rng, FiniteSum, Order};

fn point(d: usize, seed: u64, scale: f64) -> Vec<f64> {
    let mut r = rng::rng(seed);
    (0..d).map(|_| scale * r.random_range(-1.0..1.0)).collect()
}

/// Central differences one order down, for each component derivative.
fn ladder(p: &dyn FiniteSum, x: &[f64]) -> [f64; 3] {
    let h = 1e-5;
    let d = x.len();
    let b = p.full(x, Order::Third).unwrap();
    let mut err = [0.0f64; 3];
    for i in 0..d {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        let bp = p.full(&xp, Order::Third).unwrap();
        let bm = p.full(&xm, Order::Third).unwrap();
        err[0] = err[0].max(((bp.value - bm.value) / (2.0 * h) - b.grad[i]).abs());
        for j in 0..d {
            err[1] = err[1].max(((bp.grad[j] - bm.grad[j]) / (2.0 * h) - b.hess().get(i, j)).abs());
            for k in 0..d {
                let fd = (bp.hess().get(j, k) - bm.hess().get(j, k)) / (2.0 * h);
                err[2] = err[2].max((fd - b.third().get(i, j, k)).abs());
            }
        }
    }
    err
}

#[test]
fn derivative_ladders() {
    let problems: Vec<Box<dyn FiniteSum>> = vec![
        Box::new(make_cosine_sum(40, 5, 1, 0.1).unwrap()),
        Box::new(make_quadratic_sum(30, 4, 2).unwrap()),
        Box::new(make_nonconvex_logistic(40, 6, 3, 0.5).unwrap()),
    ];
    for p in &problems {
        for seed in 0..5 {
            let x = point(p.dim(), 10 + seed, 1.5);
            let e = ladder(p.as_ref(), &x);
            assert!(e.iter().all(|&v| v < 1e-6), "{}: {e:?}", p.name());
        }
    }
}

#[test]
fn quadratic_minimizer_is_global() {
    let p = make_quadratic_sum(80, 6, 4).unwrap();
    let star = p.minimizer();
    let f_star = p.value(&star).unwrap();
    assert!((f_star - p.f_low()).abs() < 1e-12);
    for seed in 0..100 {
        let x = point(6, 300 + seed, 3.0);
        assert!(f_star <= p.value(&x).unwrap());
    }
    let g = p.full(&star, Order::Gradient).unwrap().grad;
    assert!(g.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn lower_bounds_hold_at_random_points() {
    let c = make_cosine_sum(50, 4, 5, 0.1).unwrap();
    let l = make_nonconvex_logistic(50, 4, 5, 0.2).unwrap();
    for seed in 0..50 {
        let x = point(4, 500 + seed, 5.0);
        assert!(c.value(&x).unwrap() >= c.f_low());
        assert!(l.value(&x).unwrap() >= l.f_low());
    }
}

#[test]
fn component_gradients_respect_lipschitz_bound() {
    // |∇f_i| ≤ L_f on a bounded region for the cosine sum without ridge
    let p = make_cosine_sum(30, 3, 6, 0.0).unwrap();
    let lf = p.lipschitz().f;
    for seed in 0..20 {
        let x = point(3, 700 + seed, 2.0);
        for i in 0..p.len() {
            let c = p.component(i, &x, Order::Gradient).unwrap();
            assert!(stm_core::linalg::norm(&c.grad) <= lf + 1e-12);
        }
    }
}
