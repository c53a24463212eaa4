use dpc_core::qp::{kkt_residuals, solve, Method, QpProblem, Settings, Status};
use dpc_core::sparse::SparseRows;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const METHODS: [Method; 2] = [Method::InteriorPoint, Method::Admm];

fn settings(method: Method) -> Settings {
    Settings { method, ..Settings::default() }
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-1.0..1.0)
}

fn random_psd(rng: &mut ChaCha8Rng, d: usize, rank: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, rank, |_, _| uniform(rng));
    let p = &g * g.transpose();
    (&p + p.transpose()) * 0.5
}

/// Mixed problem with a known feasible point `z0`.
fn mixed_qp(rng: &mut ChaCha8Rng) -> QpProblem<f64> {
    let d = rng.random_range(1..=12);
    let rank = rng.random_range(0..=d);
    let p = random_psd(rng, d, rank);
    let c = DVector::from_fn(d, |_, _| uniform(rng));
    let z0 = DVector::from_fn(d, |_, _| 0.5 * uniform(rng));
    let n_eq = rng.random_range(0..d.max(1));
    let n_in = rng.random_range(0..=2 * d);
    let a_eq = DMatrix::from_fn(n_eq, d, |_, _| uniform(rng));
    let b_eq = &a_eq * &z0;
    let a_in = DMatrix::from_fn(n_in, d, |_, _| uniform(rng));
    let b_in = &a_in * &z0 + DVector::from_fn(n_in, |_, _| rng.random_range(0.0..0.5));
    let lo = DVector::from_fn(d, |j, _| if rng.random_bool(0.8) { z0[j] - rng.random_range(0.0..1.0) } else { f64::NEG_INFINITY });
    let hi = DVector::from_fn(d, |j, _| if rng.random_bool(0.8) { z0[j] + rng.random_range(0.0..1.0) } else { f64::INFINITY });
    // Keep unbounded directions out when P is singular by boxing every variable.
    let (lo, hi) = if rank < d {
        (lo.map(|v| if v.is_finite() { v } else { -2.0 }), hi.map(|v| if v.is_finite() { v } else { 2.0 }))
    } else {
        (lo, hi)
    };
    QpProblem::unconstrained(p, c)
        .with_equalities(SparseRows::from_dense(&a_eq), b_eq)
        .with_inequalities(SparseRows::from_dense(&a_in), b_in)
        .with_bounds(lo, hi)
}

#[test]
fn random_mixed_problems_are_certified() {
    let mut failures = Vec::new();
    for method in METHODS {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..300 {
            let qp = mixed_qp(&mut rng);
            let sol = solve(&qp, &settings(method), None).unwrap();
            let r = kkt_residuals(&qp, &sol);
            if sol.status != Status::Optimal || r.primal > 2e-6 || r.dual > 2e-6 || r.gap > 2e-6 {
                failures.push((method, case, qp.dim(), sol.status, r, sol.iterations));
            }
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn equality_only_problems_match_direct_kkt_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let d = rng.random_range(2..=10);
        let k = rng.random_range(1..d);
        let p = random_psd(&mut rng, d, d) + DMatrix::identity(d, d) * 0.1;
        let c = DVector::from_fn(d, |_, _| uniform(&mut rng));
        let a = DMatrix::from_fn(k, d, |_, _| uniform(&mut rng));
        let b = DVector::from_fn(k, |_, _| uniform(&mut rng));
        let qp = QpProblem::unconstrained(p.clone(), c.clone()).with_equalities(SparseRows::from_dense(&a), b.clone());
        let mut kkt = DMatrix::zeros(d + k, d + k);
        kkt.view_mut((0, 0), (d, d)).copy_from(&p);
        kkt.view_mut((0, d), (d, k)).copy_from(&a.transpose());
        kkt.view_mut((d, 0), (k, d)).copy_from(&a);
        let mut rhs = DVector::zeros(d + k);
        rhs.rows_mut(0, d).copy_from(&(-&c));
        rhs.rows_mut(d, k).copy_from(&b);
        let direct = kkt.lu().solve(&rhs).unwrap();
        let z = direct.rows(0, d).clone_owned();
        for method in METHODS {
            let sol = solve(&qp, &settings(method), None).unwrap();
            assert_eq!(sol.status, Status::Optimal);
            let rel = (&sol.z - &z).amax() / z.amax().max(1.0);
            assert!(rel <= 1e-6, "{method:?}: relative error {rel}");
        }
    }
}

#[test]
fn infeasible_equalities_are_reported() {
    let a = SparseRows::from_dense(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]));
    let qp = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2)).with_equalities(a, DVector::from_vec(vec![0.0, 1.0]));
    for method in METHODS {
        let sol = solve(&qp, &settings(method), None).unwrap();
        assert_eq!(sol.status, Status::PrimalInfeasible, "{method:?}");
    }
}

#[test]
fn warm_start_reaches_the_same_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let qp = mixed_qp(&mut rng);
    for method in METHODS {
        let cold = solve(&qp, &settings(method), None).unwrap();
        let warm = solve(&qp, &settings(method), Some(&cold.z)).unwrap();
        assert_eq!(warm.status, Status::Optimal, "{method:?}");
        assert!((warm.objective - cold.objective).abs() <= 1e-6 * cold.objective.abs().max(1.0));
    }
}
