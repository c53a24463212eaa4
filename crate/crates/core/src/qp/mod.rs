//! Convex quadratic programs
//!
//! ```text
//! minimize   ½ zᵀPz + cᵀz
//! subject to Aeq z = beq,  Ain z ≤ bin,  lo ≤ z ≤ hi
//! ```
//!
//! solved either by a primal-dual interior-point method (the default) or by an
//! operator-splitting (ADMM) iteration on the scaled problem followed by an
//! active-set polish. Either way a solution is reported optimal only after
//! [`kkt_residuals`] certifies it against the unscaled data.

mod admm;
mod ipm;
mod kkt;

pub use ipm::IPM_ITER_CAP;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Error, Result};
use crate::linalg;
use crate::scalar::Scalar;
use crate::sparse::SparseRows;

/// Problem data. Box bounds may be infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct QpProblem<T: Scalar> {
    pub p: DMatrix<T>,
    pub c: DVector<T>,
    pub a_eq: SparseRows<T>,
    pub b_eq: DVector<T>,
    pub a_in: SparseRows<T>,
    pub b_in: DVector<T>,
    pub lo: DVector<T>,
    pub hi: DVector<T>,
}

impl<T: Scalar> QpProblem<T> {
    /// Problem with no constraints and infinite bounds.
    pub fn unconstrained(p: DMatrix<T>, c: DVector<T>) -> Self {
        let d = c.len();
        Self {
            p,
            c,
            a_eq: SparseRows::empty(d),
            b_eq: DVector::zeros(0),
            a_in: SparseRows::empty(d),
            b_in: DVector::zeros(0),
            lo: DVector::from_element(d, T::neg_infinity()),
            hi: DVector::from_element(d, T::infinity()),
        }
    }

    pub fn with_equalities(mut self, a: SparseRows<T>, b: DVector<T>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_inequalities(mut self, a: SparseRows<T>, b: DVector<T>) -> Self {
        self.a_in = a;
        self.b_in = b;
        self
    }

    pub fn with_bounds(mut self, lo: DVector<T>, hi: DVector<T>) -> Self {
        self.lo = lo;
        self.hi = hi;
        self
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// `½ zᵀPz + cᵀz`.
    pub fn objective(&self, z: &DVector<T>) -> T {
        (z.dot(&(&self.p * z))) * T::of(0.5) + self.c.dot(z)
    }

    /// Checks shapes, symmetry and semidefiniteness of `P`, and bound ordering.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.p.nrows() != d || self.p.ncols() != d {
            return Err(dim_err("QP cost matrix", format!("{d}x{d}"), format!("{}x{}", self.p.nrows(), self.p.ncols())));
        }
        if self.a_eq.ncols() != d || self.a_in.ncols() != d {
            return Err(dim_err("QP constraint columns", d, format!("{}/{}", self.a_eq.ncols(), self.a_in.ncols())));
        }
        if self.a_eq.nrows() != self.b_eq.len() {
            return Err(dim_err("QP equality rhs", self.a_eq.nrows(), self.b_eq.len()));
        }
        if self.a_in.nrows() != self.b_in.len() {
            return Err(dim_err("QP inequality rhs", self.a_in.nrows(), self.b_in.len()));
        }
        if self.lo.len() != d || self.hi.len() != d {
            return Err(dim_err("QP bounds", d, format!("{}/{}", self.lo.len(), self.hi.len())));
        }
        if self.lo.iter().zip(self.hi.iter()).any(|(l, h)| l > h || l.is_nan_value() || h.is_nan_value()) {
            return Err(invalid("lo/hi", "lower bound exceeds upper bound"));
        }
        let finite = self.p.iter().chain(self.c.iter()).chain(self.b_eq.iter()).all(|v| v.is_finite_value());
        if !finite {
            return Err(invalid("P/c/beq", "non-finite problem data"));
        }
        let scale = self.p.iter().fold(T::one(), |a, v| a.max(v.abs()));
        if !linalg::is_symmetric(&self.p, T::of(1e-10) * scale) {
            return Err(invalid("P", "cost matrix is not symmetric"));
        }
        if d > 0 && !shifted_cholesky_exists(&self.p, T::of(1e-8) * scale) {
            return Err(invalid("P", "cost matrix is not positive semidefinite"));
        }
        Ok(())
    }

    /// Writes the problem as JSON for cross-checking with external solvers.
    /// Infinite bounds serialize as `null`.
    pub fn dump_json(&self, path: &Path) -> Result<()>
    where
        T: Serialize,
    {
        let dense = DenseDump {
            p: &self.p,
            c: &self.c,
            a_eq: self.a_eq.to_dense(),
            b_eq: &self.b_eq,
            a_in: self.a_in.to_dense(),
            b_in: &self.b_in,
            lo: &self.lo,
            hi: &self.hi,
        };
        let text = serde_json::to_string(&dense).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// `P + shift·I ≻ 0` numerically, which fails whenever `P` has an eigenvalue below `-shift`.
fn shifted_cholesky_exists<T: Scalar>(p: &DMatrix<T>, shift: T) -> bool {
    let mut m = p.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += shift;
    }
    linalg::Cholesky::new(m).is_ok()
}

#[derive(Serialize)]
#[serde(bound = "T: Scalar + Serialize")]
struct DenseDump<'a, T: Scalar> {
    p: &'a DMatrix<T>,
    c: &'a DVector<T>,
    a_eq: DMatrix<T>,
    b_eq: &'a DVector<T>,
    a_in: DMatrix<T>,
    b_in: &'a DVector<T>,
    lo: &'a DVector<T>,
    hi: &'a DVector<T>,
}

/// Solution algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Mehrotra predictor-corrector; iterations are capped at [`IPM_ITER_CAP`].
    #[default]
    InteriorPoint,
    /// ADMM with adaptive penalty and polish.
    Admm,
}

/// Solver parameters. Penalty, relaxation, scaling and polish settings only affect ADMM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub method: Method,
    pub eps_prim: f64,
    pub eps_dual: f64,
    pub max_iters: usize,
    /// Initial ADMM penalty.
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation factor in (0, 2).
    pub alpha: f64,
    pub adaptive_rho: bool,
    pub scaling_iters: usize,
    pub polish: bool,
    pub eps_infeasible: f64,
    /// Diagonal regularization added to `P` before factoring.
    pub tikhonov: f64,
    pub check_interval: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            method: Method::InteriorPoint,
            eps_prim: 1e-6,
            eps_dual: 1e-6,
            max_iters: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            scaling_iters: 10,
            polish: true,
            eps_infeasible: 1e-5,
            tikhonov: 1e-8,
            check_interval: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    MaxIters,
    PrimalInfeasible,
    DualInfeasible,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Optimal => "optimal",
            Status::MaxIters => "max_iters",
            Status::PrimalInfeasible => "primal_infeasible",
            Status::DualInfeasible => "dual_infeasible",
        })
    }
}

/// Primal infeasibility, dual infeasibility and complementarity of a candidate point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals<T> {
    pub primal: T,
    pub dual: T,
    pub gap: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct QpSolution<T: Scalar> {
    pub z: DVector<T>,
    pub lambda_eq: DVector<T>,
    /// Nonnegative multipliers of `Ain z ≤ bin`.
    pub lambda_in: DVector<T>,
    /// Positive at an active upper bound, negative at an active lower bound.
    pub lambda_box: DVector<T>,
    pub objective: T,
    pub status: Status,
    pub residuals: KktResiduals<T>,
    pub iterations: usize,
    pub polished: bool,
    pub rho_updates: usize,
    pub tikhonov: f64,
}

/// Recomputes primal, dual and complementarity residuals from the problem data alone.
///
/// * primal: largest violation of the equalities, inequalities and bounds;
/// * dual: `‖Pz + c + Aeqᵀλ_eq + Ainᵀλ_in + λ_box‖∞`, or the most negative `λ_in`, whichever is larger;
/// * gap: largest `|multiplier × slack|` over inequalities and bounds, where a
///   nonzero multiplier on an infinite bound gives an infinite gap.
pub fn kkt_residuals<T: Scalar>(qp: &QpProblem<T>, sol: &QpSolution<T>) -> KktResiduals<T> {
    residuals_of(qp, &sol.z, &sol.lambda_eq, &sol.lambda_in, &sol.lambda_box)
}

pub(super) fn residuals_of<T: Scalar>(
    qp: &QpProblem<T>,
    z: &DVector<T>,
    l_eq: &DVector<T>,
    l_in: &DVector<T>,
    l_box: &DVector<T>,
) -> KktResiduals<T> {
    let d = qp.dim();
    if z.len() != d || l_eq.len() != qp.b_eq.len() || l_in.len() != qp.b_in.len() || l_box.len() != d {
        let inf = T::infinity();
        return KktResiduals { primal: inf, dual: inf, gap: inf };
    }
    let mut primal = T::zero();
    let eq = qp.a_eq.mul_vec(z);
    for r in 0..eq.len() {
        primal = primal.max((eq[r] - qp.b_eq[r]).abs());
    }
    let ineq = qp.a_in.mul_vec(z);
    for r in 0..ineq.len() {
        primal = primal.max(ineq[r] - qp.b_in[r]);
    }
    for j in 0..d {
        primal = primal.max(qp.lo[j] - z[j]).max(z[j] - qp.hi[j]);
    }

    let mut stat = &qp.p * z + &qp.c + l_box;
    qp.a_eq.tr_mul_add(T::one(), l_eq, &mut stat);
    qp.a_in.tr_mul_add(T::one(), l_in, &mut stat);
    let mut dual = linalg::vec_norm_inf(&stat);
    for &v in l_in.iter() {
        dual = dual.max(-v);
    }

    let product = |lambda: T, slack: T| -> T {
        if lambda == T::zero() {
            T::zero()
        } else {
            (lambda * slack).abs()
        }
    };
    let mut gap = T::zero();
    for r in 0..ineq.len() {
        gap = gap.max(product(l_in[r], qp.b_in[r] - ineq[r]));
    }
    for j in 0..d {
        let upper = l_box[j].max(T::zero());
        let lower = (-l_box[j]).max(T::zero());
        gap = gap.max(product(upper, qp.hi[j] - z[j])).max(product(lower, z[j] - qp.lo[j]));
    }
    let nan_to_inf = |v: T| if v.is_nan_value() { T::infinity() } else { v };
    KktResiduals { primal: nan_to_inf(primal), dual: nan_to_inf(dual), gap: nan_to_inf(gap) }
}

/// Solves with the given settings. `initial` is an optional primal starting point.
pub fn solve<T: Scalar>(qp: &QpProblem<T>, settings: &Settings, initial: Option<&DVector<T>>) -> Result<QpSolution<T>> {
    qp.validate()?;
    check_settings(settings)?;
    if let Some(x0) = initial {
        if x0.len() != qp.dim() {
            return Err(dim_err("QP initial guess", qp.dim(), x0.len()));
        }
    }
    match settings.method {
        Method::InteriorPoint => ipm::solve(qp, settings, initial),
        Method::Admm => admm::Admm::new(qp, settings)?.run(initial),
    }
}

fn certified<T: Scalar>(s: &Settings, r: &KktResiduals<T>) -> bool {
    r.primal <= T::of(s.eps_prim) && r.dual <= T::of(s.eps_dual) && r.gap <= T::of(s.eps_dual)
}

fn check_settings(s: &Settings) -> Result<()> {
    let positive = [s.eps_prim, s.eps_dual, s.rho, s.sigma, s.eps_infeasible];
    if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(invalid("settings", "tolerances and penalties must be positive"));
    }
    if !(s.alpha > 0.0 && s.alpha < 2.0) {
        return Err(invalid("alpha", "relaxation must lie in (0, 2)"));
    }
    if s.max_iters == 0 || s.check_interval == 0 {
        return Err(invalid("max_iters", "iteration limits must be positive"));
    }
    if !(s.tikhonov >= 0.0) {
        return Err(invalid("tikhonov", "must be nonnegative"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn both() -> [Settings; 2] {
        [Method::InteriorPoint, Method::Admm].map(|method| Settings { method, ..Settings::default() })
    }

    #[test]
    fn clipped_scalar_minimum() {
        for settings in both() {
            // min z² - 2z subject to z ≤ 0.
            let qp = QpProblem::unconstrained(DMatrix::from_element(1, 1, 2.0), v(&[-2.0]))
                .with_inequalities(SparseRows::from_dense(&DMatrix::from_element(1, 1, 1.0)), v(&[0.0]));
            let sol = solve(&qp, &settings, None).unwrap();
            assert_eq!(sol.status, Status::Optimal);
            assert_abs_diff_eq!(sol.z[0], 0.0, epsilon = 1e-6);
            assert_abs_diff_eq!(sol.objective, 0.0, epsilon = 1e-6);
            assert_abs_diff_eq!(sol.lambda_in[0], 2.0, epsilon = 1e-5);
        }
    }

    #[test]
    fn unconstrained_minimum() {
        for settings in both() {
            let qp = QpProblem::unconstrained(DMatrix::identity(2, 2) * 2.0, v(&[-2.0, -4.0]));
            let sol = solve(&qp, &settings, None).unwrap();
            assert_eq!(sol.status, Status::Optimal);
            assert_abs_diff_eq!(sol.z, v(&[1.0, 2.0]), epsilon = 1e-6);
        }
    }

    #[test]
    fn equality_projection() {
        for settings in both() {
            let qp = QpProblem::unconstrained(DMatrix::identity(2, 2) * 2.0, v(&[0.0, 0.0]))
                .with_equalities(SparseRows::from_dense(&DMatrix::from_row_slice(1, 2, &[1.0, 1.0])), v(&[1.0]));
            let sol = solve(&qp, &settings, None).unwrap();
            assert_eq!(sol.status, Status::Optimal);
            assert_abs_diff_eq!(sol.z, v(&[0.5, 0.5]), epsilon = 1e-6);
            // Stationarity: 2z + λ = 0.
            assert_abs_diff_eq!(sol.lambda_eq[0], -1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn residual_examples() {
        let qp = QpProblem::unconstrained(DMatrix::identity(2, 2) * 2.0, v(&[0.0, 0.0]))
            .with_equalities(SparseRows::from_dense(&DMatrix::from_row_slice(1, 2, &[1.0, 1.0])), v(&[1.0]));
        let exact = QpSolution {
            z: v(&[0.5, 0.5]),
            lambda_eq: v(&[-1.0]),
            lambda_in: DVector::zeros(0),
            lambda_box: DVector::zeros(2),
            objective: 0.5,
            status: Status::Optimal,
            residuals: KktResiduals { primal: 0.0, dual: 0.0, gap: 0.0 },
            iterations: 0,
            polished: false,
            rho_updates: 0,
            tikhonov: 0.0,
        };
        let r = kkt_residuals(&qp, &exact);
        assert!(r.primal <= 1e-12 && r.dual <= 1e-12 && r.gap <= 1e-12);

        // z ≥ 1 active at the optimum of min (z - 0)² on a bound.
        let bounded = QpProblem::unconstrained(DMatrix::from_element(1, 1, 2.0), v(&[0.0])).with_bounds(v(&[1.0]), v(&[f64::INFINITY]));
        let sol = solve(&bounded, &Settings::default(), None).unwrap();
        assert_eq!(sol.status, Status::Optimal);
        assert!(sol.lambda_box[0] < 0.0);
        let mut moved = sol.clone();
        moved.z[0] -= 0.1;
        assert_abs_diff_eq!(kkt_residuals(&bounded, &moved).primal, 0.1, epsilon = 1e-6);
    }

    #[test]
    fn infeasibility_is_detected() {
        for settings in both() {
            // z ≤ -1 and z ≥ 1.
            let a = SparseRows::from_dense(&DMatrix::from_column_slice(2, 1, &[1.0, -1.0]));
            let qp = QpProblem::unconstrained(DMatrix::from_element(1, 1, 1.0), v(&[0.0])).with_inequalities(a, v(&[-1.0, -1.0]));
            let sol = solve(&qp, &settings, None).unwrap();
            assert_eq!(sol.status, Status::PrimalInfeasible);

            // min -z with z unbounded above.
            let qp = QpProblem::unconstrained(DMatrix::zeros(1, 1), v(&[-1.0])).with_bounds(v(&[0.0]), v(&[f64::INFINITY]));
            let sol = solve(&qp, &settings, None).unwrap();
            assert_eq!(sol.status, Status::DualInfeasible);
        }
    }

    #[test]
    fn validation_rejects_bad_problems() {
        let bad_p = QpProblem::unconstrained(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]), v(&[0.0, 0.0]));
        assert!(solve(&bad_p, &Settings::default(), None).is_err());
        let indefinite = QpProblem::unconstrained(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]), v(&[0.0, 0.0]));
        assert!(solve(&indefinite, &Settings::default(), None).is_err());
        let crossed = QpProblem::unconstrained(DMatrix::identity(1, 1), v(&[0.0])).with_bounds(v(&[1.0]), v(&[0.0]));
        assert!(solve(&crossed, &Settings::default(), None).is_err());
    }

    #[test]
    fn singular_hessian_with_bounds() {
        for settings in both() {
            // Linear program over a box: min z1 - z2 on [0, 1]².
            let qp = QpProblem::unconstrained(DMatrix::zeros(2, 2), v(&[1.0, -1.0])).with_bounds(v(&[0.0, 0.0]), v(&[1.0, 1.0]));
            let sol = solve(&qp, &settings, None).unwrap();
            assert_eq!(sol.status, Status::Optimal);
            assert_abs_diff_eq!(sol.z, v(&[0.0, 1.0]), epsilon = 1e-6);
            assert_abs_diff_eq!(sol.lambda_box, v(&[-1.0, 1.0]), epsilon = 1e-6);
            assert!(sol.tikhonov > 0.0);
        }
    }

    #[test]
    fn json_dump_round_trips_dense_blocks() {
        let qp = QpProblem::unconstrained(DMatrix::identity(2, 2), v(&[1.0, 2.0]))
            .with_inequalities(SparseRows::from_dense(&DMatrix::from_row_slice(1, 2, &[1.0, 0.0])), v(&[3.0]));
        let dir = std::env::temp_dir().join(format!("qp-dump-{}.json", std::process::id()));
        qp.dump_json(&dir).unwrap();
        let text = std::fs::read_to_string(&dir).unwrap();
        std::fs::remove_file(&dir).ok();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["p", "c", "a_eq", "b_eq", "a_in", "b_in", "lo", "hi"] {
            assert!(value.get(key).is_some(), "{key}");
        }
    }

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
    }

    fn random_qp(seed: u64, d: usize) -> QpProblem<f64> {
        let mut r = lcg(seed);
        let g = DMatrix::from_fn(d, d, |_, _| r());
        let p = &g * g.transpose();
        let c = DVector::from_fn(d, |_, _| r());
        let a_in = DMatrix::from_fn(d / 2 + 1, d, |_, _| r());
        // Feasible by construction: the origin satisfies every constraint.
        let b_in = DVector::from_fn(a_in.nrows(), |_, _| r().abs() + 0.1);
        QpProblem::unconstrained(p, c)
            .with_inequalities(SparseRows::from_dense(&a_in), b_in)
            .with_bounds(DVector::from_element(d, -1.0), DVector::from_element(d, 1.0))
    }

    #[test]
    fn deterministic_bits() {
        for settings in both() {
            let qp = random_qp(3, 7);
            let a = solve(&qp, &settings, None).unwrap();
            let b = solve(&qp, &settings, None).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn single_precision_solve() {
        let qp = QpProblem::unconstrained(DMatrix::identity(2, 2) * 2.0f32, DVector::from_vec(vec![-2.0f32, -4.0]))
            .with_bounds(DVector::from_vec(vec![-5.0f32, -5.0]), DVector::from_vec(vec![5.0f32, 1.5]));
        for base in both() {
            let settings = Settings { eps_prim: 1e-4, eps_dual: 1e-4, ..base };
            let sol = solve(&qp, &settings, None).unwrap();
            assert_eq!(sol.status, Status::Optimal);
            assert!((sol.z[0] - 1.0).abs() < 1e-3 && (sol.z[1] - 1.5).abs() < 1e-3);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn random_feasible_points_never_beat_the_solver(seed in 0u64..1_000_000, d in 1usize..10, admm in any::<bool>()) {
            let qp = random_qp(seed, d);
            let method = if admm { Method::Admm } else { Method::InteriorPoint };
            let sol = solve(&qp, &Settings { method, ..Settings::default() }, None).unwrap();
            prop_assert_eq!(sol.status, Status::Optimal);
            let r = kkt_residuals(&qp, &sol);
            prop_assert!(r.primal <= 1e-6 && r.dual <= 1e-6 && r.gap <= 1e-6);
            let mut rnd = lcg(seed ^ 0xabcdef);
            let a = qp.a_in.to_dense();
            for _ in 0..200 {
                let mut z = DVector::from_fn(d, |_, _| rnd());
                // Shrink toward the origin until feasible.
                while (&a * &z - &qp.b_in).max() > 0.0 {
                    z *= 0.5;
                }
                prop_assert!(sol.objective <= qp.objective(&z) + 1e-6);
            }
        }

        #[test]
        fn gap_is_nonnegative_at_feasible_points(seed in 0u64..1_000_000, d in 1usize..8) {
            let qp = random_qp(seed, d);
            let sol = solve(&qp, &Settings::default(), None).unwrap();
            let mut probe = sol.clone();
            probe.z *= 0.5;
            prop_assert!(kkt_residuals(&qp, &probe).gap >= 0.0);
        }
    }
}
