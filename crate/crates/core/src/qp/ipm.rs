//! Infeasible-start primal-dual interior-point method with Mehrotra
//! predictor-corrector steps.
//!
//! All inequalities, including finite box bounds, are written as `G z + s = h`
//! with `s ≥ 0` and multipliers `λ ≥ 0`. Each Newton system is reduced to
//! `[P + GᵀWG, Aᵀ; A, 0]` with `W = diag(λ/s)`.

use nalgebra::DVector;

use super::kkt::KktSolver;
use super::{certified, residuals_of, QpProblem, QpSolution, Settings, Status};
use crate::error::Result;
use crate::linalg;
use crate::scalar::Scalar;
use crate::sparse::SparseRows;

/// Iteration cap; interior-point iterations are far more expensive than splitting steps.
pub const IPM_ITER_CAP: usize = 200;
const STEP_FRACTION: f64 = 0.99;
const REG_DELTA: f64 = 1e-9;
const REFINE: usize = 6;
const STALL_STEP: f64 = 1e-10;
const STALL_LIMIT: usize = 5;
const RAY_GROWTH: f64 = 1e3;
const MIN_CENTERING: f64 = 0.1;

#[derive(Clone, Copy)]
enum Row {
    Ineq(usize),
    Upper(usize),
    Lower(usize),
}

struct Ipm<'a, T: Scalar> {
    qp: &'a QpProblem<T>,
    s: &'a Settings,
    n: usize,
    a_dense: nalgebra::DMatrix<T>,
    eq_scale: DVector<T>,
    b: DVector<T>,
    g: SparseRows<T>,
    h: DVector<T>,
    rows: Vec<Row>,
    row_scale: Vec<T>,
}

impl<'a, T: Scalar> Ipm<'a, T> {
    fn new(qp: &'a QpProblem<T>, s: &'a Settings) -> Result<Self> {
        let n = qp.dim();
        // Unit infinity-norm rows keep the barrier weights comparable across constraints.
        let eq_norms = qp.a_eq.row_norms_inf();
        let eq_scale = eq_norms.map(|v| if v > T::zero() { T::one() / v } else { T::one() });
        let mut a_dense = qp.a_eq.to_dense();
        for r in 0..a_dense.nrows() {
            let sc = eq_scale[r];
            a_dense.row_mut(r).scale_mut(sc);
        }
        let b = qp.b_eq.component_mul(&eq_scale);

        let mut g = SparseRows::empty(n);
        let mut h = Vec::new();
        let mut rows = Vec::new();
        let mut row_scale = Vec::new();
        let in_norms = qp.a_in.row_norms_inf();
        for r in 0..qp.a_in.nrows() {
            let sc = if in_norms[r] > T::zero() { T::one() / in_norms[r] } else { T::one() };
            let (cols, vals) = qp.a_in.row(r);
            g.push_row(cols.iter().zip(vals).map(|(&c, &v)| (c, v * sc)))?;
            h.push(qp.b_in[r] * sc);
            rows.push(Row::Ineq(r));
            row_scale.push(sc);
        }
        for j in 0..n {
            if qp.hi[j].is_finite_value() {
                g.push_row([(j, T::one())])?;
                h.push(qp.hi[j]);
                rows.push(Row::Upper(j));
                row_scale.push(T::one());
            }
            if qp.lo[j].is_finite_value() {
                g.push_row([(j, -T::one())])?;
                h.push(-qp.lo[j]);
                rows.push(Row::Lower(j));
                row_scale.push(T::one());
            }
        }
        Ok(Self { qp, s, n, a_dense, eq_scale, b, g, h: DVector::from_vec(h), rows, row_scale })
    }

    fn mi(&self) -> usize {
        self.h.len()
    }

    fn hessian(&self, w: &DVector<T>) -> nalgebra::DMatrix<T> {
        let mut hm = self.qp.p.clone();
        let tik = T::of(self.s.tikhonov);
        for i in 0..self.n {
            hm[(i, i)] += tik;
        }
        self.g.add_weighted_gram(w, &mut hm);
        hm
    }

    fn factor(&self, w: &DVector<T>) -> Option<KktSolver<T>> {
        let hm = self.hessian(w);
        let mut delta = T::of(REG_DELTA);
        for _ in 0..4 {
            if let Some(k) = KktSolver::new(hm.clone(), self.a_dense.clone(), delta) {
                return Some(k);
            }
            delta *= T::of(1e3);
        }
        None
    }

    fn solution(&self, z: &DVector<T>, y: &DVector<T>, lam: &DVector<T>, status: Status, iterations: usize) -> QpSolution<T> {
        let mut l_in = DVector::zeros(self.qp.b_in.len());
        let mut l_box = DVector::zeros(self.n);
        for (k, row) in self.rows.iter().enumerate() {
            match *row {
                Row::Ineq(r) => l_in[r] = lam[k] * self.row_scale[k],
                Row::Upper(j) => l_box[j] += lam[k],
                Row::Lower(j) => l_box[j] -= lam[k],
            }
        }
        let l_eq = y.component_mul(&self.eq_scale);
        let residuals = residuals_of(self.qp, z, &l_eq, &l_in, &l_box);
        let status = if status == Status::Optimal && !certified(self.s, &residuals) { Status::MaxIters } else { status };
        QpSolution {
            objective: self.qp.objective(z),
            z: z.clone(),
            lambda_eq: l_eq,
            lambda_in: l_in,
            lambda_box: l_box,
            status,
            residuals,
            iterations,
            polished: false,
            rho_updates: 0,
            tikhonov: self.s.tikhonov,
        }
    }

    /// Normalized dual ray: `Aᵀy + Gᵀλ ≈ 0` with `bᵀy + hᵀλ < 0`.
    fn primal_infeasible(&self, y: &DVector<T>, lam: &DVector<T>) -> bool {
        let kappa = linalg::vec_norm_inf(y).max(linalg::vec_norm_inf(lam));
        if !(kappa > T::zero()) {
            return false;
        }
        let eps = T::of(self.s.eps_infeasible);
        let mut ray = self.a_dense.transpose() * y;
        self.g.tr_mul_add(T::one(), lam, &mut ray);
        let support = self.b.dot(y) + self.h.dot(lam);
        linalg::vec_norm_inf(&ray) <= eps * kappa && support < -eps * kappa
    }

    /// Normalized recession direction: `P d ≈ 0`, `A d ≈ 0`, `G d ≤ 0` and `cᵀd < 0`.
    fn dual_infeasible(&self, d: &DVector<T>) -> bool {
        let kappa = linalg::vec_norm_inf(d);
        if !(kappa > T::zero()) {
            return false;
        }
        let eps = T::of(self.s.eps_infeasible) * kappa;
        if !(self.qp.c.dot(d) < -eps) {
            return false;
        }
        if linalg::vec_norm_inf(&(&self.qp.p * d)) > eps {
            return false;
        }
        if self.a_dense.nrows() > 0 && linalg::vec_norm_inf(&(&self.a_dense * d)) > eps {
            return false;
        }
        self.g.mul_vec(d).iter().all(|v| *v <= eps)
    }

    fn step_length(&self, s: &DVector<T>, lam: &DVector<T>, ds: &DVector<T>, dl: &DVector<T>) -> T {
        (max_step(s, ds).min(max_step(lam, dl)) * T::of(STEP_FRACTION)).min(T::one())
    }

    fn run(&self, initial: Option<&DVector<T>>) -> Result<QpSolution<T>> {
        let (me, mi) = (self.a_dense.nrows(), self.mi());
        let one = T::one();

        // Starting point: minimize ½zᵀPz + cᵀz + ½‖Gz - h‖² on Az = b, then push s and λ inside.
        let mut z;
        let mut y;
        {
            let kkt = self
                .factor(&DVector::from_element(mi, one))
                .ok_or_else(|| crate::error::Error::Singular("interior-point start system".into()))?;
            let mut r1 = -&self.qp.c;
            self.g.tr_mul_add(one, &self.h, &mut r1);
            let (z0, y0) = kkt.solve(&r1, &self.b, REFINE);
            z = match initial {
                Some(x0) => x0.clone(),
                None => z0,
            };
            y = y0;
        }
        let gz = self.g.mul_vec(&z);
        let mut s = &self.h - &gz;
        let mut lam = -&s;
        for v in [&mut s, &mut lam] {
            if mi > 0 && v.min() <= T::zero() {
                let add = one - v.min();
                v.add_scalar_mut(add);
            }
        }

        let cap = self.s.max_iters.min(IPM_ITER_CAP);
        let mut stalls = 0;
        let mut best: Option<QpSolution<T>> = None;
        for iter in 0..=cap {
            let sol = self.solution(&z, &y, &lam, Status::Optimal, iter);
            if sol.status == Status::Optimal {
                return Ok(sol);
            }
            if mi + me > 0 && self.primal_infeasible(&y, &lam) {
                return Ok(self.solution(&z, &y, &lam, Status::PrimalInfeasible, iter));
            }
            let worse = best.as_ref().is_some_and(|b| score(b) <= score(&sol));
            if !worse {
                best = Some(sol);
            }
            if iter == cap || stalls >= STALL_LIMIT {
                break;
            }

            let mut rd = &self.qp.p * &z + &self.qp.c;
            if me > 0 {
                rd += self.a_dense.transpose() * &y;
            }
            self.g.tr_mul_add(one, &lam, &mut rd);
            let re = if me > 0 { &self.a_dense * &z - &self.b } else { DVector::zeros(0) };
            let ri = self.g.mul_vec(&z) + &s - &self.h;
            let mu = if mi > 0 { lam.dot(&s) / T::of_usize(mi) } else { T::zero() };

            let w = lam.component_div(&s);
            let Some(kkt) = self.factor(&w) else {
                break;
            };
            let direction = |rc: &DVector<T>| -> (DVector<T>, DVector<T>, DVector<T>, DVector<T>) {
                // dλ = W G dz + (λ∘ri - rc)/s,  ds = -ri - G dz.
                let corr = (lam.component_mul(&ri) - rc).component_div(&s);
                let mut r1 = -&rd;
                self.g.tr_mul_add(-one, &corr, &mut r1);
                let (dz, dy) = kkt.solve(&r1, &(-&re), REFINE);
                let gdz = self.g.mul_vec(&dz);
                let dl = w.component_mul(&gdz) + corr;
                let ds = -&ri - gdz;
                (dz, dy, dl, ds)
            };

            let rc_aff = lam.component_mul(&s);
            let (dz_a, dy_a, dl_a, ds_a) = direction(&rc_aff);
            let ((dz, dy, dl, ds), alpha) = if mi > 0 {
                let a_aff = self.step_length(&s, &lam, &ds_a, &dl_a);
                let mu_aff = (&s + &ds_a * a_aff).dot(&(&lam + &dl_a * a_aff)) / T::of_usize(mi);
                let sigma = (mu_aff / mu).powi(3).min(one).max(T::zero());
                let target = DVector::from_element(mi, sigma * mu);
                let corrected = direction(&(&rc_aff + ds_a.component_mul(&dl_a) - &target));
                let a_c = self.step_length(&s, &lam, &corrected.3, &corrected.2);
                let mu_c = (&s + &corrected.3 * a_c).dot(&(&lam + &corrected.2 * a_c)) / T::of_usize(mi);
                if mu_c < mu {
                    (corrected, a_c)
                } else {
                    // The second-order term can push complementarity back up; take a centered step instead.
                    let sigma = sigma.max(T::of(MIN_CENTERING));
                    let plain = direction(&(&rc_aff - DVector::from_element(mi, sigma * mu)));
                    let a_p = self.step_length(&s, &lam, &plain.3, &plain.2);
                    (plain, a_p)
                }
            } else {
                ((dz_a, dy_a, dl_a, ds_a), one)
            };
            // A Newton step that is a recession direction and dwarfs the iterate certifies unboundedness.
            if self.dual_infeasible(&dz) && linalg::vec_norm_inf(&dz) > T::of(RAY_GROWTH) * linalg::vec_norm_inf(&z).max(one) {
                return Ok(self.solution(&dz, &y, &lam, Status::DualInfeasible, iter + 1));
            }
            if alpha < T::of(STALL_STEP) {
                stalls += 1;
            } else {
                stalls = 0;
            }
            z += &dz * alpha;
            if me > 0 {
                y += &dy * alpha;
            }
            s += &ds * alpha;
            lam += &dl * alpha;
        }
        let mut out = best.expect("at least one iterate recorded");
        out.status = Status::MaxIters;
        Ok(out)
    }
}

fn score<T: Scalar>(s: &QpSolution<T>) -> T {
    s.residuals.primal.max(s.residuals.dual).max(s.residuals.gap)
}

/// Largest `t ∈ [0, ∞)` with `v + t dv ≥ 0`, capped at a large value.
fn max_step<T: Scalar>(v: &DVector<T>, dv: &DVector<T>) -> T {
    let mut t = T::of(1e30);
    for i in 0..v.len() {
        if dv[i] < T::zero() {
            t = t.min(-v[i] / dv[i]);
        }
    }
    t
}

pub(super) fn solve<T: Scalar>(qp: &QpProblem<T>, s: &Settings, initial: Option<&DVector<T>>) -> Result<QpSolution<T>> {
    Ipm::new(qp, s)?.run(initial)
}
