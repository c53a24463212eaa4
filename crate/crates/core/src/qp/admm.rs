use nalgebra::{DMatrix, DVector};

use super::kkt::KktSolver;
use super::{residuals_of, KktResiduals, QpProblem, QpSolution, Settings, Status};
use crate::error::Result;
use crate::linalg::{self, Cholesky};
use crate::scalar::Scalar;
use crate::sparse::SparseRows;

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const RHO_ADAPT_RATIO: f64 = 5.0;
const RHO_ADAPT_EVERY: usize = 5;
const POLISH_DELTA: f64 = 1e-7;
const POLISH_REFINE: usize = 25;
const POLISH_TRIGGER: f64 = 1e3;
const SCALE_MIN: f64 = 1e-4;
const SCALE_MAX: f64 = 1e4;

#[derive(Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Eq,
    Ineq,
    Box(usize),
}

pub(super) struct Admm<'a, T: Scalar> {
    qp: &'a QpProblem<T>,
    s: &'a Settings,
    n: usize,
    kinds: Vec<RowKind>,
    // Scaled data.
    p: DMatrix<T>,
    q: DVector<T>,
    a: SparseRows<T>,
    l: DVector<T>,
    u: DVector<T>,
    d: DVector<T>,
    e: DVector<T>,
    cost_scale: T,
    rho: T,
    rho_vec: DVector<T>,
    factor: Option<Cholesky<T>>,
    rho_updates: usize,
}

impl<'a, T: Scalar> Admm<'a, T> {
    pub(super) fn new(qp: &'a QpProblem<T>, s: &'a Settings) -> Result<Self> {
        let n = qp.dim();
        let mut a = qp.a_eq.clone();
        a.append(&qp.a_in)?;
        let mut kinds = vec![RowKind::Eq; qp.a_eq.nrows()];
        kinds.extend(std::iter::repeat_n(RowKind::Ineq, qp.a_in.nrows()));
        let mut l: Vec<T> = qp.b_eq.iter().copied().collect();
        let mut u: Vec<T> = l.clone();
        l.extend(std::iter::repeat_n(T::neg_infinity(), qp.a_in.nrows()));
        u.extend(qp.b_in.iter().copied());
        for j in 0..n {
            if qp.lo[j].is_finite_value() || qp.hi[j].is_finite_value() {
                a.push_row([(j, T::one())])?;
                kinds.push(RowKind::Box(j));
                l.push(qp.lo[j]);
                u.push(qp.hi[j]);
            }
        }
        let mut w = Self {
            qp,
            s,
            n,
            kinds,
            p: qp.p.clone(),
            q: qp.c.clone(),
            a,
            l: DVector::from_vec(l),
            u: DVector::from_vec(u),
            d: DVector::from_element(n, T::one()),
            e: DVector::zeros(0),
            cost_scale: T::one(),
            rho: T::of(s.rho),
            rho_vec: DVector::zeros(0),
            factor: None,
            rho_updates: 0,
        };
        w.e = DVector::from_element(w.a.nrows(), T::one());
        w.equilibrate();
        w.set_rho_vec();
        Ok(w)
    }

    fn m(&self) -> usize {
        self.a.nrows()
    }

    fn is_eq_row(&self, r: usize) -> bool {
        self.l[r] == self.u[r]
    }

    // Ruiz equilibration of [P Aᵀ; A 0] followed by cost normalization.
    fn equilibrate(&mut self) {
        let clamp = |v: T| -> T {
            if v < T::of(SCALE_MIN) {
                T::one()
            } else {
                v.min(T::of(SCALE_MAX))
            }
        };
        for _ in 0..self.s.scaling_iters {
            let acol = self.a.col_norms_inf();
            let dd = DVector::from_fn(self.n, |j, _| {
                let pn = self.p.column(j).amax();
                T::one() / clamp(pn.max(acol[j])).sqrt()
            });
            let arow = self.a.row_norms_inf();
            let ee = DVector::from_fn(self.m(), |r, _| T::one() / clamp(arow[r]).sqrt());
            for j in 0..self.n {
                for i in 0..self.n {
                    self.p[(i, j)] *= dd[i] * dd[j];
                }
            }
            self.q.component_mul_assign(&dd);
            self.a.scale(&ee, &dd);
            self.d.component_mul_assign(&dd);
            self.e.component_mul_assign(&ee);
        }
        if self.s.scaling_iters > 0 {
            let mean_col =
                if self.n == 0 { T::zero() } else { self.p.column_iter().fold(T::zero(), |acc, c| acc + c.amax()) / T::of_usize(self.n) };
            let gamma = T::one() / clamp(mean_col.max(linalg::vec_norm_inf(&self.q)));
            self.p *= gamma;
            self.q *= gamma;
            self.cost_scale = gamma;
        }
        for r in 0..self.m() {
            self.l[r] *= self.e[r];
            self.u[r] *= self.e[r];
        }
    }

    fn set_rho_vec(&mut self) {
        self.rho_vec = DVector::from_fn(self.m(), |r, _| {
            if self.l[r] == self.u[r] {
                self.rho * T::of(RHO_EQ_FACTOR)
            } else if !self.l[r].is_finite_value() && !self.u[r].is_finite_value() {
                T::of(RHO_MIN)
            } else {
                self.rho
            }
        });
        self.factor = None;
    }

    fn factorize(&mut self) -> Result<()> {
        let mut k = self.p.clone();
        let diag = T::of(self.s.sigma) + T::of(self.s.tikhonov) * self.cost_scale;
        for i in 0..self.n {
            k[(i, i)] += diag;
        }
        self.a.add_weighted_gram(&self.rho_vec, &mut k);
        self.factor = Some(Cholesky::new(k)?);
        Ok(())
    }

    fn project(&self, v: &mut DVector<T>) {
        for r in 0..v.len() {
            v[r] = v[r].max(self.l[r]).min(self.u[r]);
        }
    }

    pub(super) fn run(&mut self, initial: Option<&DVector<T>>) -> Result<QpSolution<T>> {
        let (n, m) = (self.n, self.m());
        let alpha = T::of(self.s.alpha);
        let sigma = T::of(self.s.sigma);
        let mut x = match initial {
            Some(x0) => x0.component_div(&self.d),
            None => DVector::zeros(n),
        };
        let mut z = self.a.mul_vec(&x);
        self.project(&mut z);
        let mut y = DVector::<T>::zeros(m);
        self.factorize()?;

        let mut admm_eps = T::one();
        let mut last_polish: Option<Vec<i8>> = None;
        let mut last: Option<QpSolution<T>> = None;
        let mut checks = 0usize;

        for iter in 1..=self.s.max_iters {
            let x_prev = x.clone();
            let y_prev = y.clone();
            let mut rhs = &x * sigma - &self.q;
            let w = self.rho_vec.component_mul(&z) - &y;
            self.a.tr_mul_add(T::one(), &w, &mut rhs);
            self.factor.as_ref().expect("factor present").solve_in_place(&mut rhs);
            let x_tilde = rhs;
            let z_tilde = self.a.mul_vec(&x_tilde);
            x = &x_tilde * alpha + &x_prev * (T::one() - alpha);
            let z_relaxed = &z_tilde * alpha + &z * (T::one() - alpha);
            let mut z_next = &z_relaxed + y.component_div(&self.rho_vec);
            self.project(&mut z_next);
            y += self.rho_vec.component_mul(&(&z_relaxed - &z_next));
            z = z_next;

            if iter % self.s.check_interval != 0 && iter != self.s.max_iters {
                continue;
            }
            checks += 1;
            let info = self.measure(&x, &z, &y);

            if self.primal_infeasible(&(&y - &y_prev)) {
                return Ok(self.finish(&x, &y, Status::PrimalInfeasible, iter, false));
            }
            if self.dual_infeasible(&(&x - &x_prev)) {
                return Ok(self.finish(&x, &y, Status::DualInfeasible, iter, false));
            }

            let eps_p = T::of(self.s.eps_prim);
            let eps_d = T::of(self.s.eps_dual);
            let tol_p = eps_p * admm_eps;
            let tol_d = eps_d * admm_eps;
            let met = |scale: T| info.prim <= tol_p * scale && info.dual <= tol_d * scale;

            if self.s.polish && met(T::of(POLISH_TRIGGER)) {
                let active = self.active_set(&z, &y);
                if last_polish.as_ref() != Some(&active) {
                    if let Some(sol) = self.polish(&active, iter) {
                        return Ok(sol);
                    }
                    last_polish = Some(active);
                }
            }
            if met(T::one()) {
                let sol = self.finish(&x, &y, Status::Optimal, iter, false);
                if self.certified(&sol.residuals) {
                    return Ok(sol);
                }
                admm_eps = (admm_eps * T::of(0.1)).max(T::of(1e-4));
            }

            if self.s.adaptive_rho && checks.is_multiple_of(RHO_ADAPT_EVERY) {
                let ratio_p = info.prim / info.prim_scale.max(T::of(1e-30));
                let ratio_d = info.dual / info.dual_scale.max(T::of(1e-30));
                if ratio_d > T::zero() && ratio_p > T::zero() {
                    let proposal = (self.rho * (ratio_p / ratio_d).sqrt()).max(T::of(RHO_MIN)).min(T::of(RHO_MAX));
                    if proposal > self.rho * T::of(RHO_ADAPT_RATIO) || proposal < self.rho / T::of(RHO_ADAPT_RATIO) {
                        self.rho = proposal;
                        self.set_rho_vec();
                        self.factorize()?;
                        self.rho_updates += 1;
                    }
                }
            }
            if iter == self.s.max_iters {
                last = Some(self.finish(&x, &y, Status::MaxIters, iter, false));
            }
        }
        let fallback = last.expect("final iteration recorded");
        if self.s.polish {
            let active = self.active_set(&self.a.mul_vec(&x), &y);
            if let Some(sol) = self.polish(&active, self.s.max_iters) {
                return Ok(sol);
            }
        }
        Ok(fallback)
    }

    fn certified(&self, r: &KktResiduals<T>) -> bool {
        r.primal <= T::of(self.s.eps_prim) && r.dual <= T::of(self.s.eps_dual) && r.gap <= T::of(self.s.eps_dual)
    }

    fn measure(&self, x: &DVector<T>, z: &DVector<T>, y: &DVector<T>) -> Measure<T> {
        let ax = self.a.mul_vec(x);
        let mut prim = T::zero();
        let mut ax_n = T::zero();
        let mut z_n = T::zero();
        for r in 0..self.m() {
            let inv = T::one() / self.e[r];
            prim = prim.max(((ax[r] - z[r]) * inv).abs());
            ax_n = ax_n.max((ax[r] * inv).abs());
            z_n = z_n.max((z[r] * inv).abs());
        }
        let px = &self.p * x;
        let aty = self.a.tr_mul_vec(y);
        let mut dual = T::zero();
        let (mut px_n, mut aty_n, mut q_n) = (T::zero(), T::zero(), T::zero());
        for j in 0..self.n {
            let inv = T::one() / (self.d[j] * self.cost_scale);
            dual = dual.max(((px[j] + self.q[j] + aty[j]) * inv).abs());
            px_n = px_n.max((px[j] * inv).abs());
            aty_n = aty_n.max((aty[j] * inv).abs());
            q_n = q_n.max((self.q[j] * inv).abs());
        }
        Measure { prim, dual, prim_scale: ax_n.max(z_n), dual_scale: px_n.max(aty_n).max(q_n) }
    }

    fn primal_infeasible(&self, dy: &DVector<T>) -> bool {
        if self.m() == 0 {
            return false;
        }
        let mut dy = dy.clone();
        for r in 0..self.m() {
            if !self.u[r].is_finite_value() {
                dy[r] = dy[r].min(T::zero());
            }
            if !self.l[r].is_finite_value() {
                dy[r] = dy[r].max(T::zero());
            }
        }
        let dy_norm = (0..self.m()).fold(T::zero(), |acc, r| acc.max((self.e[r] * dy[r]).abs()));
        if !(dy_norm > T::of(1e-30)) {
            return false;
        }
        let eps = T::of(self.s.eps_infeasible) * dy_norm;
        let aty = self.a.tr_mul_vec(&dy);
        let aty_n = (0..self.n).fold(T::zero(), |acc, j| acc.max((aty[j] / self.d[j]).abs()));
        if aty_n > eps {
            return false;
        }
        let mut support = T::zero();
        for r in 0..self.m() {
            if dy[r] > T::zero() {
                support += self.u[r] * dy[r];
            } else if dy[r] < T::zero() {
                support += self.l[r] * dy[r];
            }
        }
        support < -eps
    }

    fn dual_infeasible(&self, dx: &DVector<T>) -> bool {
        let dx_norm = (0..self.n).fold(T::zero(), |acc, j| acc.max((self.d[j] * dx[j]).abs()));
        if !(dx_norm > T::of(1e-30)) {
            return false;
        }
        let eps = T::of(self.s.eps_infeasible) * dx_norm;
        if !(self.q.dot(dx) / self.cost_scale < -eps) {
            return false;
        }
        let pdx = &self.p * dx;
        let pdx_n = (0..self.n).fold(T::zero(), |acc, j| acc.max((pdx[j] / (self.d[j] * self.cost_scale)).abs()));
        if pdx_n > eps {
            return false;
        }
        let adx = self.a.mul_vec(dx);
        (0..self.m()).all(|r| {
            let v = adx[r] / self.e[r];
            let up_ok = if self.u[r].is_finite_value() { v <= eps } else { true };
            let lo_ok = if self.l[r].is_finite_value() { v >= -eps } else { true };
            up_ok && lo_ok
        })
    }

    // +1 upper active, -1 lower active, 2 equality, 0 inactive.
    fn active_set(&self, z: &DVector<T>, y: &DVector<T>) -> Vec<i8> {
        (0..self.m())
            .map(|r| {
                if self.is_eq_row(r) {
                    2
                } else if self.l[r].is_finite_value() && z[r] - self.l[r] < -y[r] {
                    -1
                } else if self.u[r].is_finite_value() && self.u[r] - z[r] < y[r] {
                    1
                } else {
                    0
                }
            })
            .collect()
    }

    fn polish(&self, active: &[i8], iter: usize) -> Option<QpSolution<T>> {
        let n = self.n;
        let target = |r: usize| if active[r] == -1 { self.l[r] } else { self.u[r] };
        let mut fixed_by: Vec<Option<usize>> = vec![None; n];
        let mut fixed_val = DVector::<T>::zeros(n);
        let mut general = Vec::new();
        for r in 0..self.m() {
            if active[r] == 0 {
                continue;
            }
            let (cols, vals) = self.a.row(r);
            if cols.len() == 1 && vals[0] != T::zero() {
                let j = cols[0];
                if fixed_by[j].is_none() {
                    fixed_by[j] = Some(r);
                    fixed_val[j] = target(r) / vals[0];
                }
            } else {
                general.push(r);
            }
        }
        let free: Vec<usize> = (0..n).filter(|&j| fixed_by[j].is_none()).collect();
        let mut pos = vec![usize::MAX; n];
        for (k, &j) in free.iter().enumerate() {
            pos[j] = k;
        }
        let nf = free.len();
        let kg = general.len();

        let tik = T::of(self.s.tikhonov) * self.cost_scale;
        let mut h_exact = DMatrix::<T>::zeros(nf, nf);
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                h_exact[(a, b)] = self.p[(i, j)];
            }
            h_exact[(a, a)] += tik;
        }
        let mut g = DMatrix::<T>::zeros(kg, nf);
        let mut b = DVector::<T>::zeros(kg);
        for (k, &r) in general.iter().enumerate() {
            let (cols, vals) = self.a.row(r);
            let mut rhs = target(r);
            for (&j, &v) in cols.iter().zip(vals) {
                if pos[j] == usize::MAX {
                    rhs -= v * fixed_val[j];
                } else {
                    g[(k, pos[j])] += v;
                }
            }
            b[k] = rhs;
        }
        let mut r1 = DVector::<T>::zeros(nf);
        let p_fixed = &self.p * &fixed_val;
        for (a, &i) in free.iter().enumerate() {
            r1[a] = -self.q[i] - p_fixed[i];
        }

        let kkt = KktSolver::new(h_exact, g, T::of(POLISH_DELTA))?;
        let (xf, yg) = kkt.solve(&r1, &b, POLISH_REFINE);

        let mut x = fixed_val;
        for (a, &j) in free.iter().enumerate() {
            x[j] = xf[a];
        }
        let mut y = DVector::<T>::zeros(self.m());
        for (k, &r) in general.iter().enumerate() {
            y[r] = yg[k];
        }
        let mut grad = &self.p * &x + &self.q;
        self.a.tr_mul_add(T::one(), &y, &mut grad);
        for j in 0..n {
            if let Some(r) = fixed_by[j] {
                y[r] = -grad[j] / self.a.row(r).1[0];
            }
        }
        let sol = self.finish(&x, &y, Status::Optimal, iter, true);
        if self.certified(&sol.residuals) {
            Some(sol)
        } else {
            log::trace!(
                "polish rejected at iteration {iter}: primal {} dual {} gap {}",
                sol.residuals.primal,
                sol.residuals.dual,
                sol.residuals.gap
            );
            None
        }
    }

    // Unscales an iterate, projects the multipliers onto their sign constraints and certifies.
    fn finish(&self, x: &DVector<T>, y: &DVector<T>, status: Status, iterations: usize, polished: bool) -> QpSolution<T> {
        let z = x.component_mul(&self.d);
        let mut l_eq = DVector::zeros(self.qp.b_eq.len());
        let mut l_in = DVector::zeros(self.qp.b_in.len());
        let mut l_box = DVector::zeros(self.n);
        let n_eq = self.qp.b_eq.len();
        for r in 0..self.m() {
            let mut v = y[r] * self.e[r] / self.cost_scale;
            if !self.u[r].is_finite_value() {
                v = v.min(T::zero());
            }
            if !self.l[r].is_finite_value() {
                v = v.max(T::zero());
            }
            match self.kinds[r] {
                RowKind::Eq => l_eq[r] = v,
                RowKind::Ineq => l_in[r - n_eq] = v,
                RowKind::Box(j) => l_box[j] = v,
            }
        }
        let residuals = residuals_of(self.qp, &z, &l_eq, &l_in, &l_box);
        let status = if status == Status::Optimal && !self.certified(&residuals) { Status::MaxIters } else { status };
        QpSolution {
            objective: self.qp.objective(&z),
            z,
            lambda_eq: l_eq,
            lambda_in: l_in,
            lambda_box: l_box,
            status,
            residuals,
            iterations,
            polished,
            rho_updates: self.rho_updates,
            tikhonov: self.s.tikhonov,
        }
    }
}

struct Measure<T> {
    prim: T,
    dual: T,
    prim_scale: T,
    dual_scale: T,
}
