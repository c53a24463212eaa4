use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::behavior::BehaviorMatrix;
use crate::chance::PSD_TOL;
use crate::error::{dim_err, invalid, Result};
use crate::linalg;
use crate::scalar::Scalar;

use super::predictor::LinearPredictor;

/// Per-sample box `lo ≤ v ≤ hi`, repeated over the horizon. Entries may be infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct SampleBox<T: Scalar> {
    pub lo: DVector<T>,
    pub hi: DVector<T>,
}

impl<T: Scalar> SampleBox<T> {
    pub fn new(lo: DVector<T>, hi: DVector<T>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(dim_err("box bounds", lo.len(), hi.len()));
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| !(l <= h)) {
            return Err(invalid("bounds", "lower bound exceeds upper bound"));
        }
        Ok(Self { lo, hi })
    }

    pub fn uniform(dim: usize, lo: T, hi: T) -> Result<Self> {
        Self::new(DVector::from_element(dim, lo), DVector::from_element(dim, hi))
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Box stacked `horizon` times.
    pub fn stacked(&self, horizon: usize) -> (DVector<T>, DVector<T>) {
        let d = self.dim();
        (DVector::from_fn(d * horizon, |i, _| self.lo[i % d]), DVector::from_fn(d * horizon, |i, _| self.hi[i % d]))
    }

    pub fn clamp(&self, v: &DVector<T>) -> DVector<T> {
        DVector::from_fn(v.len(), |i, _| v[i].max(self.lo[i]).min(self.hi[i]))
    }

    pub fn contains(&self, v: &DVector<T>, tol: T) -> bool {
        v.iter().enumerate().all(|(i, x)| *x >= self.lo[i] - tol && *x <= self.hi[i] + tol)
    }
}

/// Everything about one agent's tracking problem that does not depend on how
/// outputs are predicted: weights, reference, bounds, uncertainty and the
/// position selector.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingTask<T: Scalar> {
    m: usize,
    q: usize,
    t_f: usize,
    q_weight: DMatrix<T>,
    r_weight: DMatrix<T>,
    reference: DVector<T>,
    u_bounds: Option<SampleBox<T>>,
    y_bounds: Option<SampleBox<T>>,
    sigma_schedule: Vec<DMatrix<T>>,
    pos_extract: DMatrix<T>,
}

impl<T: Scalar> TrackingTask<T> {
    /// `q_weight` is `q·T_f` square, `r_weight` is `m·T_f` square, `reference` has
    /// length `q·T_f` and `pos_extract` selects position coordinates from one output.
    pub fn new(
        m: usize,
        q: usize,
        t_f: usize,
        q_weight: DMatrix<T>,
        r_weight: DMatrix<T>,
        reference: DVector<T>,
        pos_extract: DMatrix<T>,
    ) -> Result<Self> {
        if t_f == 0 {
            return Err(invalid("t_f", "horizon must be at least 1"));
        }
        check_weight("Q", &q_weight, q * t_f)?;
        check_weight("R", &r_weight, m * t_f)?;
        if reference.len() != q * t_f {
            return Err(dim_err("reference trajectory", q * t_f, reference.len()));
        }
        check_selector(&pos_extract, q)?;
        Ok(Self {
            m,
            q,
            t_f,
            q_weight,
            r_weight,
            reference,
            u_bounds: None,
            y_bounds: None,
            sigma_schedule: vec![DMatrix::zeros(q, q); t_f],
            pos_extract,
        })
    }

    pub fn with_input_bounds(mut self, b: SampleBox<T>) -> Result<Self> {
        if b.dim() != self.m {
            return Err(dim_err("input bounds", self.m, b.dim()));
        }
        self.u_bounds = Some(b);
        Ok(self)
    }

    pub fn with_output_bounds(mut self, b: SampleBox<T>) -> Result<Self> {
        if b.dim() != self.q {
            return Err(dim_err("output bounds", self.q, b.dim()));
        }
        self.y_bounds = Some(b);
        Ok(self)
    }

    /// Output covariances `Σ(τ)` for `τ = 1..T_f`, each `q x q` PSD.
    pub fn with_sigma_schedule(mut self, schedule: Vec<DMatrix<T>>) -> Result<Self> {
        if schedule.len() != self.t_f {
            return Err(dim_err("covariance schedule length", self.t_f, schedule.len()));
        }
        for s in &schedule {
            if s.nrows() != self.q || s.ncols() != self.q {
                return Err(dim_err("output covariance", format!("{0}x{0}", self.q), format!("{}x{}", s.nrows(), s.ncols())));
            }
            let scale = s.iter().fold(T::one(), |a, v| a.max(v.abs()));
            if !linalg::is_symmetric(s, T::of(PSD_TOL) * scale) || linalg::min_symmetric_eigenvalue(s) < -T::of(PSD_TOL) {
                return Err(invalid("sigma", "output covariance must be symmetric PSD"));
            }
        }
        self.sigma_schedule = schedule;
        Ok(self)
    }

    pub fn set_reference(&mut self, reference: DVector<T>) -> Result<()> {
        if reference.len() != self.q * self.t_f {
            return Err(dim_err("reference trajectory", self.q * self.t_f, reference.len()));
        }
        self.reference = reference;
        Ok(())
    }

    /// Multiplies both weights by `s > 0`.
    pub fn scale_weights(&mut self, s: T) {
        self.q_weight *= s;
        self.r_weight *= s;
    }

    pub fn m(&self) -> usize {
        self.m
    }
    pub fn q(&self) -> usize {
        self.q
    }
    pub fn t_f(&self) -> usize {
        self.t_f
    }
    pub fn q_weight(&self) -> &DMatrix<T> {
        &self.q_weight
    }
    pub fn r_weight(&self) -> &DMatrix<T> {
        &self.r_weight
    }
    pub fn reference(&self) -> &DVector<T> {
        &self.reference
    }
    pub fn input_bounds(&self) -> Option<&SampleBox<T>> {
        self.u_bounds.as_ref()
    }
    pub fn output_bounds(&self) -> Option<&SampleBox<T>> {
        self.y_bounds.as_ref()
    }
    pub fn sigma_schedule(&self) -> &[DMatrix<T>] {
        &self.sigma_schedule
    }
    pub fn pos_extract(&self) -> &DMatrix<T> {
        &self.pos_extract
    }
    pub fn pos_dim(&self) -> usize {
        self.pos_extract.nrows()
    }

    /// Position `M μ(τ)` of output block `tau` (0-based) of a stacked output trajectory.
    pub fn position(&self, mu: &DVector<T>, tau: usize) -> DVector<T> {
        &self.pos_extract * mu.rows(tau * self.q, self.q)
    }

    /// Position covariance `M Σ(τ) Mᵀ` at block `tau` (0-based).
    pub fn position_covariance(&self, tau: usize) -> DMatrix<T> {
        &self.pos_extract * &self.sigma_schedule[tau] * self.pos_extract.transpose()
    }
}

fn check_weight<T: Scalar>(name: &'static str, w: &DMatrix<T>, size: usize) -> Result<()> {
    if w.nrows() != size || w.ncols() != size {
        return Err(dim_err(name, format!("{size}x{size}"), format!("{}x{}", w.nrows(), w.ncols())));
    }
    if size == 0 {
        return Ok(());
    }
    let scale = w.iter().fold(T::one(), |a, v| a.max(v.abs()));
    if !linalg::is_symmetric(w, T::of(1e-10) * scale) {
        return Err(invalid(name, "weight must be symmetric"));
    }
    if linalg::min_symmetric_eigenvalue(w) < -T::of(1e-8) * scale {
        return Err(invalid(name, "weight must be positive semidefinite"));
    }
    Ok(())
}

fn check_selector<T: Scalar>(m: &DMatrix<T>, q: usize) -> Result<()> {
    if m.ncols() != q || m.nrows() == 0 || m.nrows() > q {
        return Err(dim_err("position selector", format!("p x {q} with 1 <= p <= {q}"), format!("{}x{}", m.nrows(), m.ncols())));
    }
    let mut used = vec![false; q];
    for r in 0..m.nrows() {
        let ones: Vec<usize> = (0..q).filter(|&c| m[(r, c)] == T::one()).collect();
        let zeros = (0..q).filter(|&c| m[(r, c)] == T::zero()).count();
        if ones.len() != 1 || zeros != q - 1 || used[ones[0]] {
            return Err(invalid("pos_extract", "rows must be distinct standard basis vectors"));
        }
        used[ones[0]] = true;
    }
    Ok(())
}

/// Selector whose rows pick output coordinates `indices`.
pub fn position_selector<T: Scalar>(q: usize, indices: &[usize]) -> DMatrix<T> {
    let mut m = DMatrix::zeros(indices.len(), q);
    for (r, &c) in indices.iter().enumerate() {
        m[(r, c)] = T::one();
    }
    m
}

/// `I_{T_f} ⊗ block`.
pub fn horizon_weight<T: Scalar>(block: &DMatrix<T>, t_f: usize) -> DMatrix<T> {
    linalg::repeat_diag(block, t_f)
}

/// Output `y` held constant over the horizon.
pub fn constant_reference<T: Scalar>(y: &DVector<T>, t_f: usize) -> DVector<T> {
    let q = y.len();
    DVector::from_fn(q * t_f, |i, _| y[i % q])
}

/// `Σ(τ) = Σ · s^τ` for `τ = 1..T_f`.
pub fn geometric_sigma_schedule<T: Scalar>(sigma: &DMatrix<T>, growth: T, t_f: usize) -> Vec<DMatrix<T>> {
    (1..=t_f).map(|tau| sigma * growth.powi(tau as i32)).collect()
}

/// Data-driven agent: a tracking task plus the trajectory matrix learned for it.
#[derive(Debug, Clone)]
pub struct AgentSpec<T: Scalar> {
    task: TrackingTask<T>,
    behavior: BehaviorMatrix<T>,
    predictor: Option<LinearPredictor<T>>,
}

impl<T: Scalar> AgentSpec<T> {
    /// Also prepares the condensed predictor when the data determine it uniquely.
    pub fn new(behavior: BehaviorMatrix<T>, task: TrackingTask<T>) -> Result<Self> {
        if behavior.m() != task.m() || behavior.q() != task.q() || behavior.t_f() != task.t_f() {
            return Err(dim_err(
                "agent behavior vs task (m, q, T_f)",
                format!("({}, {}, {})", task.m(), task.q(), task.t_f()),
                format!("({}, {}, {})", behavior.m(), behavior.q(), behavior.t_f()),
            ));
        }
        let predictor = LinearPredictor::from_behavior(&behavior).ok();
        Ok(Self { task, behavior, predictor })
    }

    pub fn task(&self) -> &TrackingTask<T> {
        &self.task
    }
    pub fn task_mut(&mut self) -> &mut TrackingTask<T> {
        &mut self.task
    }
    pub fn behavior(&self) -> &BehaviorMatrix<T> {
        &self.behavior
    }
    pub fn predictor(&self) -> Option<&LinearPredictor<T>> {
        self.predictor.as_ref()
    }
    pub fn t_p(&self) -> usize {
        self.behavior.t_p()
    }
}

/// Most recent `T_p` inputs and outputs, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct AgentWindow<T: Scalar> {
    pub u_p: DVector<T>,
    pub y_p: DVector<T>,
}

impl<T: Scalar> AgentWindow<T> {
    pub fn new(u_p: DVector<T>, y_p: DVector<T>, m: usize, q: usize, t_p: usize) -> Result<Self> {
        if u_p.len() != m * t_p {
            return Err(dim_err("window inputs", m * t_p, u_p.len()));
        }
        if y_p.len() != q * t_p {
            return Err(dim_err("window outputs", q * t_p, y_p.len()));
        }
        Ok(Self { u_p, y_p })
    }

    /// Window of a system resting at output `y` under input `u`.
    pub fn steady(u: &DVector<T>, y: &DVector<T>, t_p: usize) -> Self {
        Self { u_p: constant_reference(u, t_p), y_p: constant_reference(y, t_p) }
    }

    /// Window built from explicit samples, oldest first.
    pub fn from_samples(us: &[DVector<T>], ys: &[DVector<T>]) -> Result<Self> {
        if us.len() != ys.len() || us.is_empty() {
            return Err(dim_err("window samples", us.len(), ys.len()));
        }
        let u_refs: Vec<&DVector<T>> = us.iter().collect();
        let y_refs: Vec<&DVector<T>> = ys.iter().collect();
        Ok(Self { u_p: linalg::concat(&u_refs), y_p: linalg::concat(&y_refs) })
    }

    /// Drops the oldest sample and appends `(u, y)`.
    pub fn push(&mut self, u: &DVector<T>, y: &DVector<T>) {
        shift_in(&mut self.u_p, u);
        shift_in(&mut self.y_p, y);
    }

    pub fn stacked(&self) -> DVector<T> {
        linalg::concat(&[&self.u_p, &self.y_p])
    }
}

fn shift_in<T: Scalar>(buf: &mut DVector<T>, v: &DVector<T>) {
    let (n, d) = (buf.len(), v.len());
    for i in 0..n - d {
        buf[i] = buf[i + d];
    }
    buf.rows_mut(n - d, d).copy_from(v);
}
