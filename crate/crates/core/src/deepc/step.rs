use std::time::Instant;

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chance::{self, CollisionConstraint};
use crate::error::{dim_err, invalid, Error, Result};
use crate::linsys::StateSpace;
use crate::qp::{self, KktResiduals, QpProblem, Settings, Status};
use crate::scalar::Scalar;
use crate::sparse::SparseRows;

use super::predictor::{output_prediction, state_prediction_matrices, AffineOutputs};
use super::task::{AgentSpec, AgentWindow, TrackingTask};

/// Anchor change (m) below which sequential convex iterations stop.
pub const SCP_TOL: f64 = 1e-4;
/// Linear penalty per meter of softened collision violation.
pub const SLACK_WEIGHT: f64 = 1e4;

/// How the behavior constraint enters the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// Decision `(g, u, μ)` with the equality `W g = [u_p; y_p; u; μ]`.
    Behavior,
    /// `g` eliminated: `μ = f(u_p, y_p) + G u`, decision `u` only.
    #[default]
    Predictor,
}

/// Weighted 1-norm penalties for noisy data (behavior formulation only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Regularization {
    pub lambda_g: f64,
    pub lambda_s: f64,
}

impl Default for Regularization {
    fn default() -> Self {
        Self { lambda_g: 0.1, lambda_s: 1e5 }
    }
}

/// Collision risk bound `φ_ij`, either shared by all pairs or given per pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PairRisk {
    Uniform(f64),
    Matrix(Vec<Vec<f64>>),
}

impl PairRisk {
    /// `φ_ij` for `i < j`; a matrix is read from its upper triangle.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            PairRisk::Uniform(p) => *p,
            PairRisk::Matrix(m) => m[i.min(j)][i.max(j)],
        }
    }

    pub fn validate(&self, n_agents: usize) -> Result<()> {
        if let PairRisk::Matrix(m) = self {
            if m.len() != n_agents || m.iter().any(|r| r.len() != n_agents) {
                return Err(dim_err("phi matrix", format!("{n_agents}x{n_agents}"), format!("{} rows", m.len())));
            }
        }
        for i in 0..n_agents {
            for j in i + 1..n_agents {
                let p = self.get(i, j);
                if !(p > 0.0 && p <= 0.5) {
                    return Err(invalid("phi", format!("phi[{i}][{j}] = {p} is outside (0, 0.5]")));
                }
            }
        }
        Ok(())
    }
}

/// Per-step controller settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepConfig {
    /// Safe distance (m).
    pub d_safe: f64,
    pub phi: PairRisk,
    /// Convex solves per step; each one after the first re-linearizes at the previous plan.
    pub n_scp: usize,
    pub scp_tol: f64,
    /// Start in softened mode instead of only falling back to it.
    pub soft_collisions: bool,
    /// Keep each pair's separating direction from flipping along the horizon.
    pub keep_side: bool,
    pub slack_weight: f64,
    pub formulation: Formulation,
    pub regularization: Option<Regularization>,
    pub solver: Settings,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            d_safe: 0.3,
            phi: PairRisk::Uniform(0.1),
            n_scp: 1,
            scp_tol: SCP_TOL,
            soft_collisions: false,
            keep_side: true,
            slack_weight: SLACK_WEIGHT,
            formulation: Formulation::Predictor,
            regularization: None,
            solver: Settings::default(),
        }
    }
}

impl StepConfig {
    pub fn validate(&self, n_agents: usize) -> Result<()> {
        if !(self.d_safe > 0.0) {
            return Err(invalid("d_safe", "safe distance must be positive"));
        }
        self.phi.validate(n_agents)?;
        if !(self.scp_tol >= 0.0) || !(self.slack_weight > 0.0) {
            return Err(invalid("scp_tol/slack_weight", "must be nonnegative / positive"));
        }
        if self.regularization.is_some() && self.formulation != Formulation::Behavior {
            return Err(invalid("regularization", "requires the behavior formulation"));
        }
        if let Some(r) = &self.regularization {
            if !(r.lambda_g >= 0.0 && r.lambda_s >= 0.0) {
                return Err(invalid("regularization", "weights must be nonnegative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Outputs<T: Scalar> {
    /// `μ` is stored in the decision vector at this offset.
    Direct(usize),
    /// `μ = f + G u`.
    Affine(AffineOutputs<T>),
}

/// One agent's share of the coupled program, in local variable indices.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentQpBlock<T: Scalar> {
    pub p: DMatrix<T>,
    pub c: DVector<T>,
    /// Cost constant so that `½zᵀPz + cᵀz + constant` is the tracking objective.
    pub constant: T,
    pub a_eq: SparseRows<T>,
    pub b_eq: DVector<T>,
    pub a_in: SparseRows<T>,
    pub b_in: DVector<T>,
    pub lo: DVector<T>,
    pub hi: DVector<T>,
    /// Offset of `u` in the block.
    pub u_offset: usize,
    /// Offset and length of `g`, when present.
    pub g_range: Option<(usize, usize)>,
    m: usize,
    q: usize,
    t_f: usize,
    outputs: Outputs<T>,
}

impl<T: Scalar> AgentQpBlock<T> {
    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn inputs(&self, z: &DVector<T>) -> DVector<T> {
        z.rows(self.u_offset, self.m * self.t_f).clone_owned()
    }

    pub fn outputs(&self, z: &DVector<T>) -> DVector<T> {
        match &self.outputs {
            Outputs::Direct(off) => z.rows(*off, self.q * self.t_f).clone_owned(),
            Outputs::Affine(a) => a.eval(&self.inputs(z)),
        }
    }

    /// Output coordinate `row` of `μ` as `Σ coef·z[col] + constant`.
    fn output_terms(&self, row: usize) -> (Vec<(usize, T)>, T) {
        match &self.outputs {
            Outputs::Direct(off) => (vec![(off + row, T::one())], T::zero()),
            Outputs::Affine(a) => {
                let terms = (0..a.g.ncols()).filter(|&c| a.g[(row, c)] != T::zero()).map(|c| (self.u_offset + c, a.g[(row, c)])).collect();
                (terms, a.f[row])
            }
        }
    }
}

fn box_vectors<T: Scalar>(task: &TrackingTask<T>) -> (DVector<T>, DVector<T>, DVector<T>, DVector<T>) {
    let (m, q, t_f) = (task.m(), task.q(), task.t_f());
    let free = |d: usize| (DVector::from_element(d, T::neg_infinity()), DVector::from_element(d, T::infinity()));
    let (ulo, uhi) = task.input_bounds().map(|b| b.stacked(t_f)).unwrap_or_else(|| free(m * t_f));
    let (ylo, yhi) = task.output_bounds().map(|b| b.stacked(t_f)).unwrap_or_else(|| free(q * t_f));
    (ulo, uhi, ylo, yhi)
}

fn symmetrize<T: Scalar>(p: &mut DMatrix<T>) {
    let half = T::of(0.5);
    let t = p.transpose();
    *p += t;
    *p *= half;
}

/// Literal coupled form: decision `(g, u, μ)`, plus `(σ, t_g, t_σ)` when regularized.
pub fn assemble_agent_qp_blocks<T: Scalar>(
    spec: &AgentSpec<T>,
    window: &AgentWindow<T>,
    regularization: Option<&Regularization>,
) -> Result<AgentQpBlock<T>> {
    let task = spec.task();
    let b = spec.behavior();
    let (m, q, t_p, t_f) = (task.m(), task.q(), b.t_p(), task.t_f());
    let _ = AgentWindow::new(window.u_p.clone(), window.y_p.clone(), m, q, t_p)?;
    let n_g = b.n_cols();
    let (nu, ny) = (m * t_f, q * t_f);
    let u_off = n_g;
    let mu_off = n_g + nu;
    let base = n_g + nu + ny;
    let ns = if regularization.is_some() { q * t_p } else { 0 };
    let (s_off, tg_off, ts_off) = (base, base + ns, base + ns + if ns > 0 { n_g } else { 0 });
    let dim = if regularization.is_some() { base + ns + n_g + ns } else { base };

    let two = T::of(2.0);
    let mut p = DMatrix::zeros(dim, dim);
    p.view_mut((u_off, u_off), (nu, nu)).copy_from(&(task.r_weight() * two));
    p.view_mut((mu_off, mu_off), (ny, ny)).copy_from(&(task.q_weight() * two));
    symmetrize(&mut p);
    let mut c = DVector::zeros(dim);
    let qr = task.q_weight() * task.reference();
    c.rows_mut(mu_off, ny).copy_from(&(-&qr * two));
    let constant = task.reference().dot(&qr);

    let [_, off_yp, off_uf, off_yf] = b.partition_offsets();
    let w = b.w();
    let mut a_eq = SparseRows::empty(dim);
    let mut b_eq = DVector::zeros(b.n_rows());
    for r in 0..b.n_rows() {
        let mut row: Vec<(usize, T)> = (0..n_g).filter(|&k| w[(r, k)] != T::zero()).map(|k| (k, w[(r, k)])).collect();
        if r < off_yp {
            b_eq[r] = window.u_p[r];
        } else if r < off_uf {
            b_eq[r] = window.y_p[r - off_yp];
            if ns > 0 {
                row.push((s_off + r - off_yp, -T::one()));
            }
        } else if r < off_yf {
            row.push((u_off + r - off_uf, -T::one()));
        } else {
            row.push((mu_off + r - off_yf, -T::one()));
        }
        a_eq.push_row(row)?;
    }

    let mut a_in = SparseRows::empty(dim);
    let mut b_in = Vec::new();
    if let Some(reg) = regularization {
        for (var, aux, n, weight) in [(0, tg_off, n_g, reg.lambda_g), (s_off, ts_off, ns, reg.lambda_s)] {
            for k in 0..n {
                a_in.push_row([(var + k, T::one()), (aux + k, -T::one())])?;
                a_in.push_row([(var + k, -T::one()), (aux + k, -T::one())])?;
                b_in.extend([T::zero(), T::zero()]);
                c[aux + k] = T::of(weight);
            }
        }
    }

    let (ulo, uhi, ylo, yhi) = box_vectors(task);
    let mut lo = DVector::from_element(dim, T::neg_infinity());
    let mut hi = DVector::from_element(dim, T::infinity());
    lo.rows_mut(u_off, nu).copy_from(&ulo);
    hi.rows_mut(u_off, nu).copy_from(&uhi);
    lo.rows_mut(mu_off, ny).copy_from(&ylo);
    hi.rows_mut(mu_off, ny).copy_from(&yhi);
    if ns > 0 {
        lo.rows_mut(tg_off, n_g + ns).fill(T::zero());
    }

    Ok(AgentQpBlock {
        p,
        c,
        constant,
        a_eq,
        b_eq,
        a_in,
        b_in: DVector::from_vec(b_in),
        lo,
        hi,
        u_offset: u_off,
        g_range: Some((0, n_g)),
        m,
        q,
        t_f,
        outputs: Outputs::Direct(mu_off),
    })
}

/// Input-only form with outputs `μ = f + G u`, shared by the eliminated data predictor
/// and the model-based baseline.
pub fn assemble_condensed_block<T: Scalar>(task: &TrackingTask<T>, outputs: AffineOutputs<T>) -> Result<AgentQpBlock<T>> {
    let (m, q, t_f) = (task.m(), task.q(), task.t_f());
    let (nu, ny) = (m * t_f, q * t_f);
    if outputs.f.len() != ny || outputs.g.shape() != (ny, nu) {
        return Err(dim_err("output predictor", format!("{ny} + {ny}x{nu}"), format!("{} + {:?}", outputs.f.len(), outputs.g.shape())));
    }
    let two = T::of(2.0);
    let e = &outputs.f - task.reference();
    let qg = task.q_weight() * &outputs.g;
    let mut p = (outputs.g.transpose() * &qg + task.r_weight()) * two;
    symmetrize(&mut p);
    let c = qg.transpose() * &e * two;
    let constant = e.dot(&(task.q_weight() * &e));

    let (lo, hi, ylo, yhi) = box_vectors(task);
    let mut a_in = SparseRows::empty(nu);
    let mut b_in = Vec::new();
    for r in 0..ny {
        let g = &outputs.g;
        let row = |sign: T| (0..nu).filter(move |&k| g[(r, k)] != T::zero()).map(move |k| (k, sign * g[(r, k)]));
        if yhi[r].is_finite_value() {
            a_in.push_row(row(T::one()))?;
            b_in.push(yhi[r] - outputs.f[r]);
        }
        if ylo[r].is_finite_value() {
            a_in.push_row(row(-T::one()))?;
            b_in.push(outputs.f[r] - ylo[r]);
        }
    }
    Ok(AgentQpBlock {
        p,
        c,
        constant,
        a_eq: SparseRows::empty(nu),
        b_eq: DVector::zeros(0),
        a_in,
        b_in: DVector::from_vec(b_in),
        lo,
        hi,
        u_offset: 0,
        g_range: None,
        m,
        q,
        t_f,
        outputs: Outputs::Affine(outputs),
    })
}

/// Straight line from the current output to the final reference over the horizon.
pub fn straight_line_anchor<T: Scalar>(y_now: &DVector<T>, target: &DVector<T>, t_f: usize) -> DVector<T> {
    let q = y_now.len();
    let denom = T::of_usize(t_f.saturating_sub(1).max(1));
    DVector::from_fn(q * t_f, |i, _| {
        let s = T::of_usize(i / q) / denom;
        y_now[i % q] * (T::one() - s) + target[i % q] * s
    })
}

/// Previous plan advanced by one step, last block repeated.
pub fn shifted_anchor<T: Scalar>(mu: &DVector<T>, q: usize) -> DVector<T> {
    let n = mu.len();
    DVector::from_fn(n, |i, _| if i + q < n { mu[i + q] } else { mu[i] })
}

/// Collision half-spaces for every pair `i < j` and every horizon block, linearized
/// at the anchor positions. `step` in each constraint is the 0-based block index.
///
/// When two anchors coincide the direction of the previous block is reused, or the
/// first coordinate axis at the first block. With `keep_side`, a direction
/// pointing against the previous block's (anchors that pass through each other)
/// is replaced by the previous one, so each pair stays on one side of a plane.
pub fn linearize_collisions<T: Scalar>(
    tasks: &[&TrackingTask<T>],
    anchors: &[DVector<T>],
    d_safe: T,
    phi: &PairRisk,
    keep_side: bool,
) -> Result<Vec<CollisionConstraint<T>>> {
    if anchors.len() != tasks.len() {
        return Err(dim_err("anchor count", tasks.len(), anchors.len()));
    }
    let Some(first) = tasks.first() else {
        return Ok(Vec::new());
    };
    let (t_f, pd) = (first.t_f(), first.pos_dim());
    for (t, a) in tasks.iter().zip(anchors) {
        if t.t_f() != t_f || t.pos_dim() != pd {
            return Err(dim_err("agent horizon/position dimension", format!("({t_f}, {pd})"), format!("({}, {})", t.t_f(), t.pos_dim())));
        }
        if a.len() != t.q() * t_f {
            return Err(dim_err("anchor trajectory", t.q() * t_f, a.len()));
        }
    }
    phi.validate(tasks.len())?;
    let mut out = Vec::with_capacity(tasks.len() * (tasks.len().saturating_sub(1)) / 2 * t_f);
    for i in 0..tasks.len() {
        for j in i + 1..tasks.len() {
            let mut prev: Option<DVector<T>> = None;
            for tau in 0..t_f {
                let pi = tasks[i].position(&anchors[i], tau);
                let pj = tasks[j].position(&anchors[j], tau);
                let k = match chance::collision_direction(&pi, &pj) {
                    Ok(k) => match &prev {
                        Some(p) if keep_side && p.dot(&k) < T::zero() => p.clone(),
                        _ => k,
                    },
                    Err(Error::DegenerateDirection { .. }) => {
                        debug!("agents {i},{j} block {tau}: coincident anchors, reusing direction");
                        prev.clone().unwrap_or_else(|| {
                            let mut e = DVector::zeros(pd);
                            e[0] = T::one();
                            e
                        })
                    }
                    Err(e) => return Err(e),
                };
                let sig_i = tasks[i].position_covariance(tau);
                let sig_j = tasks[j].position_covariance(tau);
                let con = chance::relax_collision_along(k.clone(), &sig_i, &sig_j, d_safe, T::of(phi.get(i, j)))?.with_indices(i, j, tau);
                prev = Some(k);
                out.push(con);
            }
        }
    }
    Ok(out)
}

/// Planned trajectory of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct AgentPlan<T: Scalar> {
    /// Behavior coefficients; empty for the model-based baseline.
    pub g: DVector<T>,
    pub u: DVector<T>,
    pub mu: DVector<T>,
    /// First input block clipped to the input box.
    pub first_input: DVector<T>,
}

/// Result of one coupled solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct StepSolution<T: Scalar> {
    pub plans: Vec<AgentPlan<T>>,
    pub status: Status,
    /// Collision constraints were softened.
    pub soft: bool,
    /// Sum of the agents' tracking costs `(μ - r)ᵀQ(μ - r) + uᵀRu`.
    pub objective: T,
    /// Full program objective including regularization and slack penalties.
    pub qp_objective: T,
    pub constraints: Vec<CollisionConstraint<T>>,
    /// `kᵀ(p_i - p_j) - d_safe - η` at the returned plan, per constraint.
    pub margins: Vec<T>,
    /// Indices of constraints with margin at most the activity tolerance.
    pub active: Vec<usize>,
    pub iterations: usize,
    pub qp_solves: usize,
    pub residuals: KktResiduals<T>,
    pub polished: bool,
    pub solve_seconds: f64,
}

impl<T: Scalar> StepSolution<T> {
    pub fn min_margin(&self) -> Option<T> {
        self.margins.iter().copied().reduce(|a, b| a.min(b))
    }
}

fn activity_tol(s: &Settings) -> f64 {
    (10.0 * s.eps_prim).max(1e-7)
}

struct Stacked<T: Scalar> {
    qp: QpProblem<T>,
    offsets: Vec<usize>,
    constant: T,
    /// Largest tracking coefficient, at least one.
    scale: T,
}

/// Solves the stacked program. A run that ends at the iteration limit is repeated
/// with the objective divided by `scale`; the returned factor undoes that division.
fn solve_stacked<T: Scalar>(st: &Stacked<T>, settings: &qp::Settings) -> Result<(qp::QpSolution<T>, T)> {
    let sol = qp::solve(&st.qp, settings, None)?;
    if sol.status != Status::MaxIters || st.scale <= T::one() {
        return Ok((sol, T::one()));
    }
    let mut normalized = st.qp.clone();
    normalized.p /= st.scale;
    normalized.c /= st.scale;
    let retry = qp::solve(&normalized, settings, None)?;
    debug!("normalized retry: status {} its {}", retry.status, retry.iterations);
    if retry.status == Status::Optimal {
        Ok((retry, st.scale))
    } else {
        Ok((sol, T::one()))
    }
}

fn collision_row<T: Scalar>(
    con: &CollisionConstraint<T>,
    blocks: &[AgentQpBlock<T>],
    offsets: &[usize],
    tasks: &[&TrackingTask<T>],
) -> (Vec<(usize, T)>, T) {
    // kᵀ(p_i - p_j) ≥ d + η written as  -kᵀ p_i(z) + kᵀ p_j(z) ≤ -(d + η) + kᵀ(const_i - const_j).
    let mut coefs = Vec::new();
    let mut rhs = -con.rhs();
    let mut pairs = [(con.i, -T::one()), (con.j, T::one())];
    pairs.sort_by_key(|p| offsets[p.0]);
    for (agent, sign) in pairs {
        let sel = tasks[agent].pos_extract();
        let q = blocks[agent].q;
        let mut acc = vec![T::zero(); blocks[agent].dim()];
        let mut used = vec![false; acc.len()];
        for r in 0..sel.nrows() {
            let kr = con.k[r] * sign;
            if kr == T::zero() {
                continue;
            }
            let col = (0..q).find(|&c| sel[(r, c)] == T::one()).unwrap_or(0);
            let (terms, constant) = blocks[agent].output_terms(con.step * q + col);
            for (k, v) in terms {
                acc[k] += kr * v;
                used[k] = true;
            }
            rhs -= kr * constant;
        }
        coefs.extend((0..acc.len()).filter(|&k| used[k]).map(|k| (offsets[agent] + k, acc[k])));
    }
    (coefs, rhs)
}

fn stack<T: Scalar>(blocks: &[AgentQpBlock<T>], rows: &[(Vec<(usize, T)>, T)], soft: bool, slack_weight: T) -> Result<Stacked<T>> {
    let mut offsets = Vec::with_capacity(blocks.len());
    let mut n = 0;
    for b in blocks {
        offsets.push(n);
        n += b.dim();
    }
    let n_slack = if soft { rows.len() } else { 0 };
    let dim = n + n_slack;
    let mut p = DMatrix::zeros(dim, dim);
    let mut c = DVector::zeros(dim);
    let mut lo = DVector::from_element(dim, T::neg_infinity());
    let mut hi = DVector::from_element(dim, T::infinity());
    let mut a_eq = SparseRows::empty(dim);
    let mut a_in = SparseRows::empty(dim);
    let mut b_eq = Vec::new();
    let mut b_in = Vec::new();
    let mut constant = T::zero();
    for (b, &off) in blocks.iter().zip(&offsets) {
        let d = b.dim();
        p.view_mut((off, off), (d, d)).copy_from(&b.p);
        c.rows_mut(off, d).copy_from(&b.c);
        lo.rows_mut(off, d).copy_from(&b.lo);
        hi.rows_mut(off, d).copy_from(&b.hi);
        for r in 0..b.a_eq.nrows() {
            let (cols, vals) = b.a_eq.row(r);
            a_eq.push_row(cols.iter().zip(vals).map(|(&k, &v)| (off + k, v)))?;
        }
        for r in 0..b.a_in.nrows() {
            let (cols, vals) = b.a_in.row(r);
            a_in.push_row(cols.iter().zip(vals).map(|(&k, &v)| (off + k, v)))?;
        }
        b_eq.extend(b.b_eq.iter().copied());
        b_in.extend(b.b_in.iter().copied());
        constant += b.constant;
    }
    let scale = p.amax().max(c.amax()).max(T::one());
    for (idx, (coefs, rhs)) in rows.iter().enumerate() {
        let mut row = coefs.clone();
        if soft {
            let s = n + idx;
            row.push((s, -T::one()));
            c[s] = slack_weight;
            lo[s] = T::zero();
        }
        a_in.push_row(row)?;
        b_in.push(*rhs);
    }
    let qp = QpProblem::unconstrained(p, c)
        .with_equalities(a_eq, DVector::from_vec(b_eq))
        .with_inequalities(a_in, DVector::from_vec(b_in))
        .with_bounds(lo, hi);
    Ok(Stacked { qp, offsets, constant, scale })
}

struct Attempt<T: Scalar> {
    sol: qp::QpSolution<T>,
    offsets: Vec<usize>,
    constant: T,
    scale: T,
    soft: bool,
}

fn solve_with_collisions<T: Scalar>(
    blocks: &[AgentQpBlock<T>],
    tasks: &[&TrackingTask<T>],
    cons: &[CollisionConstraint<T>],
    cfg: &StepConfig,
) -> Result<Attempt<T>> {
    let offsets: Vec<usize> = blocks
        .iter()
        .scan(0, |acc, b| {
            let o = *acc;
            *acc += b.dim();
            Some(o)
        })
        .collect();
    let rows: Vec<_> = cons.iter().map(|con| collision_row(con, blocks, &offsets, tasks)).collect();
    // Rows with no free coefficients are fixed by the current window.
    let constant_violated = rows.iter().any(|(c, rhs)| c.is_empty() && *rhs < -T::of(cfg.solver.eps_prim));
    let slack_weight = T::of(cfg.slack_weight);
    let mut soft = cfg.soft_collisions && !rows.is_empty();
    if !soft && constant_violated {
        debug!("collision rows fixed by the window are violated; solving softened problem");
        soft = true;
    }
    loop {
        let kept: Vec<_> = if soft { rows.clone() } else { rows.iter().filter(|(c, _)| !c.is_empty()).cloned().collect() };
        let st = stack(blocks, &kept, soft, slack_weight)?;
        let (sol, scale) = solve_stacked(&st, &cfg.solver)?;
        debug!("solve: status {} its {} soft {}", sol.status, sol.iterations, soft);
        if sol.status == Status::Optimal {
            return Ok(Attempt { sol, offsets: st.offsets, constant: st.constant, scale, soft });
        }
        if soft || rows.is_empty() {
            return Err(Error::Solver(format!(
                "{} program ended with status {} after {} iterations",
                if soft { "softened" } else { "coupled" },
                sol.status,
                sol.iterations
            )));
        }
        debug!("hard program ended with status {}; retrying with softened collisions", sol.status);
        soft = true;
    }
}

fn tracking_cost<T: Scalar>(task: &TrackingTask<T>, u: &DVector<T>, mu: &DVector<T>) -> T {
    let e = mu - task.reference();
    e.dot(&(task.q_weight() * &e)) + u.dot(&(task.r_weight() * u))
}

/// Solves the coupled program for fixed per-agent blocks, re-linearizing the
/// collision constraints up to `n_scp` times.
fn solve_blocks<T: Scalar>(
    tasks: &[&TrackingTask<T>],
    blocks: &[AgentQpBlock<T>],
    anchors: &[DVector<T>],
    cfg: &StepConfig,
) -> Result<(StepSolution<T>, Vec<DVector<T>>)> {
    cfg.validate(tasks.len())?;
    let start = Instant::now();
    let mut anchors = anchors.to_vec();
    let mut iterations = 0;
    let mut solves = 0;
    loop {
        let cons = linearize_collisions(tasks, &anchors, T::of(cfg.d_safe), &cfg.phi, cfg.keep_side)?;
        let att = solve_with_collisions(blocks, tasks, &cons, cfg)?;
        solves += 1;
        iterations += att.sol.iterations;
        let zs: Vec<DVector<T>> = blocks.iter().zip(&att.offsets).map(|(b, &o)| att.sol.z.rows(o, b.dim()).clone_owned()).collect();
        let mus: Vec<DVector<T>> = blocks.iter().zip(&zs).map(|(b, z)| b.outputs(z)).collect();
        let change = tasks
            .iter()
            .zip(mus.iter().zip(&anchors))
            .flat_map(|(t, (mu, a))| (0..t.t_f()).map(move |tau| (t.position(mu, tau) - t.position(a, tau)).amax()))
            .fold(T::zero(), |a, b| a.max(b));
        if solves < cfg.n_scp.max(1) && change >= T::of(cfg.scp_tol) && tasks.len() > 1 {
            anchors = mus;
            continue;
        }

        let mut objective = T::zero();
        let mut plans = Vec::with_capacity(blocks.len());
        for ((task, b), (z, mu)) in tasks.iter().zip(blocks).zip(zs.iter().zip(&mus)) {
            let u = b.inputs(z);
            objective += tracking_cost(task, &u, mu);
            let first = u.rows(0, task.m()).clone_owned();
            let first_input = match task.input_bounds() {
                Some(bx) => bx.clamp(&first),
                None => first,
            };
            let g = match b.g_range {
                Some((o, len)) => z.rows(o, len).clone_owned(),
                None => DVector::zeros(0),
            };
            plans.push(AgentPlan { g, u, mu: mu.clone(), first_input });
        }
        let margins: Vec<T> = cons
            .iter()
            .map(|c| {
                let pi = tasks[c.i].position(&plans[c.i].mu, c.step);
                let pj = tasks[c.j].position(&plans[c.j].mu, c.step);
                c.margin(&pi, &pj)
            })
            .collect();
        let tol = T::of(activity_tol(&cfg.solver));
        let active = margins.iter().enumerate().filter(|(_, m)| **m <= tol).map(|(k, _)| k).collect();
        let sol = StepSolution {
            plans,
            status: att.sol.status,
            soft: att.soft,
            objective,
            qp_objective: att.sol.objective * att.scale + att.constant,
            constraints: cons,
            margins,
            active,
            iterations,
            qp_solves: solves,
            residuals: att.sol.residuals,
            polished: att.sol.polished,
            solve_seconds: start.elapsed().as_secs_f64(),
        };
        return Ok((sol, zs));
    }
}

/// One receding-horizon step of the coupled data-driven controller.
///
/// `anchors[i]` is the output trajectory (length `q·T_f`) at which the collision
/// directions are frozen.
pub fn solve_step<T: Scalar>(
    specs: &[AgentSpec<T>],
    windows: &[AgentWindow<T>],
    anchors: &[DVector<T>],
    cfg: &StepConfig,
) -> Result<StepSolution<T>> {
    if windows.len() != specs.len() {
        return Err(dim_err("window count", specs.len(), windows.len()));
    }
    let mut blocks = Vec::with_capacity(specs.len());
    for (idx, (spec, w)) in specs.iter().zip(windows).enumerate() {
        let block = match cfg.formulation {
            Formulation::Behavior => assemble_agent_qp_blocks(spec, w, cfg.regularization.as_ref())?,
            Formulation::Predictor => {
                let pred = spec.predictor().ok_or_else(|| {
                    Error::InsufficientData(format!(
                        "agent {idx}: data do not determine a unique output predictor; use the behavior formulation"
                    ))
                })?;
                assemble_condensed_block(spec.task(), pred.affine(w)?)?
            }
        };
        blocks.push(block);
    }
    let tasks: Vec<&TrackingTask<T>> = specs.iter().map(|s| s.task()).collect();
    let (mut sol, _) = solve_blocks(&tasks, &blocks, anchors, cfg)?;
    if cfg.formulation == Formulation::Predictor {
        for ((plan, spec), w) in sol.plans.iter_mut().zip(specs).zip(windows) {
            if let Some(pred) = spec.predictor() {
                plan.g = pred.coefficients(w, &plan.u, &plan.mu);
            }
        }
    }
    Ok(sol)
}

/// Model-based plan with predicted states `x(t+1..t+T_f)` per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelStep<T: Scalar> {
    pub solution: StepSolution<T>,
    pub states: Vec<DVector<T>>,
}

/// Same coupled program with outputs predicted by the exact model from `x(t)`.
pub fn model_mpc_step<T: Scalar>(
    models: &[StateSpace<T>],
    states: &[DVector<T>],
    tasks: &[&TrackingTask<T>],
    anchors: &[DVector<T>],
    cfg: &StepConfig,
) -> Result<ModelStep<T>> {
    if models.len() != tasks.len() || states.len() != tasks.len() {
        return Err(dim_err("model/state/task count", tasks.len(), format!("{}/{}", models.len(), states.len())));
    }
    let mut blocks = Vec::with_capacity(tasks.len());
    for ((model, x), task) in models.iter().zip(states).zip(tasks) {
        if model.m() != task.m() || model.q() != task.q() {
            return Err(dim_err(
                "model vs task (m, q)",
                format!("({}, {})", task.m(), task.q()),
                format!("({}, {})", model.m(), model.q()),
            ));
        }
        blocks.push(assemble_condensed_block(task, output_prediction(model, x, task.t_f())?)?);
    }
    let (solution, _) = solve_blocks(tasks, &blocks, anchors, cfg)?;
    let predicted = models
        .iter()
        .zip(states)
        .zip(&solution.plans)
        .map(|((model, x), plan)| {
            let (g, h) = state_prediction_matrices(model, plan.u.len() / model.m());
            g * x + h * &plan.u
        })
        .collect();
    Ok(ModelStep { solution, states: predicted })
}
