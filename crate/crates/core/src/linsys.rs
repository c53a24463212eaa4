//! Discrete-time linear time-invariant plants, closed-loop data collection and
//! stabilizing output-feedback gains.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Error, Result};
use crate::scalar::Scalar;

/// `x(k+1) = A x(k) + B u(k)`, `y(k) = C x(k) + D u(k)` sampled every `dt` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace<T: Scalar> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    c: DMatrix<T>,
    d: DMatrix<T>,
    dt: T,
}

impl<T: Scalar> StateSpace<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, c: DMatrix<T>, d: DMatrix<T>, dt: T) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(dim_err("StateSpace A", "non-empty square", format!("{}x{}", a.nrows(), a.ncols())));
        }
        let m = b.ncols();
        let q = c.nrows();
        if m == 0 || b.nrows() != n {
            return Err(dim_err("StateSpace B", format!("{n}xm, m>=1"), format!("{}x{}", b.nrows(), b.ncols())));
        }
        if q == 0 || c.ncols() != n {
            return Err(dim_err("StateSpace C", format!("qx{n}, q>=1"), format!("{}x{}", c.nrows(), c.ncols())));
        }
        if d.nrows() != q || d.ncols() != m {
            return Err(dim_err("StateSpace D", format!("{q}x{m}"), format!("{}x{}", d.nrows(), d.ncols())));
        }
        if !(dt > T::zero()) || !dt.is_finite_value() {
            return Err(invalid("dt", format!("sampling time must be positive, got {dt}")));
        }
        Ok(Self { a, b, c, d, dt })
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<T> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<T> {
        &self.d
    }
    pub fn dt(&self) -> T {
        self.dt
    }
    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    /// Output dimension.
    pub fn q(&self) -> usize {
        self.c.nrows()
    }

    pub fn has_feedthrough(&self) -> bool {
        self.d.iter().any(|v| *v != T::zero())
    }

    /// One step of the dynamics. The output is evaluated at the pre-step state.
    pub fn step(&self, x: &DVector<T>, u: &DVector<T>) -> Result<(DVector<T>, DVector<T>)> {
        if x.len() != self.n() {
            return Err(dim_err("step state", self.n(), x.len()));
        }
        if u.len() != self.m() {
            return Err(dim_err("step input", self.m(), u.len()));
        }
        let x_next = &self.a * x + &self.b * u;
        let y = &self.c * x + &self.d * u;
        Ok((x_next, y))
    }

    /// Output `C x + D u` without advancing the state.
    pub fn output(&self, x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
        if x.len() != self.n() {
            return Err(dim_err("output state", self.n(), x.len()));
        }
        if u.len() != self.m() {
            return Err(dim_err("output input", self.m(), u.len()));
        }
        Ok(&self.c * x + &self.d * u)
    }

    /// Open-loop simulation returning the outputs `y(0..len)` and the final state.
    pub fn simulate(&self, x0: &DVector<T>, inputs: &[DVector<T>]) -> Result<(Vec<DVector<T>>, DVector<T>)> {
        let mut x = x0.clone();
        let mut ys = Vec::with_capacity(inputs.len());
        for u in inputs {
            let (xn, y) = self.step(&x, u)?;
            ys.push(y);
            x = xn;
        }
        Ok((ys, x))
    }
}

/// Twelve-state quadrotor hover model linearized at 0.1 s sampling.
///
/// State `[p, ṗ, ω, ω̇]` (position, velocity, attitude, attitude rate), inputs are
/// the four motor thrust deviations from hover in newtons. All states are measured.
pub fn drone_model<T: Scalar>() -> StateSpace<T> {
    #[rustfmt::skip]
    const A: [[f64; 12]; 12] = [
        [1.0, 0.0, 0.0, 0.1, 0.0, 0.0,  0.0,    0.049, 0.0,  0.0,    0.0016, 0.0],
        [0.0, 1.0, 0.0, 0.0, 0.1, 0.0, -0.049,  0.0,   0.0, -0.0016, 0.0,    0.0],
        [0.0, 0.0, 1.0, 0.0, 0.0, 0.1,  0.0,    0.0,   0.0,  0.0,    0.0,    0.0],
        [0.0, 0.0, 0.0, 1.0, 0.0, 0.0,  0.0,    0.981, 0.0,  0.0,    0.049,  0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -0.981,  0.0,   0.0,  0.049,  0.0,    0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 1.0,  0.0,    0.0,   0.0,  0.0,    0.0,    0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0,  1.0,    0.0,   0.0,  0.1,    0.0,    0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0,  0.0,    1.0,   0.0,  0.0,    0.1,    0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0,  0.0,    0.0,   1.0,  0.0,    0.0,    0.1],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0,  0.0,    0.0,   0.0,  1.0,    0.0,    0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0,  0.0,    0.0,   0.0,  0.0,    1.0,    0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0,  0.0,    0.0,   0.0,  0.0,    0.0,    1.0],
    ];
    #[rustfmt::skip]
    const B: [[f64; 4]; 12] = [
        [-2.3e-5,   0.0,      2.3e-5,   0.0],
        [ 0.0,     -2.3e-5,   0.0,      2.3e-5],
        [ 1.75e-2,  1.75e-2,  1.75e-2,  1.75e-2],
        [-9.21e-4,  0.0,      9.21e-4,  0.0],
        [ 0.0,     -9.21e-4,  0.0,      9.21e-4],
        [ 0.35,     0.35,     0.35,     0.35],
        [ 0.0,      2.8e-3,   0.0,     -2.8e-3],
        [-2.8e-3,   0.0,      2.8e-3,   0.0],
        [ 3.7e-3,  -3.7e-3,   3.7e-3,  -3.7e-3],
        [ 0.0,      5.6e-2,   0.0,     -5.6e-2],
        [-5.6e-2,   0.0,      5.6e-2,   0.0],
        [ 7.3e-2,  -7.3e-2,   7.3e-2,  -7.3e-2],
    ];
    let a = DMatrix::from_fn(12, 12, |i, j| T::of(A[i][j]));
    let b = DMatrix::from_fn(12, 4, |i, j| T::of(B[i][j]));
    StateSpace::new(a, b, DMatrix::identity(12, 12), DMatrix::zeros(12, 4), T::of(0.1)).expect("drone model dimensions are consistent")
}

/// Largest eigenvalue modulus of a square matrix (real Schur decomposition).
pub fn spectral_radius<T: Scalar>(m: &DMatrix<T>) -> Result<T> {
    if !m.is_square() {
        return Err(dim_err("spectral_radius", "square matrix", format!("{}x{}", m.nrows(), m.ncols())));
    }
    if m.nrows() == 0 {
        return Ok(T::zero());
    }
    if m.iter().any(|v| !v.is_finite_value()) {
        return Err(invalid("M", "matrix contains non-finite entries"));
    }
    let eig = m.complex_eigenvalues();
    Ok(eig.iter().map(|c| (c.re * c.re + c.im * c.im).sqrt()).fold(T::zero(), |a, b| a.max(b)))
}

/// Static output-feedback gain `u = K y`, shape `m x q`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackGain<T: Scalar>(pub DMatrix<T>);

impl<T: Scalar> FeedbackGain<T> {
    pub fn zeros(model: &StateSpace<T>) -> Self {
        Self(DMatrix::zeros(model.m(), model.q()))
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.0
    }

    fn check(&self, model: &StateSpace<T>) -> Result<()> {
        if self.0.nrows() != model.m() || self.0.ncols() != model.q() {
            return Err(dim_err("feedback gain", format!("{}x{}", model.m(), model.q()), format!("{}x{}", self.0.nrows(), self.0.ncols())));
        }
        Ok(())
    }
}

// (I - K D)^{-1}, the algebraic-loop resolvent of u = K (C x + D u) + r.
fn loop_resolvent<T: Scalar>(model: &StateSpace<T>, k: &FeedbackGain<T>) -> Result<DMatrix<T>> {
    let m = model.m();
    let loop_matrix = DMatrix::<T>::identity(m, m) - &k.0 * model.d();
    loop_matrix.try_inverse().ok_or_else(|| Error::Singular("I - K D is singular (ill-posed feedback loop)".into()))
}

/// State matrix of the loop closed by `u = K y + r`: `A + B (I - K D)^{-1} K C`.
pub fn closed_loop_matrix<T: Scalar>(model: &StateSpace<T>, k: &FeedbackGain<T>) -> Result<DMatrix<T>> {
    k.check(model)?;
    let resolvent = loop_resolvent(model, k)?;
    Ok(model.a() + model.b() * resolvent * &k.0 * model.c())
}

/// True iff the closed loop has spectral radius at most `1 - margin`.
pub fn is_stabilizing<T: Scalar>(model: &StateSpace<T>, k: &FeedbackGain<T>, margin: T) -> Result<bool> {
    if margin < T::zero() || margin > T::one() {
        return Err(invalid("margin", format!("must lie in [0, 1], got {margin}")));
    }
    let acl = closed_loop_matrix(model, k)?;
    Ok(spectral_radius(&acl)? <= T::one() - margin)
}

/// Input/output record of one data-collection experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset<T: Scalar> {
    pub u_d: Vec<DVector<T>>,
    pub y_d: Vec<DVector<T>>,
    pub dt: T,
}

impl<T: Scalar> TrajectoryDataset<T> {
    pub fn new(u_d: Vec<DVector<T>>, y_d: Vec<DVector<T>>, dt: T) -> Result<Self> {
        if u_d.is_empty() {
            return Err(Error::InsufficientData("dataset must contain at least one sample".into()));
        }
        if u_d.len() != y_d.len() {
            return Err(dim_err("dataset length", u_d.len(), y_d.len()));
        }
        let m = u_d[0].len();
        let q = y_d[0].len();
        if m == 0 || q == 0 {
            return Err(invalid("dataset", "zero-dimensional signals"));
        }
        if let Some(bad) = u_d.iter().position(|u| u.len() != m) {
            return Err(dim_err("dataset input sample", m, format!("{} at k={bad}", u_d[bad].len())));
        }
        if let Some(bad) = y_d.iter().position(|y| y.len() != q) {
            return Err(dim_err("dataset output sample", q, format!("{} at k={bad}", y_d[bad].len())));
        }
        if !(dt > T::zero()) {
            return Err(invalid("dt", "sampling time must be positive"));
        }
        Ok(Self { u_d, y_d, dt })
    }

    pub fn len(&self) -> usize {
        self.u_d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_d.is_empty()
    }

    pub fn m(&self) -> usize {
        self.u_d[0].len()
    }

    pub fn q(&self) -> usize {
        self.y_d[0].len()
    }
}

/// Simulates data collection under `u_d(k) = K y_d(k) + u_r(k)`.
///
/// Stability is not enforced here: `K = 0` reproduces plain open-loop injection.
pub fn simulate_closed_loop<T: Scalar>(
    model: &StateSpace<T>,
    k: &FeedbackGain<T>,
    u_r: &[DVector<T>],
    x0: &DVector<T>,
) -> Result<TrajectoryDataset<T>> {
    k.check(model)?;
    if x0.len() != model.n() {
        return Err(dim_err("initial state", model.n(), x0.len()));
    }
    if u_r.is_empty() {
        return Err(Error::InsufficientData("excitation sequence is empty".into()));
    }
    let resolvent = if model.has_feedthrough() { Some(loop_resolvent(model, k)?) } else { None };
    let mut x = x0.clone();
    let mut u_d = Vec::with_capacity(u_r.len());
    let mut y_d = Vec::with_capacity(u_r.len());
    for (step, r) in u_r.iter().enumerate() {
        if r.len() != model.m() {
            return Err(dim_err("excitation sample", model.m(), format!("{} at k={step}", r.len())));
        }
        let cx = model.c() * &x;
        let u = match &resolvent {
            Some(res) => res * (&k.0 * &cx + r),
            None => &k.0 * &cx + r,
        };
        let (xn, y) = model.step(&x, &u)?;
        u_d.push(u);
        y_d.push(y);
        x = xn;
    }
    TrajectoryDataset::new(u_d, y_d, model.dt())
}

/// Uniform excitation on the box `[lo, hi]^m`, reproducible from `(seed, stream)`.
pub fn uniform_excitation<T: Scalar>(m: usize, len: usize, lo: f64, hi: f64, seed: u64, stream: u64) -> Vec<DVector<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..len).map(|_| DVector::from_fn(m, |_, _| T::of(if hi > lo { rng.random_range(lo..hi) } else { lo }))).collect()
}

/// Settings for the Riccati fixed-point iteration used by [`design_stabilizing_gain`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSettings {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for RiccatiSettings {
    fn default() -> Self {
        Self { max_iters: 200_000, tol: 1e-10 }
    }
}

/// Discrete-time LQR by successive substitution on the Riccati recursion, converted
/// to output feedback through a left inverse of `C + D K_x`.
///
/// Stops once the largest entry change of the cost-to-go matrix, relative to its
/// magnitude, drops below `tol`.
pub fn design_stabilizing_gain<T: Scalar>(
    model: &StateSpace<T>,
    state_weight: &DMatrix<T>,
    input_weight: &DMatrix<T>,
    settings: RiccatiSettings,
) -> Result<FeedbackGain<T>> {
    let (n, m) = (model.n(), model.m());
    if state_weight.shape() != (n, n) {
        return Err(dim_err("state weight", format!("{n}x{n}"), format!("{:?}", state_weight.shape())));
    }
    if input_weight.shape() != (m, m) {
        return Err(dim_err("input weight", format!("{m}x{m}"), format!("{:?}", input_weight.shape())));
    }
    let (a, b) = (model.a(), model.b());
    let at = a.transpose();
    let bt = b.transpose();
    let tol = T::of(settings.tol);
    let mut p = state_weight.clone();
    let mut converged = false;
    let mut state_gain = DMatrix::zeros(m, n);
    for _ in 0..settings.max_iters {
        let pb = &p * b;
        let s = input_weight + &bt * &pb;
        let s_inv = s
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .or_else(|| s.try_inverse())
            .ok_or_else(|| Error::GainDesign("R + BᵀPB is singular".into()))?;
        let pa = &p * a;
        state_gain = -(&s_inv * (&bt * &pa));
        let next = state_weight + &at * &pa - (&at * &pb) * &s_inv * (&bt * &pa);
        let next = (&next + next.transpose()) * T::of(0.5);
        if next.iter().any(|v| !v.is_finite_value()) {
            return Err(Error::GainDesign("Riccati iteration diverged".into()));
        }
        let scale = next.amax().max(T::one());
        let change = (&next - &p).amax();
        p = next;
        if change <= tol * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("Riccati iteration hit max_iters={} before reaching tol", settings.max_iters);
    }
    let mapping = model.c() + model.d() * &state_gain;
    let gram = mapping.transpose() * &mapping;
    let left_inv = gram
        .try_inverse()
        .ok_or_else(|| Error::GainDesign("C + D K_x lacks full column rank; states are not recoverable from outputs".into()))?
        * mapping.transpose();
    let gain = FeedbackGain(&state_gain * left_inv);
    let rho = spectral_radius(&closed_loop_matrix(model, &gain)?)?;
    if rho < T::one() {
        Ok(gain)
    } else {
        Err(Error::GainDesign(format!("resulting closed loop has spectral radius {rho}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(a: f64, b: f64, c: f64, d: f64) -> StateSpace<f64> {
        StateSpace::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, c),
            DMatrix::from_element(1, 1, d),
            0.1,
        )
        .unwrap()
    }

    fn gain(k: f64) -> FeedbackGain<f64> {
        FeedbackGain(DMatrix::from_element(1, 1, k))
    }

    #[test]
    fn drone_model_entries() {
        let m = drone_model::<f64>();
        assert_eq!((m.n(), m.m(), m.q()), (12, 4, 12));
        assert_eq!(m.a()[(0, 3)], 0.1);
        assert_eq!(m.b()[(2, 0)], 1.75e-2);
        assert!(m.d().iter().all(|v| *v == 0.0));
        assert_eq!(m.c(), &DMatrix::identity(12, 12));
        assert_eq!(m.dt(), 0.1);
    }

    #[test]
    fn step_examples() {
        let m = drone_model::<f64>();
        let (xn, y) = m.step(&DVector::zeros(12), &DVector::zeros(4)).unwrap();
        assert!(xn.iter().chain(y.iter()).all(|v| *v == 0.0));
        let (xn, _) = m.step(&DVector::zeros(12), &DVector::from_element(4, 1.0)).unwrap();
        assert_relative_eq!(xn[2], 0.07, epsilon = 1e-15);

        let ident =
            StateSpace::new(DMatrix::identity(2, 2), DMatrix::zeros(2, 1), DMatrix::identity(2, 2), DMatrix::zeros(2, 1), 1.0).unwrap();
        let v = DVector::from_vec(vec![3.0, -4.0]);
        let (xn, _) = ident.step(&v, &DVector::from_element(1, 9.0)).unwrap();
        assert_eq!(xn, v);
    }

    #[test]
    fn step_rejects_bad_dimensions() {
        let m = drone_model::<f64>();
        assert!(matches!(m.step(&DVector::zeros(11), &DVector::zeros(4)), Err(Error::Dimension { .. })));
        assert!(matches!(m.step(&DVector::zeros(12), &DVector::zeros(3)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn constructor_validates() {
        let bad = StateSpace::new(DMatrix::<f64>::identity(2, 2), DMatrix::zeros(3, 1), DMatrix::identity(2, 2), DMatrix::zeros(2, 1), 0.1);
        assert!(bad.is_err());
        let bad_dt =
            StateSpace::new(DMatrix::<f64>::identity(1, 1), DMatrix::zeros(1, 1), DMatrix::identity(1, 1), DMatrix::zeros(1, 1), 0.0);
        assert!(matches!(bad_dt, Err(Error::InvalidArgument { name: "dt", .. })));
    }

    #[test]
    fn spectral_radius_examples() {
        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -0.9]));
        assert_relative_eq!(spectral_radius(&diag).unwrap(), 0.9, max_relative = 1e-9);
        for n in 1..6 {
            assert_relative_eq!(spectral_radius(&DMatrix::<f64>::identity(n, n)).unwrap(), 1.0, max_relative = 1e-9);
        }
        // λ² + 0.25 = 0
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.25, 0.0]);
        assert_relative_eq!(spectral_radius(&rot).unwrap(), 0.5, max_relative = 1e-9);
        assert!(spectral_radius(&DMatrix::<f64>::zeros(2, 3)).is_err());
    }

    #[test]
    fn stabilizing_examples() {
        assert!(is_stabilizing(&scalar(0.5, 1.0, 1.0, 0.0), &gain(0.0), 0.1).unwrap());
        assert!(!is_stabilizing(&scalar(2.0, 1.0, 1.0, 0.0), &gain(0.0), 0.01).unwrap());
        assert!(is_stabilizing(&scalar(2.0, 1.0, 1.0, 0.0), &gain(-1.8), 0.5).unwrap());
        let wrong = FeedbackGain(DMatrix::zeros(2, 1));
        assert!(is_stabilizing(&scalar(2.0, 1.0, 1.0, 0.0), &wrong, 0.5).is_err());
    }

    #[test]
    fn closed_loop_examples() {
        let plant = scalar(0.5, 1.0, 1.0, 0.0);
        let u_r = vec![DVector::from_element(1, 1.0), DVector::from_element(1, 0.0)];
        let data = simulate_closed_loop(&plant, &gain(0.0), &u_r, &DVector::zeros(1)).unwrap();
        assert_eq!(data.y_d[0][0], 0.0);
        assert_eq!(data.y_d[1][0], 1.0);
        assert_eq!(data.u_d, u_r);

        let rest = simulate_closed_loop(
            &drone_model(),
            &FeedbackGain(DMatrix::from_element(4, 12, 0.3)),
            &vec![DVector::zeros(4); 20],
            &DVector::zeros(12),
        )
        .unwrap();
        assert!(rest.u_d.iter().chain(rest.y_d.iter()).all(|v| v.iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn feedthrough_loop_is_solved_exactly() {
        // u = K(Cx + D u) + r with K = 0.5, D = 1: u = 2 (0.5 C x + r).
        let plant = scalar(0.5, 1.0, 1.0, 1.0);
        let u_r = vec![DVector::from_element(1, 1.0), DVector::from_element(1, 0.0)];
        let data = simulate_closed_loop(&plant, &gain(0.5), &u_r, &DVector::from_element(1, 2.0)).unwrap();
        for k in 0..2 {
            let u = data.u_d[k][0];
            let y = data.y_d[k][0];
            assert_relative_eq!(u, 0.5 * y + u_r[k][0], epsilon = 1e-14);
        }
        let singular = simulate_closed_loop(&plant, &gain(1.0), &u_r, &DVector::zeros(1));
        assert!(matches!(singular, Err(Error::Singular(_))));
    }

    #[test]
    fn riccati_gain_examples() {
        let deadbeat = scalar(0.0, 1.0, 1.0, 0.0);
        let one = DMatrix::from_element(1, 1, 1.0);
        let k = design_stabilizing_gain(&deadbeat, &one, &one, RiccatiSettings::default()).unwrap();
        let rho = spectral_radius(&closed_loop_matrix(&deadbeat, &k).unwrap()).unwrap();
        assert!(rho <= 1.0);

        // Scalar A=2, B=1, Q=R=1: P = 2 + sqrt(5), K = -2P/(1+P).
        let unstable = scalar(2.0, 1.0, 1.0, 0.0);
        let k = design_stabilizing_gain(&unstable, &one, &one, RiccatiSettings::default()).unwrap();
        let p = 2.0 + 5f64.sqrt();
        assert_relative_eq!(k.0[(0, 0)], -2.0 * p / (1.0 + p), epsilon = 1e-9);
        assert!((2.0 + k.0[(0, 0)]).abs() < 1.0);

        let drone = drone_model::<f64>();
        let k = design_stabilizing_gain(&drone, &DMatrix::identity(12, 12), &DMatrix::identity(4, 4), RiccatiSettings::default()).unwrap();
        assert!(is_stabilizing(&drone, &k, 0.0).unwrap());
        assert!(spectral_radius(&closed_loop_matrix(&drone, &k).unwrap()).unwrap() < 1.0);
    }

    #[test]
    fn excitation_is_reproducible_and_bounded() {
        let a = uniform_excitation::<f64>(4, 50, -0.01, 0.01, 7, 3);
        let b = uniform_excitation::<f64>(4, 50, -0.01, 0.01, 7, 3);
        let c = uniform_excitation::<f64>(4, 50, -0.01, 0.01, 7, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|u| u.iter().all(|v| v.abs() <= 0.01)));
    }

    #[test]
    fn works_in_single_precision() {
        let m = drone_model::<f32>();
        let (xn, _) = m.step(&DVector::zeros(12), &DVector::from_element(4, 1.0)).unwrap();
        assert!((xn[2] - 0.07).abs() < 1e-6);
    }
}
