use nalgebra::{DMatrix, DVector};

use crate::behavior::{BehaviorMatrix, DEFAULT_RANK_TOL};
use crate::error::{dim_err, Error, Result};
use crate::linalg;
use crate::linsys::StateSpace;
use crate::scalar::Scalar;

use super::task::AgentWindow;

/// Entries of the input map below this fraction of its largest entry are set to zero.
pub const ROUND_OFF_FLOOR: f64 = 1e-10;

/// Output trajectory affine in the planned inputs: `μ = f + G u`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineOutputs<T: Scalar> {
    pub f: DVector<T>,
    pub g: DMatrix<T>,
}

impl<T: Scalar> AffineOutputs<T> {
    pub fn eval(&self, u: &DVector<T>) -> DVector<T> {
        &self.f + &self.g * u
    }
}

/// Unique future-output map implied by a trajectory matrix whose input rows
/// `[U_p; U_f]` have full row rank and whose past-and-input rows `Z = [U_p; Y_p; U_f]`
/// already carry the rank of `W`.
///
/// Then `μ = Y_f Z⁺ [u_p; y_p; u]` for every `g` with `W g = [u_p; y_p; u; μ]`, so
/// eliminating `g` from the coupled program is exact. `Z` itself may be row-rank
/// deficient when `q·T_p` exceeds the plant order.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor<T: Scalar> {
    window_map: DMatrix<T>,
    input_map: DMatrix<T>,
    w_pinv: DMatrix<T>,
}

impl<T: Scalar> LinearPredictor<T> {
    pub fn from_behavior(b: &BehaviorMatrix<T>) -> Result<Self> {
        let [_, _, off_uf, off_yf] = b.partition_offsets();
        let tol = T::of(DEFAULT_RANK_TOL);
        let (up, uf) = (b.m() * b.t_p(), off_yf - off_uf);
        let mut inputs = DMatrix::zeros(up + uf, b.n_cols());
        inputs.rows_mut(0, up).copy_from(&b.w().rows(0, up));
        inputs.rows_mut(up, uf).copy_from(&b.w().rows(off_uf, uf));
        let rank_u = linalg::numerical_rank(&inputs, tol);
        if rank_u < inputs.nrows() {
            return Err(Error::InsufficientData(format!(
                "[U_p; U_f] has rank {rank_u} < {} rows; the data do not cover every input sequence",
                inputs.nrows()
            )));
        }
        let z = b.w().rows(0, off_yf).clone_owned();
        let rank_z = linalg::numerical_rank(&z, tol);
        let rank_w = linalg::numerical_rank(b.w(), tol);
        if rank_w != rank_z {
            return Err(Error::InsufficientData(format!(
                "rank(W) = {rank_w} exceeds rank([U_p; Y_p; U_f]) = {rank_z}; the data do not fix a unique predictor"
            )));
        }
        let k = b.y_f() * linalg::pseudo_inverse(&z, tol);
        let wl = (b.m() + b.q()) * b.t_p();
        let mut input_map = k.columns(wl, k.ncols() - wl).clone_owned();
        // Structural zeros (causality, zero feedthrough) come out at round-off level.
        let floor = input_map.amax() * T::of(ROUND_OFF_FLOOR);
        input_map.iter_mut().filter(|v| v.abs() <= floor).for_each(|v| *v = T::zero());
        Ok(Self { window_map: k.columns(0, wl).clone_owned(), input_map, w_pinv: linalg::pseudo_inverse(b.w(), tol) })
    }

    /// `(f, G)` for the given window.
    pub fn affine(&self, window: &AgentWindow<T>) -> Result<AffineOutputs<T>> {
        let w = window.stacked();
        if w.len() != self.window_map.ncols() {
            return Err(dim_err("predictor window", self.window_map.ncols(), w.len()));
        }
        Ok(AffineOutputs { f: &self.window_map * w, g: self.input_map.clone() })
    }

    pub fn predict(&self, window: &AgentWindow<T>, u: &DVector<T>) -> Result<DVector<T>> {
        if u.len() != self.input_map.ncols() {
            return Err(dim_err("predictor inputs", self.input_map.ncols(), u.len()));
        }
        Ok(self.affine(window)?.eval(u))
    }

    /// Minimum-norm `g` with `W g = [u_p; y_p; u; μ]`.
    pub fn coefficients(&self, window: &AgentWindow<T>, u: &DVector<T>, mu: &DVector<T>) -> DVector<T> {
        let rhs = linalg::concat(&[&window.u_p, &window.y_p, u, mu]);
        &self.w_pinv * rhs
    }

    pub fn input_map(&self) -> &DMatrix<T> {
        &self.input_map
    }
}

/// State prediction `x(t+1..t+T) = G x(t) + H u(t..t+T-1)`.
pub fn state_prediction_matrices<T: Scalar>(model: &StateSpace<T>, horizon: usize) -> (DMatrix<T>, DMatrix<T>) {
    let (n, m) = (model.n(), model.m());
    let mut g = DMatrix::zeros(n * horizon, n);
    let mut h = DMatrix::zeros(n * horizon, m * horizon);
    // a_pow[k] = A^k.
    let mut a_pow = vec![DMatrix::<T>::identity(n, n)];
    for k in 1..=horizon {
        let next = model.a() * &a_pow[k - 1];
        a_pow.push(next);
    }
    for k in 0..horizon {
        g.view_mut((k * n, 0), (n, n)).copy_from(&a_pow[k + 1]);
        for i in 0..=k {
            let blk = &a_pow[k - i] * model.b();
            h.view_mut((k * n, i * m), (n, m)).copy_from(&blk);
        }
    }
    (g, h)
}

/// Output prediction aligned with the data-driven convention: `μ` stacks
/// `y(t), ..., y(t+T-1)` with `y(k) = C x(k) + D u(k)`.
pub fn output_prediction<T: Scalar>(model: &StateSpace<T>, x_t: &DVector<T>, horizon: usize) -> Result<AffineOutputs<T>> {
    if x_t.len() != model.n() {
        return Err(dim_err("model state", model.n(), x_t.len()));
    }
    let (n, m, q) = (model.n(), model.m(), model.q());
    let mut f = DVector::zeros(q * horizon);
    let mut g = DMatrix::zeros(q * horizon, m * horizon);
    // Column blocks of C A^j B for j = 0..horizon-2.
    let mut markov = Vec::with_capacity(horizon);
    let mut ab = model.b().clone();
    for _ in 0..horizon {
        markov.push(model.c() * &ab);
        ab = model.a() * ab;
    }
    let mut x = x_t.clone();
    for k in 0..horizon {
        f.rows_mut(k * q, q).copy_from(&(model.c() * &x));
        x = model.a() * x;
        g.view_mut((k * q, k * m), (q, m)).copy_from(model.d());
        for i in 0..k {
            g.view_mut((k * q, i * m), (q, m)).copy_from(&markov[k - 1 - i]);
        }
    }
    debug_assert_eq!(x.len(), n);
    Ok(AffineOutputs { f, g })
}
