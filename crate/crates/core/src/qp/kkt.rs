use nalgebra::{DMatrix, DVector};

use crate::linalg::{self, Cholesky};
use crate::scalar::Scalar;

/// Solver for the saddle-point system
///
/// ```text
/// [ H  Gᵀ ] [x]   [r1]
/// [ G  0  ] [y] = [r2]
/// ```
///
/// with `H` symmetric PSD. Factors the quasi-definite perturbation
/// `[H + δI, Gᵀ; G, -δI]` blockwise (`H + δI = LLᵀ`, then the Schur complement
/// `G (H + δI)⁻¹ Gᵀ + δI`) and removes the perturbation by iterative refinement.
pub(super) struct KktSolver<T: Scalar> {
    h: DMatrix<T>,
    g: DMatrix<T>,
    lh: Cholesky<T>,
    w: DMatrix<T>,
    ls: Option<Cholesky<T>>,
}

impl<T: Scalar> KktSolver<T> {
    pub(super) fn new(h: DMatrix<T>, g: DMatrix<T>, delta: T) -> Option<Self> {
        let n = h.nrows();
        let mut hr = h.clone();
        for i in 0..n {
            hr[(i, i)] += delta;
        }
        let lh = Cholesky::new(hr).ok()?;
        let (w, ls) = if g.nrows() == 0 {
            (DMatrix::zeros(n, 0), None)
        } else {
            let w = lh.forward_matrix(&g.transpose());
            let mut s = w.transpose() * &w;
            for i in 0..s.nrows() {
                s[(i, i)] += delta;
            }
            (w, Some(Cholesky::new(s).ok()?))
        };
        Some(Self { h, g, lh, w, ls })
    }

    fn regularized_solve(&self, r1: &DVector<T>, r2: &DVector<T>) -> (DVector<T>, DVector<T>) {
        let mut t = r1.clone();
        self.lh.forward_in_place(&mut t);
        let y = match &self.ls {
            Some(ls) => {
                let mut y = self.w.transpose() * &t - r2;
                ls.solve_in_place(&mut y);
                y
            }
            None => DVector::zeros(0),
        };
        let mut x = if y.is_empty() { t } else { t - &self.w * &y };
        self.lh.backward_in_place(&mut x);
        (x, y)
    }

    /// Solves the exact system with up to `refine` refinement sweeps.
    pub(super) fn solve(&self, r1: &DVector<T>, r2: &DVector<T>, refine: usize) -> (DVector<T>, DVector<T>) {
        let (mut x, mut y) = self.regularized_solve(r1, r2);
        let scale = linalg::vec_norm_inf(r1).max(linalg::vec_norm_inf(r2)).max(T::one());
        let floor = scale * T::machine_epsilon() * T::of(10.0);
        for _ in 0..refine {
            let mut res1 = r1 - &self.h * &x;
            if !y.is_empty() {
                res1 -= self.g.transpose() * &y;
            }
            let res2 = r2 - &self.g * &x;
            if linalg::vec_norm_inf(&res1).max(linalg::vec_norm_inf(&res2)) <= floor {
                break;
            }
            let (dx, dy) = self.regularized_solve(&res1, &res2);
            x += dx;
            y += dy;
        }
        (x, y)
    }
}
