//! Dense linear-algebra kernels shared by the solver and the data-driven predictor.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::scalar::Scalar;

const BLOCK: usize = 64;

/// Lower Cholesky factor `L` with `A = L Lᵀ`, stored column-major.
#[derive(Debug, Clone)]
pub struct Cholesky<T: Scalar> {
    l: DMatrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Factors a symmetric positive-definite matrix. Only the lower triangle is read.
    pub fn new(mut a: DMatrix<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(dim_err("cholesky", "square matrix", format!("{}x{}", a.nrows(), a.ncols())));
        }
        let n = a.nrows();
        let mut k = 0;
        while k < n {
            let kb = BLOCK.min(n - k);
            factor_diagonal_block(&mut a, k, kb)?;
            let rest = n - k - kb;
            if rest > 0 {
                solve_panel(&mut a, k, kb);
                let panel = a.view((k + kb, k), (rest, kb)).clone_owned();
                // Lower-triangular trailing update, one block column at a time.
                let mut j = 0;
                while j < rest {
                    let jb = BLOCK.min(rest - j);
                    let lhs = panel.rows(j, rest - j);
                    let rhs = panel.rows(j, jb).transpose();
                    let mut target = a.view_mut((k + kb + j, k + kb + j), (rest - j, jb));
                    target.gemm(-T::one(), &lhs, &rhs, T::one());
                    j += jb;
                }
            }
            k += kb;
        }
        for j in 0..n {
            for i in 0..j {
                a[(i, j)] = T::zero();
            }
        }
        Ok(Self { l: a })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn l(&self) -> &DMatrix<T> {
        &self.l
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut DVector<T>) {
        self.forward_in_place(b);
        self.backward_in_place(b);
    }

    /// Solves `L x = b` in place.
    pub fn forward_in_place(&self, b: &mut DVector<T>) {
        let n = self.dim();
        let l = self.l.as_slice();
        let x = b.as_mut_slice();
        for j in 0..n {
            let col = &l[j * n..(j + 1) * n];
            let xj = x[j] / col[j];
            x[j] = xj;
            for i in j + 1..n {
                x[i] -= col[i] * xj;
            }
        }
    }

    /// Solves `Lᵀ x = b` in place.
    pub fn backward_in_place(&self, b: &mut DVector<T>) {
        let n = self.dim();
        let l = self.l.as_slice();
        let x = b.as_mut_slice();
        for j in (0..n).rev() {
            let col = &l[j * n..(j + 1) * n];
            let mut s = x[j];
            for i in j + 1..n {
                s -= col[i] * x[i];
            }
            x[j] = s / col[j];
        }
    }

    pub fn solve(&self, b: &DVector<T>) -> DVector<T> {
        let mut x = b.clone();
        self.solve_in_place(&mut x);
        x
    }

    /// Solves `A X = B` column by column.
    pub fn solve_matrix(&self, b: &DMatrix<T>) -> DMatrix<T> {
        let mut out = b.clone();
        for mut col in out.column_iter_mut() {
            let mut v = DVector::from_column_slice(col.as_slice());
            self.solve_in_place(&mut v);
            col.copy_from(&v);
        }
        out
    }

    /// Solves `L X = B` (forward substitution only).
    pub fn forward_matrix(&self, b: &DMatrix<T>) -> DMatrix<T> {
        let n = self.dim();
        let l = self.l.as_slice();
        let mut out = b.clone();
        for mut col in out.column_iter_mut() {
            for j in 0..n {
                let lc = &l[j * n..(j + 1) * n];
                let xj = col[j] / lc[j];
                col[j] = xj;
                for i in j + 1..n {
                    col[i] -= lc[i] * xj;
                }
            }
        }
        out
    }
}

fn factor_diagonal_block<T: Scalar>(a: &mut DMatrix<T>, k: usize, kb: usize) -> Result<()> {
    for j in k..k + kb {
        let mut d = a[(j, j)];
        for p in k..j {
            let v = a[(j, p)];
            d -= v * v;
        }
        if !(d > T::zero()) || !d.is_finite_value() {
            return Err(Error::Singular(format!("cholesky pivot {j} is not positive ({})", d.to_f64_lossy())));
        }
        let djj = d.sqrt();
        a[(j, j)] = djj;
        for i in j + 1..k + kb {
            let mut s = a[(i, j)];
            for p in k..j {
                s -= a[(i, p)] * a[(j, p)];
            }
            a[(i, j)] = s / djj;
        }
    }
    Ok(())
}

// Panel rows below the diagonal block: X Lkkᵀ = A  =>  X = A Lkk^{-T}.
fn solve_panel<T: Scalar>(a: &mut DMatrix<T>, k: usize, kb: usize) {
    let n = a.nrows();
    for j in k..k + kb {
        for p in k..j {
            let ljp = a[(j, p)];
            if ljp != T::zero() {
                for i in k + kb..n {
                    let v = a[(i, p)];
                    a[(i, j)] -= v * ljp;
                }
            }
        }
        let djj = a[(j, j)];
        for i in k + kb..n {
            a[(i, j)] /= djj;
        }
    }
}

/// Singular values in non-increasing order.
pub fn singular_values<T: Scalar>(m: &DMatrix<T>) -> Vec<T> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<T> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    s
}

/// Numerical rank: number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank<T: Scalar>(m: &DMatrix<T>, rel_tol: T) -> usize {
    let s = singular_values(m);
    match s.first() {
        None => 0,
        Some(&smax) if smax == T::zero() => 0,
        Some(&smax) => s.iter().filter(|&&v| v > rel_tol * smax).count(),
    }
}

/// Spectral norm (largest singular value).
pub fn norm_2<T: Scalar>(m: &DMatrix<T>) -> T {
    singular_values(m).first().copied().unwrap_or_else(T::zero)
}

/// Induced infinity norm (maximum absolute row sum).
pub fn norm_inf<T: Scalar>(m: &DMatrix<T>) -> T {
    m.row_iter().map(|r| r.iter().fold(T::zero(), |acc, v| acc + v.abs())).fold(T::zero(), |a, b| a.max(b))
}

pub fn vec_norm_inf<T: Scalar>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |a, x| a.max(x.abs()))
}

/// Moore-Penrose pseudo-inverse with a relative singular-value cutoff.
pub fn pseudo_inverse<T: Scalar>(m: &DMatrix<T>, rel_tol: T) -> DMatrix<T> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(T::zero(), |a, &b| a.max(b));
    let cutoff = rel_tol * smax;
    let u = svd.u.expect("u computed");
    let v_t = svd.v_t.expect("v_t computed");
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > T::zero() {
            let vk = v_t.row(k).transpose();
            let uk = u.column(k);
            out.ger(T::one() / s, &vk, &uk, T::one());
        }
    }
    out
}

/// Minimum-norm least-squares solution of `m x ≈ b`.
pub fn least_squares<T: Scalar>(m: &DMatrix<T>, b: &DVector<T>, rel_tol: T) -> Result<DVector<T>> {
    if m.nrows() != b.len() {
        return Err(dim_err("least_squares", m.nrows(), b.len()));
    }
    Ok(pseudo_inverse(m, rel_tol) * b)
}

/// Block-diagonal assembly of square or rectangular blocks.
pub fn block_diag<T: Scalar>(blocks: &[DMatrix<T>]) -> DMatrix<T> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// `I_reps ⊗ block`.
pub fn repeat_diag<T: Scalar>(block: &DMatrix<T>, reps: usize) -> DMatrix<T> {
    block_diag(&vec![block.clone(); reps])
}

/// Stacks vectors end to end.
pub fn concat<T: Scalar>(parts: &[&DVector<T>]) -> DVector<T> {
    let n = parts.iter().map(|p| p.len()).sum();
    let mut out = DVector::zeros(n);
    let mut o = 0;
    for p in parts {
        out.rows_mut(o, p.len()).copy_from(p);
        o += p.len();
    }
    out
}

pub fn is_symmetric<T: Scalar>(m: &DMatrix<T>, tol: T) -> bool {
    if !m.is_square() {
        return false;
    }
    let n = m.nrows();
    (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 {
        return T::zero();
    }
    let sym = (m + m.transpose()) * T::of(0.5);
    sym.symmetric_eigenvalues().iter().fold(T::infinity(), |a, &b| a.min(b))
}
