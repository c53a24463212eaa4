//! Compressed sparse row storage for constraint matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};
use crate::scalar::Scalar;

/// Row-compressed sparse matrix. Duplicate column entries within a row add up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct SparseRows<T: Scalar> {
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Scalar> SparseRows<T> {
    /// Matrix with no rows and `ncols` columns.
    pub fn empty(ncols: usize) -> Self {
        Self { ncols, row_ptr: vec![0], cols: Vec::new(), vals: Vec::new() }
    }

    /// Keeps every nonzero of `m`.
    pub fn from_dense(m: &DMatrix<T>) -> Self {
        let mut out = Self::empty(m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let v = m[(r, c)];
                if v != T::zero() {
                    out.cols.push(c);
                    out.vals.push(v);
                }
            }
            out.row_ptr.push(out.cols.len());
        }
        out
    }

    /// Appends one row given as `(column, value)` pairs.
    pub fn push_row<I: IntoIterator<Item = (usize, T)>>(&mut self, entries: I) -> Result<()> {
        let start = self.cols.len();
        for (c, v) in entries {
            if c >= self.ncols {
                self.cols.truncate(start);
                self.vals.truncate(start);
                return Err(dim_err("sparse row column", format!("< {}", self.ncols), c));
            }
            self.cols.push(c);
            self.vals.push(v);
        }
        self.row_ptr.push(self.cols.len());
        Ok(())
    }

    /// Appends all rows of `other`.
    pub fn append(&mut self, other: &SparseRows<T>) -> Result<()> {
        if other.ncols != self.ncols {
            return Err(dim_err("sparse append columns", self.ncols, other.ncols));
        }
        let base = self.cols.len();
        self.cols.extend_from_slice(&other.cols);
        self.vals.extend_from_slice(&other.vals);
        self.row_ptr.extend(other.row_ptr[1..].iter().map(|p| p + base));
        Ok(())
    }

    pub fn nrows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[T]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn row_dot(&self, r: usize, x: &DVector<T>) -> T {
        let (c, v) = self.row(r);
        c.iter().zip(v).fold(T::zero(), |acc, (&j, &a)| acc + a * x[j])
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols);
        for r in 0..self.nrows() {
            let (c, v) = self.row(r);
            for (&j, &a) in c.iter().zip(v) {
                m[(r, j)] += a;
            }
        }
        m
    }

    /// `A x`.
    pub fn mul_vec(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_fn(self.nrows(), |r, _| self.row_dot(r, x))
    }

    /// `out += alpha Aᵀ y`.
    pub fn tr_mul_add(&self, alpha: T, y: &DVector<T>, out: &mut DVector<T>) {
        for r in 0..self.nrows() {
            let yr = alpha * y[r];
            if yr == T::zero() {
                continue;
            }
            let (c, v) = self.row(r);
            for (&j, &a) in c.iter().zip(v) {
                out[j] += a * yr;
            }
        }
    }

    /// `Aᵀ y`.
    pub fn tr_mul_vec(&self, y: &DVector<T>) -> DVector<T> {
        let mut out = DVector::zeros(self.ncols);
        self.tr_mul_add(T::one(), y, &mut out);
        out
    }

    /// `A ← diag(left) A diag(right)`.
    pub fn scale(&mut self, left: &DVector<T>, right: &DVector<T>) {
        for r in 0..self.nrows() {
            let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
            for k in a..b {
                self.vals[k] = left[r] * self.vals[k] * right[self.cols[k]];
            }
        }
    }

    pub fn row_norms_inf(&self) -> DVector<T> {
        DVector::from_fn(self.nrows(), |r, _| self.row(r).1.iter().fold(T::zero(), |m, v| m.max(v.abs())))
    }

    pub fn col_norms_inf(&self) -> DVector<T> {
        let mut out = DVector::<T>::zeros(self.ncols);
        for (&j, v) in self.cols.iter().zip(&self.vals) {
            out[j] = out[j].max(v.abs());
        }
        out
    }

    /// `out += Aᵀ diag(w) A` for a symmetric `out`. The lower triangle is
    /// accumulated and then copied over the upper one; rows with ascending
    /// columns take a branch-free path.
    pub fn add_weighted_gram(&self, w: &DVector<T>, out: &mut DMatrix<T>) {
        let nr = out.nrows();
        let data = out.as_mut_slice();
        for r in 0..self.nrows() {
            let (c, v) = self.row(r);
            let wr = w[r];
            let sorted = c.windows(2).all(|p| p[0] < p[1]);
            for (q, (&j, &aj)) in c.iter().zip(v).enumerate() {
                let s = wr * aj;
                let col = &mut data[j * nr..(j + 1) * nr];
                if sorted {
                    for (&i, &ai) in c[q..].iter().zip(&v[q..]) {
                        col[i] += s * ai;
                    }
                } else {
                    for (&i, &ai) in c.iter().zip(v) {
                        if i >= j {
                            col[i] += s * ai;
                        }
                    }
                }
            }
        }
        for j in 0..nr {
            for i in j + 1..nr {
                data[i * nr + j] = data[j * nr + i];
            }
        }
    }
}
