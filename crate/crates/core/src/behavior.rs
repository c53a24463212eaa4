//! Generalized Hankel matrices, persistency of excitation and the partitioned
//! trajectory matrix `W = [U_p; Y_p; U_f; Y_f]` learned from a dataset.

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, invalid, Error, Result};
use crate::linalg;
use crate::linsys::{StateSpace, TrajectoryDataset};
use crate::scalar::Scalar;

/// Relative singular-value threshold used for every rank decision on data matrices.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// Depth-`depth` block Hankel matrix: column `j` stacks `seq[j], ..., seq[j + depth - 1]`.
pub fn hankel<T: Scalar>(seq: &[DVector<T>], depth: usize) -> Result<DMatrix<T>> {
    if depth == 0 {
        return Err(invalid("L", "Hankel depth must be at least 1"));
    }
    if seq.len() < depth {
        return Err(Error::InsufficientData(format!("sequence of length {} is shorter than Hankel depth {depth}", seq.len())));
    }
    let d = seq[0].len();
    if let Some(bad) = seq.iter().position(|v| v.len() != d) {
        return Err(dim_err("hankel sample", d, format!("{} at k={bad}", seq[bad].len())));
    }
    let cols = seq.len() - depth + 1;
    let mut h = DMatrix::zeros(d * depth, cols);
    for j in 0..cols {
        for (blk, v) in seq[j..j + depth].iter().enumerate() {
            h.view_mut((blk * d, j), (d, 1)).copy_from(v);
        }
    }
    Ok(h)
}

/// Whether the depth-`order` Hankel matrix of `seq` has full row rank.
///
/// Rank counts singular values above `tol * sigma_max`.
pub fn is_persistently_exciting<T: Scalar>(seq: &[DVector<T>], order: usize, tol: T) -> Result<bool> {
    let h = hankel(seq, order)?;
    if h.ncols() < h.nrows() {
        return Ok(false);
    }
    Ok(linalg::numerical_rank(&h, tol) == h.nrows())
}

/// Fewest samples a length-`T` sequence of `m`-vectors needs to be persistently
/// exciting of order `order`: `(m + 1) order - 1`.
pub fn min_samples(m: usize, order: usize) -> usize {
    (m + 1) * order - 1
}

/// Excitation order that makes the data span every length-`t_p + t_f` trajectory
/// of an order-`n` plant.
pub fn excitation_order(t_p: usize, t_f: usize, n: usize) -> usize {
    t_p + t_f + n
}

/// Whether `t_p` past output samples determine the plant state, i.e. the depth-`t_p`
/// observability matrix has full column rank.
pub fn past_window_identifies_state<T: Scalar>(model: &StateSpace<T>, t_p: usize) -> bool {
    let (n, q) = (model.n(), model.q());
    let mut obs = DMatrix::zeros(q * t_p, n);
    let mut power = DMatrix::<T>::identity(n, n);
    for k in 0..t_p {
        obs.view_mut((k * q, 0), (q, n)).copy_from(&(model.c() * &power));
        power = model.a() * power;
    }
    linalg::numerical_rank(&obs, T::of(DEFAULT_RANK_TOL)) == n
}

/// Non-parametric plant representation built from one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorMatrix<T: Scalar> {
    w: DMatrix<T>,
    t_p: usize,
    t_f: usize,
    m: usize,
    q: usize,
}

impl<T: Scalar> BehaviorMatrix<T> {
    /// Splits the depth-`t_p + t_f` Hankel matrices of `u_d` and `y_d` into past and
    /// future block rows and stacks them as `[U_p; Y_p; U_f; Y_f]`.
    pub fn from_dataset(data: &TrajectoryDataset<T>, t_p: usize, t_f: usize) -> Result<Self> {
        if t_p == 0 || t_f == 0 {
            return Err(invalid("t_p/t_f", "past and future lengths must be at least 1"));
        }
        let depth = t_p + t_f;
        if data.len() < depth {
            return Err(Error::InsufficientData(format!("T_num = {} samples but T_p + T_f = {depth}", data.len())));
        }
        let (m, q) = (data.m(), data.q());
        let hu = hankel(&data.u_d, depth)?;
        let hy = hankel(&data.y_d, depth)?;
        let cols = hu.ncols();
        let mut w = DMatrix::zeros((m + q) * depth, cols);
        w.view_mut((0, 0), (m * t_p, cols)).copy_from(&hu.rows(0, m * t_p));
        w.view_mut((m * t_p, 0), (q * t_p, cols)).copy_from(&hy.rows(0, q * t_p));
        let off = (m + q) * t_p;
        w.view_mut((off, 0), (m * t_f, cols)).copy_from(&hu.rows(m * t_p, m * t_f));
        w.view_mut((off + m * t_f, 0), (q * t_f, cols)).copy_from(&hy.rows(q * t_p, q * t_f));
        Ok(Self { w, t_p, t_f, m, q })
    }

    /// Like [`BehaviorMatrix::from_dataset`], warning when `model` says the past window
    /// cannot pin the latent state.
    pub fn from_dataset_checked(data: &TrajectoryDataset<T>, t_p: usize, t_f: usize, model: &StateSpace<T>) -> Result<Self> {
        if !past_window_identifies_state(model, t_p) {
            log::warn!("T_p = {t_p} past samples do not determine the state of this plant; predictions may be non-unique");
        }
        Self::from_dataset(data, t_p, t_f)
    }

    pub fn w(&self) -> &DMatrix<T> {
        &self.w
    }
    pub fn t_p(&self) -> usize {
        self.t_p
    }
    pub fn t_f(&self) -> usize {
        self.t_f
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn q(&self) -> usize {
        self.q
    }
    pub fn n_cols(&self) -> usize {
        self.w.ncols()
    }
    pub fn n_rows(&self) -> usize {
        self.w.nrows()
    }

    /// Row offsets of the four partitions, in `U_p, Y_p, U_f, Y_f` order.
    pub fn partition_offsets(&self) -> [usize; 4] {
        let (m, q, tp, tf) = (self.m, self.q, self.t_p, self.t_f);
        [0, m * tp, (m + q) * tp, (m + q) * tp + m * tf]
    }

    pub fn u_p(&self) -> DMatrix<T> {
        self.w.rows(0, self.m * self.t_p).clone_owned()
    }
    pub fn y_p(&self) -> DMatrix<T> {
        let [_, o, _, _] = self.partition_offsets();
        self.w.rows(o, self.q * self.t_p).clone_owned()
    }
    pub fn u_f(&self) -> DMatrix<T> {
        let [_, _, o, _] = self.partition_offsets();
        self.w.rows(o, self.m * self.t_f).clone_owned()
    }
    pub fn y_f(&self) -> DMatrix<T> {
        let [_, _, _, o] = self.partition_offsets();
        self.w.rows(o, self.q * self.t_f).clone_owned()
    }

    /// Stacks a length-`t_p + t_f` trajectory in partition order.
    pub fn stack_trajectory(&self, traj_u: &[DVector<T>], traj_y: &[DVector<T>]) -> Result<DVector<T>> {
        let depth = self.t_p + self.t_f;
        if traj_u.len() != depth || traj_y.len() != depth {
            return Err(dim_err("trajectory length", depth, format!("{}/{}", traj_u.len(), traj_y.len())));
        }
        if traj_u.iter().any(|u| u.len() != self.m) {
            return Err(dim_err("trajectory input", self.m, "mismatched sample"));
        }
        if traj_y.iter().any(|y| y.len() != self.q) {
            return Err(dim_err("trajectory output", self.q, "mismatched sample"));
        }
        let (tp, tf) = (self.t_p, self.t_f);
        let parts: Vec<&DVector<T>> =
            traj_u[..tp].iter().chain(traj_y[..tp].iter()).chain(traj_u[tp..tp + tf].iter()).chain(traj_y[tp..tp + tf].iter()).collect();
        Ok(linalg::concat(&parts))
    }

    /// Relative least-squares residual `‖W g* - w‖₂ / max(1, ‖w‖₂)` of a trajectory
    /// against the column span of `W`.
    pub fn span_residual(&self, traj_u: &[DVector<T>], traj_y: &[DVector<T>]) -> Result<T> {
        let w = self.stack_trajectory(traj_u, traj_y)?;
        self.span_residual_stacked(&w)
    }

    pub fn span_residual_stacked(&self, w: &DVector<T>) -> Result<T> {
        if w.len() != self.n_rows() {
            return Err(dim_err("stacked trajectory", self.n_rows(), w.len()));
        }
        let g = linalg::least_squares(&self.w, w, T::of(DEFAULT_RANK_TOL))?;
        let r = &self.w * g - w;
        Ok(r.norm() / w.norm().max(T::one()))
    }

    pub fn norm_2(&self) -> T {
        linalg::norm_2(&self.w)
    }

    pub fn norm_inf(&self) -> T {
        linalg::norm_inf(&self.w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsys::{drone_model, simulate_closed_loop, uniform_excitation, FeedbackGain};
    use proptest::prelude::*;

    fn scalars(v: &[f64]) -> Vec<DVector<f64>> {
        v.iter().map(|&x| DVector::from_element(1, x)).collect()
    }

    #[test]
    fn hankel_examples() {
        let h = hankel(&scalars(&[1.0, 2.0, 3.0, 4.0, 5.0]), 2).unwrap();
        assert_eq!(h, DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 3.0, 4.0, 2.0, 3.0, 4.0, 5.0]));

        let seq = scalars(&[7.0, 8.0, 9.0]);
        let h = hankel(&seq, 3).unwrap();
        assert_eq!(h, DMatrix::from_column_slice(3, 1, &[7.0, 8.0, 9.0]));

        let seq = vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 1.0]), DVector::from_vec(vec![1.0, 1.0])];
        let h = hankel(&seq, 2).unwrap();
        assert_eq!(h, DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0]));

        assert!(matches!(hankel(&seq, 4), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn persistency_examples() {
        assert!(!is_persistently_exciting(&scalars(&[1.0; 4]), 2, 1e-9).unwrap());
        assert!(is_persistently_exciting(&scalars(&[1.0, 0.0, 0.0, 1.0, 0.0]), 2, 1e-9).unwrap());
        // T - L + 1 = 2 columns < m L = 3 rows.
        assert!(!is_persistently_exciting(&scalars(&[1.0, -3.0, 2.0, 5.0]), 3, 1e-9).unwrap());
    }

    #[test]
    fn sample_count_formulas() {
        assert_eq!(min_samples(4, 43), 214);
        assert_eq!(min_samples(1, 1), 1);
        assert_eq!(min_samples(2, 10), 29);
        assert_eq!(excitation_order(1, 30, 12), 43);
        assert_eq!(excitation_order(1, 1, 0), 2);
        assert_eq!(excitation_order(2, 5, 3), 10);
    }

    #[test]
    fn tiny_behavior_matrix_is_a_single_column() {
        let data = TrajectoryDataset::new(scalars(&[1.0, 2.0]), scalars(&[10.0, 20.0]), 1.0).unwrap();
        let b = BehaviorMatrix::from_dataset(&data, 1, 1).unwrap();
        assert_eq!(b.w(), &DMatrix::from_column_slice(4, 1, &[1.0, 10.0, 2.0, 20.0]));
    }

    fn drone_dataset() -> TrajectoryDataset<f64> {
        let model = drone_model::<f64>();
        let u_r = uniform_excitation(4, 214, -0.01, 0.01, 11, 0);
        simulate_closed_loop(&model, &FeedbackGain::zeros(&model), &u_r, &DVector::zeros(12)).unwrap()
    }

    #[test]
    fn drone_behavior_dimensions_and_columns() {
        let data = drone_dataset();
        let b = BehaviorMatrix::from_dataset(&data, 1, 30).unwrap();
        assert_eq!((b.n_rows(), b.n_cols()), (496, 184));
        // Column k is the window starting at sample k, in partition order.
        for k in [0, 17, 183] {
            let u = &data.u_d[k..k + 31];
            let y = &data.y_d[k..k + 31];
            let expected = b.stack_trajectory(u, y).unwrap();
            assert_eq!(b.w().column(k).clone_owned(), expected);
        }
        let [o0, o1, o2, o3] = b.partition_offsets();
        assert_eq!((o0, o1, o2, o3), (0, 4, 16, 136));
        assert_eq!(b.u_f().nrows(), 120);
        assert_eq!(b.y_f().nrows(), 360);
    }

    #[test]
    fn insufficient_samples_rejected() {
        let data = TrajectoryDataset::new(scalars(&[1.0, 2.0]), scalars(&[1.0, 2.0]), 1.0).unwrap();
        assert!(matches!(BehaviorMatrix::from_dataset(&data, 2, 1), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn span_residual_of_columns() {
        let data = drone_dataset();
        let b = BehaviorMatrix::from_dataset(&data, 1, 30).unwrap();
        let c0 = b.w().column(3).clone_owned();
        let c1 = b.w().column(100).clone_owned();
        assert!(b.span_residual_stacked(&c0).unwrap() < 1e-10);
        assert!(b.span_residual_stacked(&(&c0 + &c1)).unwrap() < 1e-10);
        let mut off = c0.clone();
        off[0] += 1.0;
        assert!(b.span_residual_stacked(&off).unwrap() > 1e-3);
    }

    #[test]
    fn past_window_check() {
        let drone = drone_model::<f64>();
        assert!(past_window_identifies_state(&drone, 1));
        // Double integrator measuring position only needs two samples.
        let di = StateSpace::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(1, 1),
            1.0,
        )
        .unwrap();
        assert!(!past_window_identifies_state(&di, 1));
        assert!(past_window_identifies_state(&di, 2));
    }

    proptest! {
        #[test]
        fn hankel_has_constant_block_antidiagonals(
            vals in proptest::collection::vec(-10.0f64..10.0, 12..40),
            d in 1usize..3,
            depth in 1usize..5,
        ) {
            let len = vals.len() / d;
            prop_assume!(len >= depth);
            let seq: Vec<DVector<f64>> = (0..len).map(|k| DVector::from_column_slice(&vals[k * d..(k + 1) * d])).collect();
            let h = hankel(&seq, depth).unwrap();
            prop_assert_eq!(h.nrows(), d * depth);
            prop_assert_eq!(h.ncols(), len - depth + 1);
            for i in 1..depth {
                for j in 0..h.ncols() - 1 {
                    prop_assert_eq!(h.view((i * d, j), (d, 1)), h.view(((i - 1) * d, j + 1), (d, 1)));
                }
            }
        }

        #[test]
        fn behavior_shape_law(t_p in 1usize..4, t_f in 1usize..6, extra in 0usize..10) {
            let len = t_p + t_f + extra;
            let u: Vec<DVector<f64>> = (0..len).map(|k| DVector::from_vec(vec![k as f64, 1.0])).collect();
            let y: Vec<DVector<f64>> = (0..len).map(|k| DVector::from_element(1, (k * k) as f64)).collect();
            let data = TrajectoryDataset::new(u, y, 1.0).unwrap();
            let b = BehaviorMatrix::from_dataset(&data, t_p, t_f).unwrap();
            prop_assert_eq!(b.n_rows(), 3 * (t_p + t_f));
            prop_assert_eq!(b.n_cols(), len - t_p - t_f + 1);
        }

        #[test]
        fn min_samples_is_monotone(m in 1usize..20, l in 1usize..100) {
            prop_assert!(min_samples(m + 1, l) > min_samples(m, l));
            prop_assert!(min_samples(m, l + 1) > min_samples(m, l));
        }
    }
}
