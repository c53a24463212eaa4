//! Gaussian chance constraints and their deterministic linear equivalents.
//!
//! A constraint `Pr(aᵀX ≤ b) ≤ φ` on `X ~ N(μ, Σ)` holds exactly when
//! `aᵀμ - b ≥ η` with `η = sqrt(2 aᵀΣa) erf⁻¹(1 - 2φ)`. Pairwise collision
//! regions are relaxed to half-spaces along the direction between the two means.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Error, Result};
use crate::linalg::Cholesky;
use crate::scalar::Scalar;

/// Separation below which the direction between two means is undefined (meters).
pub const DEGENERATE_SEPARATION: f64 = 1e-9;

/// Diagonal jitter added before factoring a covariance for sampling.
pub const SAMPLING_JITTER: f64 = 1e-12;

/// Tolerance on negative covariance eigenvalues.
pub const PSD_TOL: f64 = 1e-10;

const SERIES_LIMIT: f64 = 3.0;
const MAX_TERMS: usize = 2000;

/// Error function `(2/√π) ∫₀ˣ exp(-t²) dt`.
pub fn erf<T: Scalar>(x: T) -> Result<T> {
    if x.is_nan_value() {
        return Err(invalid("x", "erf of NaN"));
    }
    Ok(erf_finite(x))
}

/// Complementary error function `1 - erf(x)`, accurate in the upper tail.
pub fn erfc<T: Scalar>(x: T) -> Result<T> {
    if x.is_nan_value() {
        return Err(invalid("x", "erfc of NaN"));
    }
    Ok(if x > T::of(SERIES_LIMIT) {
        if x.is_finite_value() {
            erfc_continued_fraction(x)
        } else {
            T::zero()
        }
    } else {
        T::one() - erf_finite(x)
    })
}

fn erf_finite<T: Scalar>(x: T) -> T {
    let ax = x.abs();
    let v = if !ax.is_finite_value() {
        T::one()
    } else if ax <= T::of(SERIES_LIMIT) {
        erf_series(ax)
    } else {
        T::one() - erfc_continued_fraction(ax)
    };
    if x < T::zero() {
        -v
    } else {
        v
    }
}

// erf(x) = (2/√π) e^{-x²} Σ_n 2ⁿ x^{2n+1} / (1·3·…·(2n+1)); every term is positive.
fn erf_series<T: Scalar>(x: T) -> T {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    for n in 0..MAX_TERMS {
        term *= T::of(2.0) * x2 / T::of_usize(2 * n + 3);
        sum += term;
        if term <= sum * T::machine_epsilon() * T::of(0.25) {
            break;
        }
    }
    T::of(2.0) / T::pi().sqrt() * (-x2).exp() * sum
}

// erfc(x) = e^{-x²}/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))), modified Lentz.
fn erfc_continued_fraction<T: Scalar>(x: T) -> T {
    let tiny = T::of(1e-30);
    let mut f = x;
    let mut c = x;
    let mut d = T::zero();
    for n in 1..MAX_TERMS {
        let a = T::of_usize(n) * T::of(0.5);
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = T::one() / d;
        let delta = c * d;
        f *= delta;
        if (delta - T::one()).abs() <= T::machine_epsilon() {
            break;
        }
    }
    (-x * x).exp() / T::pi().sqrt() / f
}

/// Inverse error function on `(-1, 1)` by safeguarded Newton iteration on [`erf`].
pub fn erf_inv<T: Scalar>(p: T) -> Result<T> {
    if p.is_nan_value() || p.abs() >= T::one() {
        return Err(invalid("p", format!("erf_inv needs |p| < 1, got {p}")));
    }
    if p == T::zero() {
        return Ok(T::zero());
    }
    let target = p.abs();
    let (mut lo, mut hi) = (T::zero(), T::one());
    while erf_finite(hi) < target {
        lo = hi;
        hi *= T::of(2.0);
        if hi > T::of(64.0) {
            return Err(invalid("p", "erf_inv target not bracketed"));
        }
    }
    let two_over_sqrt_pi = T::of(2.0) / T::pi().sqrt();
    let mut x = (lo + hi) * T::of(0.5);
    for _ in 0..200 {
        let r = erf_finite(x) - target;
        if r == T::zero() {
            break;
        }
        if r > T::zero() {
            hi = x;
        } else {
            lo = x;
        }
        let slope = two_over_sqrt_pi * (-x * x).exp();
        let newton = x - r / slope;
        let next = if slope > T::zero() && newton > lo && newton < hi { newton } else { (lo + hi) * T::of(0.5) };
        let converged = (next - x).abs() <= T::machine_epsilon() * x.abs().max(T::one());
        x = next;
        if converged || hi - lo <= T::machine_epsilon() * hi {
            break;
        }
    }
    Ok(if p < T::zero() { -x } else { x })
}

/// Standard normal CDF `Φ(z) = (1 + erf(z/√2))/2`, evaluated through `erfc` in the lower tail.
pub fn normal_cdf<T: Scalar>(z: T) -> Result<T> {
    let s = z / T::of(2.0).sqrt();
    if z < T::zero() {
        Ok(erfc(-s)? * T::of(0.5))
    } else {
        Ok((T::one() + erf(s)?) * T::of(0.5))
    }
}

/// Multivariate Gaussian `N(mu, sigma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct GaussianVector<T: Scalar> {
    mu: DVector<T>,
    sigma: DMatrix<T>,
}

impl<T: Scalar> GaussianVector<T> {
    /// Validates that `sigma` is square, matches `mu`, symmetric and positive semidefinite.
    pub fn new(mu: DVector<T>, sigma: DMatrix<T>) -> Result<Self> {
        if sigma.nrows() != sigma.ncols() || sigma.nrows() != mu.len() {
            return Err(dim_err("GaussianVector covariance", format!("{0}x{0}", mu.len()), format!("{}x{}", sigma.nrows(), sigma.ncols())));
        }
        let scale = sigma.iter().fold(T::one(), |a, v| a.max(v.abs()));
        if !crate::linalg::is_symmetric(&sigma, T::of(PSD_TOL) * scale) {
            return Err(invalid("sigma", "covariance is not symmetric"));
        }
        if !sigma.is_empty() && crate::linalg::min_symmetric_eigenvalue(&sigma) < -T::of(PSD_TOL) {
            return Err(invalid("sigma", "covariance is not positive semidefinite"));
        }
        Ok(Self { mu, sigma })
    }

    pub fn mu(&self) -> &DVector<T> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<T> {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    fn sampling_factor(&self) -> Result<DMatrix<T>> {
        let n = self.dim();
        let jittered = &self.sigma + DMatrix::identity(n, n) * T::of(SAMPLING_JITTER);
        Ok(Cholesky::new(jittered)?.l().clone())
    }
}

fn check_phi<T: Scalar>(phi: T, upper_inclusive: bool) -> Result<()> {
    let ok = phi > T::zero() && if upper_inclusive { phi <= T::of(0.5) } else { phi < T::one() };
    if ok {
        Ok(())
    } else {
        Err(invalid("phi", format!("confidence level {phi} out of range")))
    }
}

/// Tightening `η = sqrt(2 aᵀΣa) erf⁻¹(1 - 2φ)` and whether `aᵀμ - b ≥ η`.
pub fn relax_scalar<T: Scalar>(a: &DVector<T>, b: T, x: &GaussianVector<T>, phi: T) -> Result<(T, bool)> {
    if a.len() != x.dim() {
        return Err(dim_err("relax_scalar direction", x.dim(), a.len()));
    }
    if a.iter().all(|v| *v == T::zero()) {
        return Err(invalid("a", "direction must be nonzero"));
    }
    check_phi(phi, false)?;
    let eta = tightening(a, &x.sigma, phi)?;
    Ok((eta, a.dot(&x.mu) - b >= eta))
}

fn tightening<T: Scalar>(a: &DVector<T>, sigma: &DMatrix<T>, phi: T) -> Result<T> {
    let var = a.dot(&(sigma * a)).max(T::zero());
    Ok((T::of(2.0) * var).sqrt() * erf_inv(T::one() - T::of(2.0) * phi)?)
}

/// Exact `Pr(aᵀX ≤ b)` for Gaussian `X`.
pub fn tail_probability<T: Scalar>(a: &DVector<T>, b: T, x: &GaussianVector<T>) -> Result<T> {
    if a.len() != x.dim() {
        return Err(dim_err("tail_probability direction", x.dim(), a.len()));
    }
    let mean = a.dot(&x.mu);
    let sd = a.dot(&(&x.sigma * a)).max(T::zero()).sqrt();
    if sd == T::zero() {
        return Ok(if mean <= b { T::one() } else { T::zero() });
    }
    normal_cdf((b - mean) / sd)
}

/// Linearized pairwise half-space `kᵀ(μ_i - μ_j) - d_safe ≥ η` at one horizon step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + for<'a> Deserialize<'a>")]
pub struct CollisionConstraint<T: Scalar> {
    pub i: usize,
    pub j: usize,
    pub step: usize,
    pub k: DVector<T>,
    pub eta: T,
    pub d_safe: T,
}

impl<T: Scalar> CollisionConstraint<T> {
    pub fn with_indices(mut self, i: usize, j: usize, step: usize) -> Self {
        self.i = i;
        self.j = j;
        self.step = step;
        self
    }

    /// Right-hand side `d_safe + η` of `kᵀ(p_i - p_j) ≥ d_safe + η`.
    pub fn rhs(&self) -> T {
        self.d_safe + self.eta
    }

    /// Signed slack `kᵀ(p_i - p_j) - d_safe - η`; nonnegative when satisfied.
    pub fn margin(&self, p_i: &DVector<T>, p_j: &DVector<T>) -> T {
        self.k.dot(&(p_i - p_j)) - self.rhs()
    }
}

/// Unit direction from `mu_j` to `mu_i`, or a degenerate-direction error.
pub fn collision_direction<T: Scalar>(mu_i: &DVector<T>, mu_j: &DVector<T>) -> Result<DVector<T>> {
    if mu_i.len() != mu_j.len() {
        return Err(dim_err("collision means", mu_i.len(), mu_j.len()));
    }
    let diff = mu_i - mu_j;
    let sep = diff.norm();
    if sep <= T::of(DEGENERATE_SEPARATION) || !sep.is_finite_value() {
        return Err(Error::DegenerateDirection { i: 0, j: 1, separation: sep.to_f64_lossy() });
    }
    Ok(diff / sep)
}

/// Half-space relaxation of `Pr(‖y_i - y_j‖ ≤ d_safe) ≤ φ` linearized at the given means.
pub fn relax_collision<T: Scalar>(
    mu_i: &DVector<T>,
    mu_j: &DVector<T>,
    sigma_i: &DMatrix<T>,
    sigma_j: &DMatrix<T>,
    d_safe: T,
    phi: T,
) -> Result<CollisionConstraint<T>> {
    let k = collision_direction(mu_i, mu_j)?;
    relax_collision_along(k, sigma_i, sigma_j, d_safe, phi)
}

/// As [`relax_collision`] with a caller-supplied unit direction `k`.
pub fn relax_collision_along<T: Scalar>(
    k: DVector<T>,
    sigma_i: &DMatrix<T>,
    sigma_j: &DMatrix<T>,
    d_safe: T,
    phi: T,
) -> Result<CollisionConstraint<T>> {
    let d = k.len();
    for s in [sigma_i, sigma_j] {
        if s.nrows() != d || s.ncols() != d {
            return Err(dim_err("collision covariance", format!("{d}x{d}"), format!("{}x{}", s.nrows(), s.ncols())));
        }
    }
    if !(d_safe > T::zero()) {
        return Err(invalid("d_safe", "safe distance must be positive"));
    }
    check_phi(phi, true)?;
    let eta = tightening(&k, &(sigma_i + sigma_j), phi)?;
    Ok(CollisionConstraint { i: 0, j: 1, step: 0, k, eta, d_safe })
}

/// Outcome of a Monte Carlo collision experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionSampleReport {
    pub n_samples: usize,
    pub collisions: usize,
    /// Samples inside the sphere but outside the half-space `kᵀΔ ≤ d_safe`.
    pub domination_failures: usize,
    /// Whether a direction was available to run the half-space check.
    pub domination_checked: bool,
}

impl CollisionSampleReport {
    pub fn probability(&self) -> f64 {
        self.collisions as f64 / self.n_samples as f64
    }
}

/// Fraction of `n_samples` iid draws with `‖y_i - y_j‖₂ ≤ d_safe`.
pub fn mc_collision_probability<T: Scalar>(
    x_i: &GaussianVector<T>,
    x_j: &GaussianVector<T>,
    d_safe: T,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    Ok(mc_collision_report(x_i, x_j, d_safe, n_samples, seed)?.probability())
}

/// Sampling experiment that also checks per-sample half-space domination along the
/// unit direction between the means.
pub fn mc_collision_report<T: Scalar>(
    x_i: &GaussianVector<T>,
    x_j: &GaussianVector<T>,
    d_safe: T,
    n_samples: usize,
    seed: u64,
) -> Result<CollisionSampleReport> {
    if n_samples == 0 {
        return Err(invalid("n_samples", "at least one sample required"));
    }
    if x_i.dim() != x_j.dim() {
        return Err(dim_err("collision Gaussians", x_i.dim(), x_j.dim()));
    }
    let d = x_i.dim();
    let li = x_i.sampling_factor()?;
    let lj = x_j.sampling_factor()?;
    let k = collision_direction(&x_i.mu, &x_j.mu).ok();
    let mean_diff = &x_i.mu - &x_j.mu;
    let d2 = d_safe * d_safe;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut zi = DVector::<T>::zeros(d);
    let mut zj = DVector::<T>::zeros(d);
    let mut delta = DVector::<T>::zeros(d);
    let mut report = CollisionSampleReport { n_samples, collisions: 0, domination_failures: 0, domination_checked: k.is_some() };
    for _ in 0..n_samples {
        for r in 0..d {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            zi[r] = T::of(a);
            zj[r] = T::of(b);
        }
        delta.copy_from(&mean_diff);
        delta.gemv(T::one(), &li, &zi, T::one());
        delta.gemv(-T::one(), &lj, &zj, T::one());
        if delta.norm_squared() <= d2 {
            report.collisions += 1;
            if let Some(k) = &k {
                if k.dot(&delta) > d_safe {
                    report.domination_failures += 1;
                }
            }
        }
    }
    Ok(report)
}
