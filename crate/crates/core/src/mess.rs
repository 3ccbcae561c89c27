//! Matrix exponential spatial kernel `S = exp(tau W)`.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::data::SpatialWeights;
use crate::linalg::{max_abs, SparseRows};
use crate::{Error, Result};

const SCALED_NORM: f64 = 0.5;
// Sparse Taylor products are cheap relative to dense squarings, so the sparse
// routes accept a larger scaled norm.
const SPARSE_SCALED_NORM: f64 = 2.0;
const TERM_TOLERANCE: f64 = 1e-14;
const MAX_TERMS: usize = 30;

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows()).map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Number of halvings needed to bring `norm` to at most `limit`.
fn squarings(norm: f64, limit: f64) -> u32 {
    let mut s = 0;
    let mut scaled = norm;
    while scaled > limit {
        scaled *= 0.5;
        s += 1;
    }
    s
}

/// Sums the Taylor series given a closure producing `A * T_k`.
fn taylor<F: FnMut(&DMatrix<f64>) -> DMatrix<f64>>(n: usize, mut times_a: F) -> DMatrix<f64> {
    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term = sum.clone();
    for k in 1..=MAX_TERMS {
        term = times_a(&term) / k as f64;
        if max_abs(&term) < TERM_TOLERANCE {
            break;
        }
        sum += &term;
    }
    sum
}

fn square(mut m: DMatrix<f64>, times: u32) -> DMatrix<f64> {
    for _ in 0..times {
        m = &m * &m;
    }
    m
}

/// `exp(tau W)` by scaling and squaring a truncated Taylor series.
pub fn matrix_exponential(tau: f64, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if w.nrows() != w.ncols() {
        return Err(Error::Dimension("matrix exponential needs a square matrix".into()));
    }
    if !tau.is_finite() || w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix exponential input"));
    }
    let a = w * tau;
    let s = squarings(inf_norm(&a), SCALED_NORM);
    let a = a / libm::pow(2.0, f64::from(s));
    let e = taylor(w.nrows(), |t| &a * t);
    Ok(square(e, s))
}

/// Same algorithm as [`matrix_exponential`], with the Taylor products taken
/// against the sparse rows of `W` on column-major buffers.
pub fn matrix_exponential_sparse(tau: f64, w: &SparseRows) -> DMatrix<f64> {
    let n = w.dim();
    let s = squarings(tau.abs() * w.inf_norm(), SPARSE_SCALED_NORM);
    let scale = tau / libm::pow(2.0, f64::from(s));
    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term: Vec<f64> = sum.as_slice().to_vec();
    let mut next = alloc::vec![0.0; n * n];
    for k in 1..=MAX_TERMS {
        let f = scale / k as f64;
        let mut largest = 0.0_f64;
        for (src, dst) in term.chunks_exact(n).zip(next.chunks_exact_mut(n)) {
            for (i, d) in dst.iter_mut().enumerate() {
                let acc: f64 = w.row(i).iter().map(|&(j, a)| a * src[j]).sum();
                *d = f * acc;
                largest = largest.max(d.abs());
            }
        }
        if largest < TERM_TOLERANCE {
            break;
        }
        sum.as_mut_slice().iter_mut().zip(&next).for_each(|(a, b)| *a += b);
        core::mem::swap(&mut term, &mut next);
    }
    square(sum, s)
}

/// `exp(tau W) v` without forming the matrix: `2^s` applications of the
/// Taylor series of `exp(tau W / 2^s)`.
pub fn exp_action(tau: f64, w: &SparseRows, v: &[f64]) -> Vec<f64> {
    let s = squarings(tau.abs() * w.inf_norm(), SPARSE_SCALED_NORM);
    let scale = tau / libm::pow(2.0, f64::from(s));
    let mut out = v.to_vec();
    for _ in 0..(1u64 << s) {
        let mut sum = out.clone();
        let mut term = out;
        for k in 1..=MAX_TERMS {
            term = w.mul_vec(&term);
            let f = scale / k as f64;
            let mut largest = 0.0_f64;
            for t in term.iter_mut() {
                *t *= f;
                largest = largest.max(t.abs());
            }
            if largest < TERM_TOLERANCE * 1e-2 {
                break;
            }
            sum.iter_mut().zip(&term).for_each(|(a, b)| *a += b);
        }
        out = sum;
    }
    out
}

/// `S^T S / sigma^2`, symmetrized by averaging with its transpose.
pub fn spatial_precision(s: &DMatrix<f64>, sigma2: f64) -> Result<DMatrix<f64>> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidParameter(alloc::format!("sigma2 must be positive, got {sigma2}")));
    }
    let sts = s.transpose() * s;
    Ok(symmetrize(sts) / sigma2)
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Eigen-decomposition of a row-normalized symmetric proximity matrix:
/// `W = D^{-1} C = D^{-1/2} M D^{1/2}` with `M = Q diag(lambda) Q^T`, so
/// `exp(tau W) = L E R^T` with `L = D^{-1/2} Q`, `R = D^{1/2} Q`,
/// `E = diag(exp(tau lambda))`, and `S^T S = R E (L^T L) E R^T`.
#[derive(Debug, Clone)]
struct Spectral {
    left: DMatrix<f64>,
    right: DMatrix<f64>,
    lambda: Vec<f64>,
    gram: DMatrix<f64>,
}

impl Spectral {
    fn new(weights: &SpatialWeights) -> Option<Self> {
        let c = weights.proximity();
        let n = c.nrows();
        if c != &c.transpose() {
            return None;
        }
        // Isolated rows are zero in both C and W, so any positive d works.
        let d: Vec<f64> = (0..n).map(|i| c.row(i).sum()).map(|v: f64| if v > 0.0 { v } else { 1.0 }).collect();
        let m = DMatrix::from_fn(n, n, |i, j| c[(i, j)] / libm::sqrt(d[i] * d[j]));
        let eig = m.symmetric_eigen();
        let q = eig.eigenvectors;
        let left = DMatrix::from_fn(n, n, |i, k| q[(i, k)] / libm::sqrt(d[i]));
        let right = DMatrix::from_fn(n, n, |i, k| q[(i, k)] * libm::sqrt(d[i]));
        let gram = left.tr_mul(&left);
        Some(Spectral { left, right, lambda: eig.eigenvalues.iter().copied().collect(), gram })
    }

    fn exp_values(&self, tau: f64) -> Vec<f64> {
        self.lambda.iter().map(|&l| libm::exp(tau * l)).collect()
    }

    fn s(&self, tau: f64) -> DMatrix<f64> {
        let e = self.exp_values(tau);
        let scaled = DMatrix::from_fn(self.left.nrows(), self.left.ncols(), |i, k| self.left[(i, k)] * e[k]);
        scaled * self.right.transpose()
    }

    fn sts(&self, tau: f64) -> DMatrix<f64> {
        let e = self.exp_values(tau);
        let n = e.len();
        let middle = DMatrix::from_fn(n, n, |i, j| e[i] * self.gram[(i, j)] * e[j]);
        let half = &self.right * middle;
        half * self.right.transpose()
    }
}

/// Precision of `phi`, `S^T S / sigma^2` with `S = exp(tau W)`, cached for
/// the current `(tau, sigma^2)`. Symmetric proximity matrices go through a
/// one-off eigen-decomposition; others use the sparse Taylor route.
#[derive(Debug, Clone)]
pub struct SpatialKernel {
    tau: f64,
    sigma2: f64,
    spectral: Option<Spectral>,
    sts: DMatrix<f64>,
    omega_tilde: DMatrix<f64>,
}

impl SpatialKernel {
    pub fn new(tau: f64, sigma2: f64, weights: &SpatialWeights) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidParameter(alloc::format!("sigma2 must be positive, got {sigma2}")));
        }
        let n = weights.len();
        let mut kernel = SpatialKernel {
            tau: f64::NAN,
            sigma2,
            spectral: Spectral::new(weights),
            sts: DMatrix::zeros(n, n),
            omega_tilde: DMatrix::zeros(n, n),
        };
        kernel.set_tau(tau, weights)?;
        Ok(kernel)
    }

    /// Taylor route regardless of symmetry.
    pub fn new_taylor(tau: f64, sigma2: f64, weights: &SpatialWeights) -> Result<Self> {
        let mut k = Self::new(0.0, sigma2, weights)?;
        k.spectral = None;
        k.tau = f64::NAN;
        k.set_tau(tau, weights)?;
        Ok(k)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn is_spectral(&self) -> bool {
        self.spectral.is_some()
    }

    /// `S = exp(tau W)`, formed on demand.
    pub fn s(&self, weights: &SpatialWeights) -> DMatrix<f64> {
        match &self.spectral {
            Some(sp) => sp.s(self.tau),
            None => matrix_exponential_sparse(self.tau, weights.sparse()),
        }
    }

    pub fn sts(&self) -> &DMatrix<f64> {
        &self.sts
    }

    pub fn omega_tilde(&self) -> &DMatrix<f64> {
        &self.omega_tilde
    }

    /// Recomputes `S^T S`; a no-op when `tau` is unchanged.
    pub fn set_tau(&mut self, tau: f64, weights: &SpatialWeights) -> Result<()> {
        if !tau.is_finite() {
            return Err(Error::NonFinite("tau"));
        }
        if tau.to_bits() == self.tau.to_bits() {
            return Ok(());
        }
        self.tau = tau;
        let sts = match &self.spectral {
            Some(sp) => sp.sts(tau),
            None => {
                let s = matrix_exponential_sparse(tau, weights.sparse());
                s.tr_mul(&s)
            }
        };
        self.sts = symmetrize(sts);
        self.omega_tilde = &self.sts / self.sigma2;
        Ok(())
    }

    pub fn set_sigma2(&mut self, sigma2: f64) -> Result<()> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidParameter(alloc::format!("sigma2 must be positive, got {sigma2}")));
        }
        self.sigma2 = sigma2;
        self.omega_tilde = &self.sts / sigma2;
        Ok(())
    }

    /// `||S phi||^2 = phi^T S^T S phi`.
    pub fn spatial_quadratic(&self, phi: &[f64]) -> f64 {
        let v = nalgebra::DVector::from_column_slice(phi);
        v.dot(&(&self.sts * &v))
    }

    /// `log Normal(phi | 0, sigma^2 (S^T S)^{-1})`; `log det S = 0` because
    /// `trace(W) = 0`.
    pub fn log_density(&self, phi: &[f64]) -> f64 {
        let n = phi.len() as f64;
        -0.5 * n * (crate::math::ln_2pi() + libm::log(self.sigma2)) - 0.5 * self.spatial_quadratic(phi) / self.sigma2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SpatialWeights;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Plain 30-term Taylor series, no scaling.
    fn direct_series(tau: f64, w: &DMatrix<f64>) -> DMatrix<f64> {
        let n = w.nrows();
        let a = w * tau;
        let mut sum = DMatrix::identity(n, n);
        let mut term = DMatrix::identity(n, n);
        for k in 1..=30 {
            term = &term * &a / k as f64;
            sum += &term;
        }
        sum
    }

    fn random_weights(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let mut c = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else if rng.random::<f64>() < 0.4 { rng.random::<f64>() } else { 0.0 });
        c[(0, 1)] = 0.5;
        SpatialWeights::from_proximity(c).unwrap().normalized().clone()
    }

    #[test]
    fn zero_tau_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random_weights(6, &mut rng);
        assert_eq!(matrix_exponential(0.0, &w).unwrap(), DMatrix::identity(6, 6));
    }

    #[test]
    fn nilpotent_series_terminates() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e = matrix_exponential(1.0, &w).unwrap();
        assert_relative_eq!(e, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]), epsilon = 1e-15);
    }

    #[test]
    fn rejects_non_square() {
        assert!(matrix_exponential(1.0, &DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn matches_direct_series_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = random_weights(10, &mut rng);
        let e = matrix_exponential(-1.5, &w).unwrap();
        assert!(max_abs(&(e - direct_series(-1.5, &w))) < 1e-10);
    }

    #[test]
    fn sparse_dense_and_action_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = random_weights(12, &mut rng);
        let sparse = SparseRows::from_dense(&w);
        for &tau in &[-2.7, -0.3, 0.9, 2.2] {
            let dense = matrix_exponential(tau, &w).unwrap();
            let sp = matrix_exponential_sparse(tau, &sparse);
            assert!(max_abs(&(&dense - &sp)) < 1e-12);
            let v: Vec<f64> = (0..12).map(|_| rng.sample(StandardNormal)).collect();
            let act = exp_action(tau, &sparse, &v);
            let ref_v = &dense * DVector::from_column_slice(&v);
            for (a, b) in act.iter().zip(ref_v.iter()) {
                assert_relative_eq!(*a, *b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn determinant_and_inverse_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let w = random_weights(8, &mut rng);
            let tau = rng.random_range(-3.0..3.0);
            let e = matrix_exponential(tau, &w).unwrap();
            assert!((e.determinant() - 1.0).abs() < 1e-8);
            let prod = &e * matrix_exponential(-tau, &w).unwrap();
            assert!(max_abs(&(prod - DMatrix::identity(8, 8))) < 1e-8);
        }
    }

    #[test]
    fn precision_examples() {
        let omega = spatial_precision(&DMatrix::identity(3, 3), 4.0).unwrap();
        assert_eq!(omega, DMatrix::identity(3, 3) * 0.25);
        assert!(spatial_precision(&DMatrix::identity(3, 3), 0.0).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let w = random_weights(7, &mut rng);
        let weights = SpatialWeights::from_proximity(w.clone()).unwrap();
        let k0 = SpatialKernel::new(0.0, 2.0, &weights).unwrap();
        assert_relative_eq!(k0.omega_tilde().clone(), DMatrix::identity(7, 7) * 0.5, epsilon = 1e-15);

        let s = matrix_exponential(1.3, weights.normalized()).unwrap();
        let omega = spatial_precision(&s, 0.7).unwrap();
        assert!(omega.clone().cholesky().is_some());
        let phi = DVector::from_fn(7, |_, _| rng.sample::<f64, _>(StandardNormal));
        let quad = (phi.transpose() * &omega * &phi)[(0, 0)];
        let via_s = (&s * &phi).norm_squared() / 0.7;
        assert_relative_eq!(quad, via_s, epsilon = 1e-10);
    }

    #[test]
    fn kernel_tracks_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let weights = SpatialWeights::from_proximity(random_weights(5, &mut rng)).unwrap();
        let mut k = SpatialKernel::new(0.4, 1.0, &weights).unwrap();
        k.set_sigma2(2.0).unwrap();
        k.set_tau(-0.8, &weights).unwrap();
        let s = matrix_exponential(-0.8, weights.normalized()).unwrap();
        let expected = spatial_precision(&s, 2.0).unwrap();
        assert!(max_abs(&(k.omega_tilde() - expected)) < 1e-12);
    }

    #[test]
    fn spectral_and_taylor_routes_agree() {
        let n = 9;
        let c = DMatrix::from_fn(n, n, |i, j| {
            let d = (i as i64 - j as i64).abs();
            // Site 8 is isolated.
            if i == 8 || j == 8 || d == 0 || d > 3 { 0.0 } else { 1.0 / d as f64 }
        });
        let weights = SpatialWeights::from_proximity(c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let asym = SpatialWeights::from_proximity(random_weights(5, &mut rng)).unwrap();
        assert!(!SpatialKernel::new(0.3, 1.0, &asym).unwrap().is_spectral());
        for &tau in &[-2.5, -1.5, 0.0, 0.8, 2.0] {
            let a = SpatialKernel::new(tau, 0.7, &weights).unwrap();
            let b = SpatialKernel::new_taylor(tau, 0.7, &weights).unwrap();
            assert!(a.is_spectral() && !b.is_spectral());
            assert!(max_abs(&(a.omega_tilde() - b.omega_tilde())) < 1e-11);
            let dense = matrix_exponential(tau, weights.normalized()).unwrap();
            assert!(max_abs(&(a.s(&weights) - &dense)) < 1e-11);
        }
    }

    /// Drawing eps and solving S phi = eps gives phi with density evaluated by
    /// the precision form; both must agree with the Gaussian log-density of eps.
    #[test]
    fn density_matches_epsilon_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let weights = SpatialWeights::from_proximity(random_weights(6, &mut rng)).unwrap();
        let sigma2 = 0.6;
        let k = SpatialKernel::new(-1.1, sigma2, &weights).unwrap();
        for _ in 0..10 {
            let eps = DVector::from_fn(6, |_, _| libm::sqrt(sigma2) * rng.sample::<f64, _>(StandardNormal));
            let phi = k.s(&weights).lu().solve(&eps).unwrap();
            let lp_eps: f64 = eps.iter().map(|e| -0.5 * (crate::math::ln_2pi() + libm::log(sigma2)) - e * e / (2.0 * sigma2)).sum();
            assert_relative_eq!(k.log_density(phi.as_slice()), lp_eps, epsilon = 1e-9);
        }
    }
}
