//! Full conditionals of the augmented model, written as functions of the
//! quantities they depend on so each can be checked in isolation.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::hyper::Hyperparameters;
use crate::linalg::{PrecisionGaussian, SparseRows};
use crate::math::softplus;
use crate::mess::exp_action;
use crate::{Error, Result};

/// Lower bound applied to `omega` before dividing by it.
pub const OMEGA_FLOOR: f64 = 1e-9;

/// `Z = (y - r) / (2 omega)` with `omega` floored.
pub fn augmented_response(y: f64, r: f64, omega: f64) -> f64 {
    (y - r) / (2.0 * omega.max(OMEGA_FLOOR))
}

/// `phi | rest ~ Normal((Omega + Omega~)^{-1} Omega t, (Omega + Omega~)^{-1})`
/// with `t = Z - G - F gamma`.
pub fn phi_conditional(omega: &[f64], target: &[f64], omega_tilde: &DMatrix<f64>) -> Result<PrecisionGaussian> {
    let n = omega.len();
    if target.len() != n || omega_tilde.shape() != (n, n) {
        return Err(Error::Dimension("phi conditional inputs disagree".into()));
    }
    let mut precision = omega_tilde.clone();
    for i in 0..n {
        precision[(i, i)] += omega[i];
    }
    let linear = DVector::from_fn(n, |i, _| omega[i] * target[i]);
    PrecisionGaussian::new(precision, &linear, "phi conditional precision")
}

/// `gamma | rest ~ Normal(V (F^T Omega t + P zeta), V)`, `V = (P + F^T Omega F)^{-1}`,
/// with `t = Z - G - phi` and prior precision `P`.
pub fn gamma_conditional(
    f: &DMatrix<f64>,
    omega: &[f64],
    target: &[f64],
    prior_precision: &DMatrix<f64>,
    prior_mean: &DVector<f64>,
) -> Result<PrecisionGaussian> {
    let (n, p) = f.shape();
    if omega.len() != n || target.len() != n || prior_precision.shape() != (p, p) || prior_mean.len() != p {
        return Err(Error::Dimension("gamma conditional inputs disagree".into()));
    }
    let weighted = DMatrix::from_fn(n, p, |i, j| omega[i] * f[(i, j)]);
    let precision = prior_precision + f.transpose() * &weighted;
    let linear = weighted.transpose() * DVector::from_column_slice(target) + prior_precision * prior_mean;
    PrecisionGaussian::new(precision, &linear, "gamma conditional precision")
}

/// Joint conditional of `(gamma, phi)` given `t = Z - G`, stacked as
/// `[gamma; phi]`. Drawing both at once removes the coupling between the
/// intercept and the smooth part of `phi`.
pub fn linear_block_conditional(
    f: &DMatrix<f64>,
    omega: &[f64],
    target: &[f64],
    prior_precision: &DMatrix<f64>,
    prior_mean: &DVector<f64>,
    omega_tilde: &DMatrix<f64>,
) -> Result<PrecisionGaussian> {
    let (n, p) = f.shape();
    if omega.len() != n || target.len() != n || prior_precision.shape() != (p, p) || prior_mean.len() != p || omega_tilde.shape() != (n, n) {
        return Err(Error::Dimension("joint linear conditional inputs disagree".into()));
    }
    let weighted = DMatrix::from_fn(n, p, |i, j| omega[i] * f[(i, j)]);
    let mut precision = DMatrix::zeros(p + n, p + n);
    precision.view_mut((0, 0), (p, p)).copy_from(&(prior_precision + f.transpose() * &weighted));
    precision.view_mut((p, 0), (n, p)).copy_from(&weighted);
    precision.view_mut((0, p), (p, n)).copy_from(&weighted.transpose());
    precision.view_mut((p, p), (n, n)).copy_from(omega_tilde);
    for i in 0..n {
        precision[(p + i, p + i)] += omega[i];
    }
    let wt = DVector::from_fn(n, |i, _| omega[i] * target[i]);
    let mut linear = DVector::zeros(p + n);
    linear.rows_mut(0, p).copy_from(&(weighted.transpose() * DVector::from_column_slice(target) + prior_precision * prior_mean));
    linear.rows_mut(p, n).copy_from(&wt);
    PrecisionGaussian::new(precision, &linear, "joint linear conditional precision")
}

/// Shape and rate of `sigma^{-2} | phi, tau`, given `q = ||S phi||^2`.
pub fn sigma2_inv_posterior(hyper: &Hyperparameters, n: usize, quadratic: f64) -> (f64, f64) {
    (hyper.b_sigma2 + n as f64 / 2.0, hyper.c_sigma2 + quadratic / 2.0)
}

/// Shape and rate of `h | r`.
pub fn h_posterior(hyper: &Hyperparameters, r: f64) -> (f64, f64) {
    (hyper.r0 + hyper.b0, r + hyper.c0)
}

/// Chinese restaurant table count: `sum_{t=1}^{y} Bernoulli(r / (r + t - 1))`.
pub fn crt_count<R: Rng + ?Sized>(y: u64, r: f64, rng: &mut R) -> u64 {
    (0..y).filter(|&t| rng.random::<f64>() * (r + t as f64) < r).count() as u64
}

/// Shape and rate of `r | L, psi, h`; `-log(1 - p_i) = softplus(psi_i)`.
pub fn r_posterior(hyper: &Hyperparameters, h: f64, tables: u64, psi: &[f64]) -> (f64, f64) {
    let rate = h + psi.iter().map(|&v| softplus(v)).sum::<f64>();
    (hyper.r0 + tables as f64, rate)
}

/// Unnormalized log conditional of `tau`: prior plus `-||exp(tau W) phi||^2 / (2 sigma^2)`.
/// No determinant term is needed because `det exp(tau W) = 1`.
pub fn tau_log_target(tau: f64, phi: &[f64], w: &SparseRows, sigma2: f64, hyper: &Hyperparameters) -> f64 {
    let d = tau - hyper.zeta_tau;
    let s_phi = exp_action(tau, w, phi);
    let q: f64 = s_phi.iter().map(|v| v * v).sum();
    -d * d / (2.0 * hyper.sigma2_tau) - q / (2.0 * sigma2)
}

/// Gamma variate in shape/rate form.
pub fn draw_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, what: &'static str, rng: &mut R) -> Result<f64> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    let g = Gamma::new(shape, 1.0 / rate).map_err(|_| Error::NonFinite(what))?;
    let v = g.sample(rng);
    if !(v.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Ok(v)
}

/// Random-walk scale tuned towards a target acceptance rate during burn-in.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveStep {
    step: f64,
    interval: usize,
    target: f64,
    window_accepted: usize,
    window_total: usize,
    accepted: usize,
    proposed: usize,
}

impl AdaptiveStep {
    pub const DEFAULT_STEP: f64 = 0.5;
    pub const DEFAULT_INTERVAL: usize = 50;
    pub const DEFAULT_TARGET: f64 = 0.44;

    pub fn new(step: f64, interval: usize, target: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) || interval == 0 || !(target > 0.0 && target < 1.0) {
            return Err(Error::InvalidParameter("adaptive step settings out of range".into()));
        }
        Ok(AdaptiveStep { step, interval, target, window_accepted: 0, window_total: 0, accepted: 0, proposed: 0 })
    }

    pub fn interval(&self) -> usize {
        self.interval
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Records one proposal. While `adapting`, the step is multiplied by 1.1
    /// or 0.9 at the end of every window depending on whether the window's
    /// acceptance rate exceeded the target; otherwise the long-run counts are
    /// updated.
    pub fn record(&mut self, accepted: bool, adapting: bool) {
        if adapting {
            self.window_accepted += accepted as usize;
            self.window_total += 1;
            if self.window_total == self.interval {
                let rate = self.window_accepted as f64 / self.window_total as f64;
                self.step *= if rate > self.target { 1.1 } else { 0.9 };
                self.window_accepted = 0;
                self.window_total = 0;
            }
        } else {
            self.accepted += accepted as usize;
            self.proposed += 1;
        }
    }

    /// Acceptance rate after adaptation stopped; `None` before any proposal.
    pub fn acceptance_rate(&self) -> Option<f64> {
        (self.proposed > 0).then(|| self.accepted as f64 / self.proposed as f64)
    }
}

/// `y ~ NB(r, logistic(psi))` through its Gamma-Poisson mixture.
pub fn draw_nb<R: Rng + ?Sized>(r: f64, psi: f64, rng: &mut R) -> Result<u64> {
    let rate = draw_gamma(r, libm::exp(-psi), "negative binomial mixing rate", rng)?;
    if rate == 0.0 {
        return Ok(0);
    }
    let pois = rand_distr::Poisson::new(rate).map_err(|_| Error::NonFinite("negative binomial mean"))?;
    Ok(pois.sample(rng) as u64)
}

pub(crate) fn residual(a: &[f64], parts: &[&[f64]]) -> Vec<f64> {
    a.iter().enumerate().map(|(i, &v)| v - parts.iter().map(|p| p[i]).sum::<f64>()).collect()
}
