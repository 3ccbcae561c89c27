//! Joint-distribution simulators for validating the sampler: the
//! marginal-conditional simulator draws parameters from the prior and then
//! data; the successive-conditional simulator alternates Gibbs transitions
//! with fresh data. Both target the same joint distribution, so the moments
//! of any parameter must agree.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::hyper::Hyperparameters;
use super::sampler::{Problem, Sampler, TreeSettings};
use super::updates::{draw_gamma, draw_nb, AdaptiveStep};
use crate::data::SpatialWeights;
use crate::linalg::PrecisionGaussian;
use crate::mess::exp_action;
use crate::pg::PgSampler;
use crate::{Error, Result};

/// Parameters compared between the two simulators.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSample {
    pub gamma: Vec<f64>,
    pub r: f64,
    pub h: f64,
    pub tau: f64,
    pub sigma2: f64,
}

struct PriorDraw {
    gamma: DVector<f64>,
    phi: Vec<f64>,
    sigma2: f64,
    r: f64,
    h: f64,
    tau: f64,
    counts: Vec<u64>,
}

fn prior_draw<R: Rng + ?Sized>(f: &DMatrix<f64>, weights: &SpatialWeights, hyper: &Hyperparameters, rng: &mut R) -> Result<PriorDraw> {
    let n = f.nrows();
    let h = draw_gamma(hyper.b0, hyper.c0, "prior h", rng)?;
    let r = draw_gamma(hyper.r0, h, "prior r", rng)?;
    let sigma2 = 1.0 / draw_gamma(hyper.b_sigma2, hyper.c_sigma2, "prior spatial precision", rng)?;
    let tau = Normal::new(hyper.zeta_tau, libm::sqrt(hyper.sigma2_tau)).map_err(|_| Error::NonFinite("prior tau"))?.sample(rng);
    let prior = PrecisionGaussian::new(hyper.gamma_precision()?, &(hyper.gamma_precision()? * &hyper.zeta_gamma), "gamma prior")?;
    let gamma = prior.sample(rng);
    let eps: Vec<f64> = (0..n).map(|_| libm::sqrt(sigma2) * rng.sample::<f64, _>(StandardNormal)).collect();
    let phi = exp_action(-tau, weights.sparse(), &eps);
    let fg = f * &gamma;
    let mut counts = Vec::with_capacity(n);
    for i in 0..n {
        let psi = fg[i] + phi[i];
        if !(r.is_finite() && psi.is_finite()) {
            return Err(Error::NonFinite("prior link"));
        }
        counts.push(draw_nb(r, psi, rng)?);
    }
    Ok(PriorDraw { gamma, phi, sigma2, r, h, tau, counts })
}

fn record(gamma: &DVector<f64>, r: f64, h: f64, tau: f64, sigma2: f64) -> JointSample {
    JointSample { gamma: gamma.iter().copied().collect(), r, h, tau, sigma2 }
}

/// Independent draws of the parameters from their priors. Data are drawn
/// too (and may fail when the prior puts mass on overflowing means) but not
/// returned.
pub fn marginal_conditional<R: Rng + ?Sized>(
    f: &DMatrix<f64>,
    weights: &SpatialWeights,
    hyper: &Hyperparameters,
    samples: usize,
    rng: &mut R,
) -> Result<Vec<JointSample>> {
    (0..samples)
        .map(|_| prior_draw(f, weights, hyper, rng).map(|d| record(&d.gamma, d.r, d.h, d.tau, d.sigma2)))
        .collect()
}

/// Gibbs transitions (trees off, fixed `tau` step) interleaved with fresh
/// counts from the current parameters and fresh `omega`.
pub fn successive_conditional<R: Rng + ?Sized>(
    f: &DMatrix<f64>,
    weights: &SpatialWeights,
    hyper: &Hyperparameters,
    samples: usize,
    tau_step: f64,
    rng: &mut R,
) -> Result<Vec<JointSample>> {
    let start = prior_draw(f, weights, hyper, rng)?;
    let problem = Problem { counts: &start.counts, f, x: None, weights };
    let step = AdaptiveStep::new(tau_step, AdaptiveStep::DEFAULT_INTERVAL, AdaptiveStep::DEFAULT_TARGET)?;
    let mut sampler = Sampler::new(problem, hyper.clone(), TreeSettings::default(), PgSampler::default(), step, rng)?;
    sampler.set_parameters(start.gamma, start.phi, start.sigma2, start.r, start.h, start.tau)?;
    sampler.redraw_omega(rng)?;
    let mut out = Vec::with_capacity(samples);
    let mut counts = alloc::vec![0u64; f.nrows()];
    for it in 0..samples {
        sampler.iterate(false, rng).map_err(|e| Error::Sampler { iteration: it, message: alloc::format!("{e}") })?;
        let s = sampler.state();
        out.push(record(&s.gamma, s.r, s.h, s.tau, s.sigma2));
        for (c, &psi) in counts.iter_mut().zip(&s.psi) {
            *c = draw_nb(s.r, psi, rng)?;
        }
        sampler.set_counts(&counts)?;
        sampler.redraw_omega(rng)?;
    }
    Ok(out)
}

/// Mean and batch-means standard error of a possibly autocorrelated series.
pub fn batch_mean_se(values: &[f64], batches: usize) -> (f64, f64) {
    let n = values.len();
    let m = crate::math::mean(values);
    let size = n / batches.max(1);
    if size < 2 || batches < 2 {
        return (m, libm::sqrt(crate::math::sample_variance(values) / n as f64));
    }
    let means: Vec<f64> = (0..batches).map(|b| crate::math::mean(&values[b * size..(b + 1) * size])).collect();
    (m, libm::sqrt(crate::math::sample_variance(&means) / batches as f64))
}
