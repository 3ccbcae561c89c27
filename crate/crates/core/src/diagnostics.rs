//! Predictive fit and convergence summaries of posterior draws.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gibbs::{scalar_names, PosteriorDraws};
use crate::math::{ln_gamma, log_sum_exp, mean, sample_variance, softplus};
use crate::{Error, Result};

/// `log NB(y | r, p)` with `p = logistic(psi)`; `log p = psi - softplus(psi)`
/// and `log(1 - p) = -softplus(psi)`.
pub fn nb_log_pmf(y: u64, r: f64, psi: f64) -> f64 {
    let y = y as f64;
    let sp = softplus(psi);
    ln_gamma(y + r) - ln_gamma(r) - ln_gamma(y + 1.0) - r * sp + y * (psi - sp)
}

fn check_draws(draws: &PosteriorDraws, counts: &[u64]) -> Result<usize> {
    let d = draws.pooled().count();
    if d == 0 {
        return Err(Error::Input("no retained draws".into()));
    }
    if draws.pooled().any(|x| x.psi.len() != counts.len()) {
        return Err(Error::Dimension(format!("draws do not cover {} sites", counts.len())));
    }
    Ok(d)
}

/// `sum_i log((1/D) sum_d NB(y_i | r_d, psi_id))`.
pub fn lppd(draws: &PosteriorDraws, counts: &[u64]) -> Result<f64> {
    let d = check_draws(draws, counts)? as f64;
    let mut total = 0.0;
    let mut terms = Vec::with_capacity(d as usize);
    for (i, &y) in counts.iter().enumerate() {
        terms.clear();
        terms.extend(draws.pooled().map(|x| nb_log_pmf(y, x.r, x.psi[i])));
        total += log_sum_exp(&terms) - libm::log(d);
    }
    Ok(total)
}

/// Plug-in log-likelihood of every pooled draw.
pub fn draw_log_likelihoods(draws: &PosteriorDraws, counts: &[u64]) -> Vec<f64> {
    draws.pooled().map(|x| counts.iter().zip(&x.psi).map(|(&y, &p)| nb_log_pmf(y, x.r, p)).sum()).collect()
}

/// Root mean squared error of the posterior mean of `r exp(psi)`.
pub fn rmse(draws: &PosteriorDraws, counts: &[u64]) -> Result<f64> {
    check_draws(draws, counts)?;
    Ok(rmse_of(&draws.posterior_mean_lambda(), counts))
}

pub fn rmse_of(predicted: &[f64], counts: &[u64]) -> f64 {
    let ss: f64 = predicted.iter().zip(counts).map(|(&p, &y)| (p - y as f64) * (p - y as f64)).sum();
    libm::sqrt(ss / counts.len() as f64)
}

/// Potential scale reduction factor of equal-length chains.
/// Constant chains give `NaN`.
pub fn psrf(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::Input("potential scale reduction needs at least two chains".into()));
    }
    let n = chains[0].len();
    if n < 2 || chains.iter().any(|c| c.len() != n) {
        return Err(Error::Input("chains must have equal length of at least two".into()));
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = chains.iter().map(|c| sample_variance(c)).sum::<f64>() / chains.len() as f64;
    let b = n as f64 * sample_variance(&means);
    if !(w > 0.0) {
        return Ok(f64::NAN);
    }
    let nf = n as f64;
    Ok(libm::sqrt((nf - 1.0) / nf + b / (nf * w)))
}

/// Number of per-site link values monitored alongside the scalars.
pub const MONITORED_SITES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub lppd: f64,
    pub rmse: f64,
    pub psrf: BTreeMap<String, f64>,
    pub acceptance_rate_tau: Option<f64>,
    pub n_draws: usize,
    pub n_chains: usize,
    pub warnings: Vec<String>,
}

/// Scalars plus up to [`MONITORED_SITES`] link values chosen with `seed`.
pub fn monitored_series(draws: &PosteriorDraws, seed: u64) -> Vec<(String, Vec<Vec<f64>>)> {
    let p = draws.n_gamma();
    let mut out: Vec<(String, Vec<Vec<f64>>)> = scalar_names(p).into_iter().zip(draws.scalar_series()).collect();
    let n = draws.n_sites();
    let mut sites: Vec<usize> = if n <= MONITORED_SITES {
        (0..n).collect()
    } else {
        sample(&mut ChaCha8Rng::seed_from_u64(seed), n, MONITORED_SITES).into_vec()
    };
    sites.sort_unstable();
    for i in sites {
        let series = draws.chains.iter().map(|c| c.draws.iter().map(|d| d.psi[i]).collect()).collect();
        out.push((format!("psi_{i}"), series));
    }
    out
}

pub fn fit_report(draws: &PosteriorDraws, counts: &[u64], seed: u64) -> Result<FitReport> {
    let lppd_value = lppd(draws, counts)?;
    let mut warnings = Vec::new();
    let ll = draw_log_likelihoods(draws, counts);
    // Jensen: log of a mean can't fall below the mean of logs.
    if lppd_value < mean(&ll) - 1e-8 * mean(&ll).abs().max(1.0) {
        warnings.push(format!("lppd {lppd_value} below mean plug-in log-likelihood"));
    }
    let mut psrf_map = BTreeMap::new();
    if draws.n_chains() < 2 {
        warnings.push("potential scale reduction unavailable with one chain".into());
    } else {
        for (name, series) in monitored_series(draws, seed) {
            match psrf(&series) {
                Ok(v) => {
                    if v.is_nan() {
                        warnings.push(format!("{name}: constant chains, potential scale reduction undefined"));
                    }
                    psrf_map.insert(name, v);
                }
                Err(e) => warnings.push(format!("{name}: {e}")),
            }
        }
    }
    for c in &draws.chains {
        warnings.extend(c.warnings.iter().map(|w| format!("chain {}: {w}", c.chain)));
    }
    let rates: Vec<f64> = draws.chains.iter().filter_map(|c| c.tau_acceptance).collect();
    Ok(FitReport {
        lppd: lppd_value,
        rmse: rmse(draws, counts)?,
        psrf: psrf_map,
        acceptance_rate_tau: (!rates.is_empty()).then(|| mean(&rates)),
        n_draws: draws.pooled().count(),
        n_chains: draws.n_chains(),
        warnings,
    })
}
