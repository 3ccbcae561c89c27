use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::hyper::Hyperparameters;
use super::sampler::{Problem, Sampler, TreeSettings};
use super::updates::AdaptiveStep;
use crate::bart::{split_counts, NodeRecord};
use crate::pg::{PgSampler, DEFAULT_TERMS};
use crate::{Error, Result};

/// Run length, retention and tuning settings for one chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub bart: bool,
    pub trees: TreeSettings,
    /// Keep serialized trees for every retained draw.
    pub keep_trees: bool,
    pub pg_terms: usize,
    pub tau_step: f64,
    pub adapt_interval: usize,
    pub target_acceptance: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_iter: 10_000,
            burn_in: 5_000,
            thin: 2,
            seed: 0,
            bart: true,
            trees: TreeSettings::default(),
            keep_trees: true,
            pg_terms: DEFAULT_TERMS,
            tau_step: AdaptiveStep::DEFAULT_STEP,
            adapt_interval: AdaptiveStep::DEFAULT_INTERVAL,
            target_acceptance: AdaptiveStep::DEFAULT_TARGET,
        }
    }
}

impl ChainConfig {
    pub const DEFAULT_CHAINS: usize = 4;

    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::InvalidParameter("thinning must be at least 1".into()));
        }
        if self.burn_in > self.n_iter {
            return Err(Error::InvalidParameter(format!("burn-in {} exceeds iterations {}", self.burn_in, self.n_iter)));
        }
        Ok(())
    }

    /// Iteration `it` (0-based) is kept when `it >= burn_in` and
    /// `(it + 1 - burn_in)` is a multiple of `thin`.
    pub fn is_retained(&self, it: usize) -> bool {
        it >= self.burn_in && (it + 1 - self.burn_in) % self.thin == 0
    }

    pub fn retained(&self) -> usize {
        (self.n_iter - self.burn_in.min(self.n_iter)) / self.thin.max(1)
    }
}

/// Per-chain seed derived from a master seed by a splitmix64 step.
pub fn chain_seed(master: u64, chain: usize) -> u64 {
    let mut z = master.wrapping_add((chain as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One retained state.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub iteration: usize,
    pub gamma: Vec<f64>,
    pub r: f64,
    pub h: f64,
    pub tau: f64,
    pub sigma2: f64,
    pub psi: Vec<f64>,
    pub phi: Vec<f64>,
    /// Split-rule occurrences per tree predictor.
    pub split_counts: Vec<usize>,
    pub trees: Vec<NodeRecord>,
}

impl Draw {
    /// `lambda_i = r exp(psi_i)`, the NB mean.
    pub fn lambda(&self) -> Vec<f64> {
        self.psi.iter().map(|&p| self.r * libm::exp(p)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainDraws {
    pub chain: usize,
    pub seed: u64,
    pub draws: Vec<Draw>,
    /// Acceptance rate of the `tau` step after burn-in.
    pub tau_acceptance: Option<f64>,
    pub tau_step: f64,
    /// Share of accepted tree proposals over the whole run.
    pub tree_acceptance: Option<f64>,
    pub sigma_mu: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub config: ChainConfig,
    pub chains: Vec<ChainDraws>,
}

/// Names of the monitored scalars for a linear part with `p` coefficients.
pub fn scalar_names(p: usize) -> Vec<String> {
    let mut names: Vec<String> = (0..p).map(|j| format!("gamma_{j}")).collect();
    names.extend(["r", "h", "tau", "sigma2"].map(String::from));
    names
}

impl PosteriorDraws {
    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_sites(&self) -> usize {
        self.chains.iter().flat_map(|c| c.draws.first()).map(|d| d.psi.len()).next().unwrap_or(0)
    }

    pub fn n_gamma(&self) -> usize {
        self.chains.iter().flat_map(|c| c.draws.first()).map(|d| d.gamma.len()).next().unwrap_or(0)
    }

    /// Scalar series per chain, in [`scalar_names`] order.
    pub fn scalar_series(&self) -> Vec<Vec<Vec<f64>>> {
        let p = self.n_gamma();
        (0..p + 4)
            .map(|k| {
                self.chains
                    .iter()
                    .map(|c| {
                        c.draws
                            .iter()
                            .map(|d| match k {
                                k if k < p => d.gamma[k],
                                k if k == p => d.r,
                                k if k == p + 1 => d.h,
                                k if k == p + 2 => d.tau,
                                _ => d.sigma2,
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    /// All retained draws, chains concatenated.
    pub fn pooled(&self) -> impl Iterator<Item = &Draw> {
        self.chains.iter().flat_map(|c| c.draws.iter())
    }

    /// `lambda` for every pooled draw (draw-major).
    pub fn lambda_draws(&self) -> Vec<Vec<f64>> {
        self.pooled().map(Draw::lambda).collect()
    }

    pub fn posterior_mean_lambda(&self) -> Vec<f64> {
        mean_rows(&self.lambda_draws(), self.n_sites())
    }

    pub fn posterior_mean_psi(&self) -> Vec<f64> {
        let psi: Vec<Vec<f64>> = self.pooled().map(|d| d.psi.clone()).collect();
        mean_rows(&psi, self.n_sites())
    }
}

fn mean_rows(rows: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut out = alloc::vec![0.0; n];
    for r in rows {
        out.iter_mut().zip(r).for_each(|(o, v)| *o += v);
    }
    let k = rows.len().max(1) as f64;
    out.iter_mut().for_each(|o| *o /= k);
    out
}

/// Runs one chain with seed `chain_seed(config.seed, chain)`.
pub fn run_chain(problem: Problem<'_>, hyper: &Hyperparameters, config: &ChainConfig, chain: usize) -> Result<ChainDraws> {
    config.validate()?;
    let seed = chain_seed(config.seed, chain);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pg = PgSampler::new(config.pg_terms)?;
    let step = AdaptiveStep::new(config.tau_step, config.adapt_interval, config.target_acceptance)?;
    let q = problem.x.map_or(0, |x| x.ncols());
    let problem = if config.bart { problem } else { Problem { x: None, ..problem } };
    let mut sampler = Sampler::new(problem, hyper.clone(), config.trees, pg, step, &mut rng).map_err(|e| at(0, e))?;

    let mut warnings = Vec::new();
    if config.retained() == 0 {
        warnings.push(format!("no draws retained: {} iterations with burn-in {}", config.n_iter, config.burn_in));
    }
    let mut draws = Vec::with_capacity(config.retained());
    for it in 0..config.n_iter {
        sampler.iterate(it < config.burn_in, &mut rng).map_err(|e| at(it, e))?;
        if config.is_retained(it) {
            let s = sampler.state();
            let (counts, trees) = match &s.ensemble {
                Some(e) => {
                    let records = if config.keep_trees {
                        e.trees().iter().enumerate().flat_map(|(j, t)| t.to_records(j)).collect()
                    } else {
                        Vec::new()
                    };
                    (split_counts(e.trees(), q), records)
                }
                None => (alloc::vec![0; q], Vec::new()),
            };
            draws.push(Draw {
                iteration: it,
                gamma: s.gamma.iter().copied().collect(),
                r: s.r,
                h: s.h,
                tau: s.tau,
                sigma2: s.sigma2,
                psi: s.psi.clone(),
                phi: s.phi.clone(),
                split_counts: counts,
                trees,
            });
        }
    }
    let stats = sampler.tree_stats();
    let proposed: usize = stats.proposed.iter().sum();
    Ok(ChainDraws {
        chain,
        seed,
        draws,
        tau_acceptance: sampler.tau_step().acceptance_rate(),
        tau_step: sampler.tau_step().step(),
        tree_acceptance: (proposed > 0).then(|| stats.accepted.iter().sum::<usize>() as f64 / proposed as f64),
        sigma_mu: sampler.state().ensemble.as_ref().map(|e| e.hyper().sigma_mu),
        warnings,
    })
}

fn at(iteration: usize, e: Error) -> Error {
    match e {
        Error::Sampler { .. } => e,
        other => Error::Sampler { iteration, message: format!("{other}") },
    }
}

/// Runs `n_chains` chains one after another.
pub fn run_chains(problem: Problem<'_>, hyper: &Hyperparameters, config: &ChainConfig, n_chains: usize) -> Result<PosteriorDraws> {
    if n_chains == 0 {
        return Err(Error::InvalidParameter("at least one chain is required".into()));
    }
    let chains = (0..n_chains).map(|c| run_chain(problem, hyper, config, c)).collect::<Result<Vec<_>>>()?;
    Ok(PosteriorDraws { config: *config, chains })
}
