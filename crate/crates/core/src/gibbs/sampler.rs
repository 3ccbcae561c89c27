use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::hyper::Hyperparameters;
use super::updates::{
    augmented_response, crt_count, draw_gamma, gamma_conditional, h_posterior, linear_block_conditional, phi_conditional, r_posterior, residual,
    sigma2_inv_posterior, tau_log_target, AdaptiveStep,
};
use crate::bart::{backfit_sweep, BartHyper, SweepStats, TreeEnsemble};
use crate::data::SpatialWeights;
use crate::diagnostics::nb_log_pmf;
use crate::mess::SpatialKernel;
use crate::pg::{PgParameters, PgSampler};
use crate::{Error, Result};

/// Immutable inputs shared by all chains.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub counts: &'a [u64],
    pub f: &'a DMatrix<f64>,
    /// Tree predictors; `None` switches the tree component off.
    pub x: Option<&'a DMatrix<f64>>,
    pub weights: &'a SpatialWeights,
}

impl Problem<'_> {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.counts.len();
        if n == 0 {
            return Err(Error::NoRows);
        }
        if self.f.nrows() != n || self.weights.len() != n || self.x.is_some_and(|x| x.nrows() != n) {
            return Err(Error::Dimension(alloc::format!("counts have {n} rows but design or weights disagree")));
        }
        if self.f.iter().chain(self.x.into_iter().flat_map(|x| x.iter())).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("design matrix"));
        }
        Ok(())
    }
}

/// Tree prior constants; `sigma_mu` is derived from the initial response.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TreeSettings {
    pub m: usize,
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
}

impl Default for TreeSettings {
    fn default() -> Self {
        TreeSettings { m: BartHyper::DEFAULT_TREES, alpha: BartHyper::DEFAULT_ALPHA, beta: BartHyper::DEFAULT_BETA, k: BartHyper::DEFAULT_K }
    }
}

/// Current values of all unknowns plus cached derived quantities.
#[derive(Debug, Clone)]
pub struct SamplerState {
    pub gamma: DVector<f64>,
    pub phi: Vec<f64>,
    pub ensemble: Option<TreeEnsemble>,
    pub sigma2: f64,
    pub omega: Vec<f64>,
    pub r: f64,
    pub h: f64,
    pub tau: f64,
    pub psi: Vec<f64>,
    pub z: Vec<f64>,
    pub kernel: SpatialKernel,
}

impl SamplerState {
    /// `G` at the training rows (zero without trees).
    pub fn tree_fit(&self) -> Vec<f64> {
        match &self.ensemble {
            Some(e) => e.fit().to_vec(),
            None => vec![0.0; self.phi.len()],
        }
    }

    pub fn lambda(&self) -> Vec<f64> {
        self.psi.iter().map(|&p| self.r * libm::exp(p)).collect()
    }
}

const SHIFT_STEP: f64 = 0.2;

fn gaussian_log_kernel(x: &DVector<f64>, mean: &DVector<f64>, precision: &DMatrix<f64>) -> f64 {
    let d = x - mean;
    -0.5 * d.dot(&(precision * &d))
}

/// One chain's transition kernel.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    problem: Problem<'a>,
    counts: Vec<u64>,
    hyper: Hyperparameters,
    gamma_precision: DMatrix<f64>,
    pg: PgSampler,
    state: SamplerState,
    tau_step: AdaptiveStep,
    shift_step: AdaptiveStep,
    intercept: Option<usize>,
    tree_stats: SweepStats,
}

impl<'a> Sampler<'a> {
    /// Starts from `gamma = 0`, `phi = 0`, root-leaf trees with `mu = 0`,
    /// `r = h = sigma^2 = 1`, `tau = 0` and `omega_i ~ PG(y_i + 1, 0)`.
    pub fn new<R: Rng + ?Sized>(
        problem: Problem<'a>,
        hyper: Hyperparameters,
        trees: TreeSettings,
        pg: PgSampler,
        tau_step: AdaptiveStep,
        rng: &mut R,
    ) -> Result<Self> {
        problem.validate()?;
        hyper.validate(problem.f.ncols())?;
        let n = problem.len();
        let gamma_precision = hyper.gamma_precision()?;
        let r = 1.0;
        let mut omega = Vec::with_capacity(n);
        for &y in problem.counts {
            omega.push(pg.sample(PgParameters::new(y as f64 + r, 0.0)?, rng)?);
        }
        let z: Vec<f64> = problem.counts.iter().zip(&omega).map(|(&y, &w)| augmented_response(y as f64, r, w)).collect();
        let ensemble = match problem.x {
            Some(x) if x.ncols() > 0 => {
                let bh = BartHyper::with_range(trees.m, trees.alpha, trees.beta, trees.k, &z)?;
                Some(TreeEnsemble::new(bh, x)?)
            }
            _ => None,
        };
        let state = SamplerState {
            gamma: DVector::zeros(problem.f.ncols()),
            phi: vec![0.0; n],
            ensemble,
            sigma2: 1.0,
            omega,
            r,
            h: 1.0,
            tau: 0.0,
            psi: vec![0.0; n],
            z,
            kernel: SpatialKernel::new(0.0, 1.0, problem.weights)?,
        };
        let intercept = (0..problem.f.ncols()).find(|&j| problem.f.column(j).iter().all(|&v| v == 1.0));
        let shift_step = AdaptiveStep::new(SHIFT_STEP, tau_step.interval(), tau_step.target())?;
        Ok(Sampler {
            problem,
            counts: problem.counts.to_vec(),
            hyper,
            gamma_precision,
            pg,
            state,
            tau_step,
            shift_step,
            intercept,
            tree_stats: SweepStats::default(),
        })
    }

    pub fn state(&self) -> &SamplerState {
        &self.state
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn hyper(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn tau_step(&self) -> &AdaptiveStep {
        &self.tau_step
    }

    pub fn shift_step(&self) -> &AdaptiveStep {
        &self.shift_step
    }

    /// Accumulated proposal/acceptance counts for tree moves.
    pub fn tree_stats(&self) -> SweepStats {
        self.tree_stats
    }

    /// Replaces the response, e.g. for joint-distribution simulation.
    pub fn set_counts(&mut self, counts: &[u64]) -> Result<()> {
        if counts.len() != self.counts.len() {
            return Err(Error::Dimension("replacement counts have the wrong length".into()));
        }
        self.counts.copy_from_slice(counts);
        self.refresh_z();
        Ok(())
    }

    fn fitted_linear(&self) -> Vec<f64> {
        (self.problem.f * &self.state.gamma).iter().copied().collect()
    }

    /// `psi = F gamma + G + phi` from scratch.
    fn refresh_psi(&mut self) -> Result<()> {
        let fg = self.fitted_linear();
        let g = self.state.tree_fit();
        for i in 0..self.state.psi.len() {
            self.state.psi[i] = fg[i] + g[i] + self.state.phi[i];
        }
        if self.state.psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("link"));
        }
        Ok(())
    }

    fn refresh_z(&mut self) {
        let r = self.state.r;
        for ((z, &y), &w) in self.state.z.iter_mut().zip(&self.counts).zip(&self.state.omega) {
            *z = augmented_response(y as f64, r, w);
        }
    }

    pub fn update_phi<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let target = residual(&self.state.z, &[&self.state.tree_fit(), &self.fitted_linear()]);
        let cond = phi_conditional(&self.state.omega, &target, self.state.kernel.omega_tilde())?;
        self.state.phi = cond.sample(rng).iter().copied().collect();
        self.refresh_psi()
    }

    pub fn update_gamma<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let target = residual(&self.state.z, &[&self.state.tree_fit(), &self.state.phi]);
        let cond = gamma_conditional(self.problem.f, &self.state.omega, &target, &self.gamma_precision, &self.hyper.zeta_gamma)?;
        self.state.gamma = cond.sample(rng);
        self.refresh_psi()
    }

    /// Draws `(gamma, phi)` jointly from their Gaussian conditional.
    pub fn update_linear<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let target = residual(&self.state.z, &[&self.state.tree_fit()]);
        let cond = linear_block_conditional(
            self.problem.f,
            &self.state.omega,
            &target,
            &self.gamma_precision,
            &self.hyper.zeta_gamma,
            self.state.kernel.omega_tilde(),
        )?;
        let joint = cond.sample(rng);
        let p = self.state.gamma.len();
        self.state.gamma = joint.rows(0, p).into_owned();
        self.state.phi = joint.rows(p, self.state.phi.len()).iter().copied().collect();
        self.refresh_psi()
    }

    /// Metropolis-Hastings move `r -> r e^u`, intercept `-> intercept - u`,
    /// which keeps every mean `r e^psi` fixed. `omega` is integrated out, so
    /// this must run between `update_r` and `update_omega`. No-op without an
    /// intercept column.
    pub fn update_shift<R: Rng + ?Sized>(&mut self, adapting: bool, rng: &mut R) -> Result<bool> {
        let Some(j) = self.intercept else { return Ok(false) };
        let u = self.shift_step.step() * rng.sample::<f64, _>(StandardNormal);
        let r = self.state.r;
        let r_new = r * libm::exp(u);
        let mut log_ratio = 0.0;
        for (&y, &psi) in self.counts.iter().zip(&self.state.psi) {
            log_ratio += nb_log_pmf(y, r_new, psi - u) - nb_log_pmf(y, r, psi);
        }
        // Gamma(r0, h) prior on r plus the log-scale Jacobian
        log_ratio += self.hyper.r0 * u - self.state.h * (r_new - r);
        let mut shifted = self.state.gamma.clone();
        shifted[j] -= u;
        log_ratio += gaussian_log_kernel(&shifted, &self.hyper.zeta_gamma, &self.gamma_precision)
            - gaussian_log_kernel(&self.state.gamma, &self.hyper.zeta_gamma, &self.gamma_precision);
        let accepted = log_ratio.is_finite() && libm::log(rng.random::<f64>()) < log_ratio;
        if accepted {
            self.state.r = r_new;
            self.state.gamma = shifted;
            for v in &mut self.state.psi {
                *v -= u;
            }
        }
        self.shift_step.record(accepted, adapting);
        Ok(accepted)
    }

    pub fn update_sigma2<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let q = self.state.kernel.spatial_quadratic(&self.state.phi);
        let (shape, rate) = sigma2_inv_posterior(&self.hyper, self.state.phi.len(), q);
        let precision = draw_gamma(shape, rate, "spatial precision", rng)?;
        self.state.sigma2 = 1.0 / precision;
        self.state.kernel.set_sigma2(self.state.sigma2)
    }

    /// Draws `r` with `omega` integrated out, then `Z` is refreshed.
    pub fn update_r<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let r = self.state.r;
        let tables: u64 = self.counts.iter().map(|&y| crt_count(y, r, rng)).sum();
        let (shape, rate) = r_posterior(&self.hyper, self.state.h, tables, &self.state.psi);
        self.state.r = draw_gamma(shape, rate, "negative binomial shape", rng)?;
        if !(self.state.r > 0.0) {
            return Err(Error::NonFinite("negative binomial shape"));
        }
        self.refresh_z();
        Ok(())
    }

    pub fn update_omega<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let r = self.state.r;
        for i in 0..self.counts.len() {
            let params = PgParameters::new(self.counts[i] as f64 + r, self.state.psi[i])?;
            self.state.omega[i] = self.pg.sample(params, rng)?;
        }
        self.refresh_z();
        Ok(())
    }

    pub fn update_h<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let (shape, rate) = h_posterior(&self.hyper, self.state.r);
        self.state.h = draw_gamma(shape, rate, "shape rate", rng)?;
        Ok(())
    }

    /// Random-walk Metropolis-Hastings step; returns whether it moved.
    pub fn update_tau<R: Rng + ?Sized>(&mut self, adapting: bool, rng: &mut R) -> Result<bool> {
        let w = self.problem.weights.sparse();
        let tau = self.state.tau;
        let proposal = tau + self.tau_step.step() * rng.sample::<f64, _>(StandardNormal);
        let log_ratio = tau_log_target(proposal, &self.state.phi, w, self.state.sigma2, &self.hyper)
            - tau_log_target(tau, &self.state.phi, w, self.state.sigma2, &self.hyper);
        let accepted = libm::log(rng.random::<f64>()) < log_ratio;
        if accepted {
            self.state.tau = proposal;
            self.state.kernel.set_tau(proposal, self.problem.weights)?;
        }
        self.tau_step.record(accepted, adapting);
        Ok(accepted)
    }

    pub fn update_trees<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let Some(x) = self.problem.x else { return Ok(()) };
        let partial = residual(&self.state.z, &[&self.state.phi, &self.fitted_linear()]);
        let Some(ensemble) = self.state.ensemble.as_mut() else { return Ok(()) };
        let stats = backfit_sweep(ensemble, x, &partial, &self.state.omega, rng)?;
        for i in 0..3 {
            self.tree_stats.proposed[i] += stats.proposed[i];
            self.tree_stats.accepted[i] += stats.accepted[i];
        }
        self.refresh_psi()
    }

    /// One full sweep: `(gamma, phi)`, `sigma^2`, `r`, the mean-preserving
    /// shift, `omega` (and `Z`), `h`, `tau`, trees.
    pub fn iterate<R: Rng + ?Sized>(&mut self, adapting: bool, rng: &mut R) -> Result<()> {
        self.update_linear(rng)?;
        self.update_sigma2(rng)?;
        self.update_r(rng)?;
        self.update_shift(adapting, rng)?;
        self.update_omega(rng)?;
        self.update_h(rng)?;
        self.update_tau(adapting, rng)?;
        self.update_trees(rng)?;
        self.refresh_z();
        Ok(())
    }

    /// Fresh `omega ~ PG(y + r, psi)`; used after the response is replaced.
    pub fn redraw_omega<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        self.update_omega(rng)
    }

    /// Overwrites the parameters that have closed-form priors, e.g. to start
    /// from a prior draw. Trees are left untouched.
    pub fn set_parameters(&mut self, gamma: DVector<f64>, phi: Vec<f64>, sigma2: f64, r: f64, h: f64, tau: f64) -> Result<()> {
        if gamma.len() != self.state.gamma.len() || phi.len() != self.state.phi.len() {
            return Err(Error::Dimension("parameter dimensions".into()));
        }
        self.state.gamma = gamma;
        self.state.phi = phi;
        self.state.sigma2 = sigma2;
        self.state.r = r;
        self.state.h = h;
        self.state.tau = tau;
        self.state.kernel.set_sigma2(sigma2)?;
        self.state.kernel.set_tau(tau, self.problem.weights)?;
        self.refresh_psi()?;
        self.refresh_z();
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn max_psi_drift(&self) -> f64 {
        let fg = self.fitted_linear();
        let g = match &self.state.ensemble {
            Some(e) => e.predict(self.problem.x.unwrap()),
            None => vec![0.0; fg.len()],
        };
        (0..fg.len()).map(|i| (self.state.psi[i] - fg[i] - g[i] - self.state.phi[i]).abs()).fold(0.0, f64::max)
    }
}
