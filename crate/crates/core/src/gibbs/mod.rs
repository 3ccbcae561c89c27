//! Polya-Gamma augmented Gibbs sampler.
//!
//! Conditional on `omega_i ~ PG(y_i + r, psi_i)` the negative binomial
//! likelihood of `psi` is Gaussian with mean `Z_i = (y_i - r) / (2 omega_i)`
//! and precision `omega_i`, so `phi`, `gamma` and the trees have conjugate
//! updates. `r` is drawn with `omega` integrated out (through table counts)
//! and `omega` is redrawn right after it, which keeps the pair consistent.

mod chain;
mod hyper;
pub mod joint;
mod sampler;
mod updates;

pub use chain::{chain_seed, run_chain, run_chains, scalar_names, ChainConfig, ChainDraws, Draw, PosteriorDraws};
pub use hyper::Hyperparameters;
pub use sampler::{Problem, Sampler, SamplerState, TreeSettings};
pub use updates::{
    augmented_response, crt_count, draw_gamma, draw_nb, gamma_conditional, h_posterior, linear_block_conditional, phi_conditional, r_posterior, sigma2_inv_posterior,
    tau_log_target, AdaptiveStep, OMEGA_FLOOR,
};

#[cfg(test)]
mod tests;
