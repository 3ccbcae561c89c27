use std::thread;

use nbbart_core::gibbs::{run_chain, ChainDraws, ChainConfig, Hyperparameters, PosteriorDraws, Problem};
use nbbart_core::{Error, Result};

/// Runs each chain on its own thread. Chain `c` uses the same seed as in
/// [`nbbart_core::gibbs::run_chains`], so the merged draws are identical to
/// a sequential run.
pub fn run_chains_parallel(problem: Problem<'_>, hyper: &Hyperparameters, config: &ChainConfig, n_chains: usize) -> Result<PosteriorDraws> {
    if n_chains == 0 {
        return Err(Error::InvalidParameter("at least one chain is required".into()));
    }
    config.validate()?;
    let results: Vec<Result<ChainDraws>> = thread::scope(|s| {
        let handles: Vec<_> = (0..n_chains).map(|c| s.spawn(move || run_chain(problem, hyper, config, c))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Input("chain thread panicked".into()))))
            .collect()
    });
    let chains = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(PosteriorDraws { config: *config, chains })
}
