use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::SpatialWeights;
use crate::pg::PgSampler;

struct Toy {
    counts: Vec<u64>,
    f: DMatrix<f64>,
    x: DMatrix<f64>,
    w: SpatialWeights,
}

fn toy(n: usize, seed: u64) -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>());
    let f = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x[(i, 0)] - 0.5 });
    let counts = (0..n).map(|i| draw_nb(2.0, 0.3 + f[(i, 1)] + if x[(i, 1)] > 0.5 { 0.8 } else { 0.0 }, &mut rng).unwrap()).collect();
    let c = DMatrix::from_fn(n, n, |i, j| if (i as i64 - j as i64).abs() == 1 { 1.0 } else { 0.0 });
    Toy { counts, f, x, w: SpatialWeights::from_proximity(c).unwrap() }
}

fn problem(t: &Toy) -> Problem<'_> {
    Problem { counts: &t.counts, f: &t.f, x: Some(&t.x), weights: &t.w }
}

#[test]
fn psi_cache_stays_exact() {
    let t = toy(25, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let hyper = Hyperparameters::default_for(2);
    let trees = TreeSettings { m: 5, ..TreeSettings::default() };
    let mut s = Sampler::new(problem(&t), hyper, trees, PgSampler::default(), AdaptiveStep::new(0.5, 50, 0.44).unwrap(), &mut rng).unwrap();
    for _ in 0..30 {
        s.update_phi(&mut rng).unwrap();
        assert!(s.max_psi_drift() < 1e-10);
        s.update_gamma(&mut rng).unwrap();
        assert!(s.max_psi_drift() < 1e-10);
        s.update_sigma2(&mut rng).unwrap();
        s.update_r(&mut rng).unwrap();
        let mean_before = s.state().lambda();
        s.update_shift(true, &mut rng).unwrap();
        assert!(s.max_psi_drift() < 1e-10);
        for (a, b) in s.state().lambda().iter().zip(&mean_before) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
        s.update_linear(&mut rng).unwrap();
        assert!(s.max_psi_drift() < 1e-10);
        s.update_omega(&mut rng).unwrap();
        s.update_h(&mut rng).unwrap();
        s.update_tau(true, &mut rng).unwrap();
        s.update_trees(&mut rng).unwrap();
        assert!(s.max_psi_drift() < 1e-10);
        let st = s.state();
        for i in 0..25 {
            assert_eq!(st.z[i], augmented_response(t.counts[i] as f64, st.r, st.omega[i]));
            assert!(st.omega[i] > 0.0);
        }
        assert!(st.r > 0.0 && st.sigma2 > 0.0 && st.h > 0.0);
    }
}

#[test]
fn retention_rule() {
    let c = ChainConfig::default();
    assert_eq!(c.retained(), 2500);
    assert_eq!((0..c.n_iter).filter(|&it| c.is_retained(it)).count(), 2500);
    let c = ChainConfig { n_iter: 7, burn_in: 2, thin: 2, ..ChainConfig::default() };
    let kept: Vec<usize> = (0..7).filter(|&it| c.is_retained(it)).collect();
    assert_eq!(kept, vec![3, 5]);
    assert!(ChainConfig { thin: 0, ..c }.validate().is_err());
    assert!(ChainConfig { burn_in: 8, ..c }.validate().is_err());
}

#[test]
fn short_chain_counts_and_warning() {
    let t = toy(15, 3);
    let hyper = Hyperparameters::default_for(2);
    let config = ChainConfig { n_iter: 40, burn_in: 20, thin: 2, seed: 11, trees: TreeSettings { m: 3, ..TreeSettings::default() }, ..ChainConfig::default() };
    let draws = run_chains(problem(&t), &hyper, &config, 2).unwrap();
    assert_eq!(draws.n_chains(), 2);
    assert!(draws.chains.iter().all(|c| c.draws.len() == 10 && c.warnings.is_empty()));
    assert!(draws.chains[0].draws[0].trees.len() >= 3);
    assert_eq!(draws.scalar_series().len(), scalar_names(2).len());

    let empty = ChainConfig { n_iter: 20, burn_in: 20, ..config };
    let c = run_chain(problem(&t), &hyper, &empty, 0).unwrap();
    assert!(c.draws.is_empty());
    assert_eq!(c.warnings.len(), 1);
    assert!(run_chains(problem(&t), &hyper, &config, 0).is_err());
}

#[test]
fn equal_seeds_equal_draws_and_chains_differ() {
    let t = toy(15, 4);
    let hyper = Hyperparameters::default_for(2);
    let config = ChainConfig { n_iter: 30, burn_in: 10, thin: 1, seed: 5, trees: TreeSettings { m: 4, ..TreeSettings::default() }, ..ChainConfig::default() };
    let a = run_chains(problem(&t), &hyper, &config, 2).unwrap();
    let b = run_chains(problem(&t), &hyper, &config, 2).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.chains[0].draws, a.chains[1].draws);
    assert_ne!(chain_seed(5, 0), chain_seed(5, 1));
    assert_ne!(chain_seed(5, 0), chain_seed(6, 0));
}

#[test]
fn bart_off_has_no_trees() {
    let t = toy(15, 5);
    let hyper = Hyperparameters::default_for(2);
    let config = ChainConfig { n_iter: 10, burn_in: 5, thin: 1, bart: false, ..ChainConfig::default() };
    let c = run_chain(problem(&t), &hyper, &config, 0).unwrap();
    assert!(c.draws.iter().all(|d| d.trees.is_empty() && d.split_counts == vec![0, 0]));
    assert_eq!(c.sigma_mu, None);
}

#[test]
fn tau_chain_with_zero_phi_samples_prior() {
    let t = toy(6, 6);
    let mut hyper = Hyperparameters::default_for(2);
    hyper.zeta_tau = 0.4;
    hyper.sigma2_tau = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut s = Sampler::new(problem(&t), hyper, TreeSettings::default(), PgSampler::default(), AdaptiveStep::new(1.0, 50, 0.44).unwrap(), &mut rng).unwrap();
    s.set_parameters(DVector::zeros(2), vec![0.0; 6], 1.0, 1.0, 1.0, 0.0).unwrap();
    let n = 40_000;
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        s.update_tau(false, &mut rng).unwrap();
        draws.push(s.state().tau);
    }
    let m = crate::math::mean(&draws);
    let v = crate::math::sample_variance(&draws);
    // Random-walk output is autocorrelated; allow a generous band.
    assert!((m - 0.4).abs() < 0.05, "mean {m}");
    assert!((v - 0.5).abs() < 0.08, "variance {v}");
}

#[test]
fn identical_proposal_always_accepted() {
    let t = toy(6, 8);
    let hyper = Hyperparameters::default_for(2);
    let w = t.w.sparse();
    let phi = [0.3, -0.2, 0.5, 0.1, 0.0, -0.4];
    let a = tau_log_target(0.7, &phi, w, 0.5, &hyper);
    assert_eq!(a - tau_log_target(0.7, &phi, w, 0.5, &hyper), 0.0);
}

#[test]
fn shift_is_noop_without_intercept() {
    let mut t = toy(10, 4);
    for i in 0..10 {
        t.f[(i, 0)] = 0.5 + i as f64;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = Sampler::new(problem(&t), Hyperparameters::default_for(2), TreeSettings::default(), PgSampler::default(), AdaptiveStep::new(0.5, 50, 0.44).unwrap(), &mut rng).unwrap();
    let before = s.state().clone();
    assert!(!s.update_shift(false, &mut rng).unwrap());
    assert_eq!(s.state().r, before.r);
    assert_eq!(s.state().gamma, before.gamma);
    assert_eq!(s.shift_step().acceptance_rate(), None);
}
