use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::CutpointGrid;
use super::moves::{tree_move_step, MoveKind};
use super::tree::Tree;
use crate::{Error, Result};

/// Tree prior and leaf prior constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BartHyper {
    pub m: usize,
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
    pub sigma_mu: f64,
}

impl BartHyper {
    pub const DEFAULT_TREES: usize = 50;
    pub const DEFAULT_ALPHA: f64 = 0.95;
    pub const DEFAULT_BETA: f64 = 2.0;
    pub const DEFAULT_K: f64 = 2.0;

    pub fn new(m: usize, alpha: f64, beta: f64, k: f64, sigma_mu: f64) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidParameter("tree count must be at least 1".into()));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(alloc::format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(alloc::format!("beta must be non-negative, got {beta}")));
        }
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidParameter(alloc::format!("k must be positive, got {k}")));
        }
        if !(sigma_mu > 0.0 && sigma_mu.is_finite()) {
            return Err(Error::InvalidParameter(alloc::format!("sigma_mu must be positive, got {sigma_mu}")));
        }
        Ok(BartHyper { m, alpha, beta, k, sigma_mu })
    }

    /// Sets `sigma_mu = (max z - min z) / (2 k sqrt(m))`.
    pub fn with_range(m: usize, alpha: f64, beta: f64, k: f64, z: &[f64]) -> Result<Self> {
        let (lo, hi) = z.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::Degenerate("initial response has zero or non-finite range"));
        }
        let m_checked = m.max(1);
        Self::new(m, alpha, beta, k, range / (2.0 * k * libm::sqrt(m_checked as f64)))
    }

    /// Prior probability that a node at `depth` splits.
    pub fn split_probability(&self, depth: u32) -> f64 {
        self.alpha * libm::pow(1.0 + depth as f64, -self.beta)
    }
}

/// Acceptance counts from one sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepStats {
    pub proposed: [usize; 3],
    pub accepted: [usize; 3],
}

impl SweepStats {
    fn record(&mut self, kind: MoveKind, accepted: bool) {
        let i = kind as usize;
        self.proposed[i] += 1;
        self.accepted[i] += accepted as usize;
    }
}

/// `m` trees with their per-tree fits and the running total.
#[derive(Debug, Clone)]
pub struct TreeEnsemble {
    trees: Vec<Tree>,
    hyper: BartHyper,
    grid: CutpointGrid,
    fits: Vec<Vec<f64>>,
    total: Vec<f64>,
}

impl TreeEnsemble {
    /// All trees start as root leaves with `mu = 0`.
    pub fn new(hyper: BartHyper, x: &DMatrix<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::NoRows);
        }
        let n = x.nrows();
        Ok(TreeEnsemble {
            trees: vec![Tree::leaf(0.0); hyper.m],
            hyper,
            grid: CutpointGrid::from_matrix(x),
            fits: vec![vec![0.0; n]; hyper.m],
            total: vec![0.0; n],
        })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn hyper(&self) -> &BartHyper {
        &self.hyper
    }

    pub fn grid(&self) -> &CutpointGrid {
        &self.grid
    }

    /// `sum_j g_j` at the training rows.
    pub fn fit(&self) -> &[f64] {
        &self.total
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let mut out = vec![0.0; x.nrows()];
        for t in &self.trees {
            for (o, v) in out.iter_mut().zip(t.predict(x)) {
                *o += v;
            }
        }
        out
    }

    pub fn mean_depth(&self) -> f64 {
        self.trees.iter().map(|t| t.max_depth() as f64).sum::<f64>() / self.trees.len() as f64
    }
}

/// Updates every tree in turn against `partial - sum_{k != j} g_k`.
pub fn backfit_sweep<R: Rng + ?Sized>(
    ensemble: &mut TreeEnsemble,
    x: &DMatrix<f64>,
    partial: &[f64],
    weights: &[f64],
    rng: &mut R,
) -> Result<SweepStats> {
    let n = ensemble.total.len();
    if x.nrows() != n || partial.len() != n || weights.len() != n {
        return Err(Error::Dimension(alloc::format!(
            "sweep expects {n} rows, got x {} partial {} weights {}",
            x.nrows(),
            partial.len(),
            weights.len()
        )));
    }
    let mut stats = SweepStats::default();
    let mut residual = vec![0.0; n];
    let TreeEnsemble { trees, hyper, grid, fits, total } = ensemble;
    for (tree, fit) in trees.iter_mut().zip(fits.iter_mut()) {
        for i in 0..n {
            residual[i] = partial[i] - (total[i] - fit[i]);
        }
        for i in 0..n {
            total[i] -= fit[i];
        }
        let out = tree_move_step(tree, x, grid, &residual, weights, hyper, fit, rng)?;
        for i in 0..n {
            total[i] += fit[i];
        }
        stats.record(out.kind, out.accepted);
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn split_probability_enumeration() {
        let h = BartHyper::new(50, 0.95, 2.0, 2.0, 0.1).unwrap();
        assert_relative_eq!(h.split_probability(0), 0.95, epsilon = 1e-15);
        assert_relative_eq!(h.split_probability(1), 0.2375, epsilon = 1e-15);
    }

    #[test]
    fn hyper_validation() {
        assert!(BartHyper::new(0, 0.95, 2.0, 2.0, 1.0).is_err());
        assert!(BartHyper::new(1, 1.0, 2.0, 2.0, 1.0).is_err());
        assert!(BartHyper::new(1, 0.5, -1.0, 2.0, 1.0).is_err());
        assert!(BartHyper::new(1, 0.5, 2.0, 0.0, 1.0).is_err());
        assert!(BartHyper::new(1, 0.5, 2.0, 2.0, 0.0).is_err());
        let h = BartHyper::with_range(4, 0.95, 2.0, 2.0, &[-1.0, 3.0, 0.0]).unwrap();
        assert_relative_eq!(h.sigma_mu, 4.0 / (2.0 * 2.0 * 2.0));
    }

    fn noise_problem(n: usize, q: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, q, |_, _| rng.random::<f64>());
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        (x, z, rng)
    }

    #[test]
    fn incremental_total_matches_recomputation() {
        let (x, z, mut rng) = noise_problem(80, 3, 5);
        let z: Vec<f64> = z.iter().enumerate().map(|(i, v)| v + if x[(i, 0)] > 0.5 { 2.0 } else { 0.0 }).collect();
        let hyper = BartHyper::with_range(10, 0.95, 2.0, 2.0, &z).unwrap();
        let mut e = TreeEnsemble::new(hyper, &x).unwrap();
        let w = vec![1.0; 80];
        for _ in 0..100 {
            backfit_sweep(&mut e, &x, &z, &w, &mut rng).unwrap();
        }
        for (a, b) in e.fit().iter().zip(e.predict(&x)) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn single_tree_sweep_is_one_step() {
        let (x, z, _) = noise_problem(30, 2, 6);
        let hyper = BartHyper::new(1, 0.95, 2.0, 2.0, 0.5).unwrap();
        let w = vec![1.0; 30];
        let mut e = TreeEnsemble::new(hyper, &x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        backfit_sweep(&mut e, &x, &z, &w, &mut rng).unwrap();

        let mut t = Tree::leaf(0.0);
        let mut fit = vec![0.0; 30];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        tree_move_step(&mut t, &x, e.grid(), &z, &w, &hyper, &mut fit, &mut rng).unwrap();
        assert_eq!(e.trees()[0], t);
        assert_eq!(e.fit(), &fit[..]);
    }

    #[test]
    fn noise_keeps_trees_shallow() {
        let (x, z, mut rng) = noise_problem(100, 3, 7);
        let hyper = BartHyper::with_range(20, 0.95, 2.0, 2.0, &z).unwrap();
        let mut e = TreeEnsemble::new(hyper, &x).unwrap();
        let w = vec![1.0; 100];
        let mut depth = 0.0;
        for _ in 0..500 {
            backfit_sweep(&mut e, &x, &z, &w, &mut rng).unwrap();
            depth += e.mean_depth();
        }
        assert!(depth / 500.0 < 2.5, "mean depth {}", depth / 500.0);
    }

    #[test]
    fn dimension_mismatch() {
        let (x, z, mut rng) = noise_problem(10, 1, 8);
        let mut e = TreeEnsemble::new(BartHyper::new(2, 0.95, 2.0, 2.0, 1.0).unwrap(), &x).unwrap();
        assert!(backfit_sweep(&mut e, &x, &z[..9], &[1.0; 10], &mut rng).is_err());
    }
}
