use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::ensemble::BartHyper;
use super::grid::CutpointGrid;
use super::tree::{NodeKind, Tree};
use crate::{Error, Result};

pub const GROW_PROBABILITY: f64 = 0.25;
pub const PRUNE_PROBABILITY: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoveKind {
    Grow,
    Prune,
    Change,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub kind: MoveKind,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, Default)]
struct LeafStats {
    count: usize,
    sum_w: f64,
    sum_wr: f64,
}

impl LeafStats {
    fn add(&mut self, r: f64, w: f64) {
        self.count += 1;
        self.sum_w += w;
        self.sum_wr += w * r;
    }

    fn merge(a: LeafStats, b: LeafStats) -> LeafStats {
        LeafStats { count: a.count + b.count, sum_w: a.sum_w + b.sum_w, sum_wr: a.sum_wr + b.sum_wr }
    }

    /// `(mean, variance)` with `v = 1/(prior_prec + sum w)`.
    fn posterior(&self, prior_prec: f64) -> (f64, f64) {
        let v = 1.0 / (prior_prec + self.sum_w);
        (v * self.sum_wr, v)
    }

    /// Log marginal likelihood up to terms shared by all trees.
    fn log_marginal(&self, prior_prec: f64) -> f64 {
        let (_, v) = self.posterior(prior_prec);
        0.5 * libm::log(prior_prec * v) + 0.5 * self.sum_wr * self.sum_wr * v
    }
}

fn stats_of(rows: &[usize], residuals: &[f64], weights: &[f64]) -> LeafStats {
    let mut s = LeafStats::default();
    for &i in rows {
        s.add(residuals[i], weights[i]);
    }
    s
}

/// Conjugate posterior of one leaf parameter: variance
/// `1/(sigma_mu^-2 + sum w)` and mean `variance * sum(w r)`.
pub fn leaf_posterior(residuals: &[f64], weights: &[f64], sigma_mu: f64) -> Result<(f64, f64)> {
    if residuals.is_empty() {
        return Err(Error::InvalidTree("empty leaf"));
    }
    if residuals.len() != weights.len() {
        return Err(Error::Dimension("residuals and weights differ in length".into()));
    }
    let mut s = LeafStats::default();
    for (&r, &w) in residuals.iter().zip(weights) {
        s.add(r, w);
    }
    Ok(s.posterior(1.0 / (sigma_mu * sigma_mu)))
}

/// Rows reaching each node, indexed by node id (empty for decision nodes).
fn leaf_rows(tree: &Tree, x: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let mut rows = vec![Vec::new(); tree.nodes().len()];
    for r in 0..x.nrows() {
        rows[tree.leaf_index(x, r)].push(r);
    }
    rows
}

/// Sum over leaves of the closed-form leaf marginal likelihood.
pub fn log_marginal_tree(tree: &Tree, x: &DMatrix<f64>, residuals: &[f64], weights: &[f64], sigma_mu: f64) -> Result<f64> {
    let prior_prec = 1.0 / (sigma_mu * sigma_mu);
    let rows = leaf_rows(tree, x);
    let mut total = 0.0;
    for leaf in tree.leaves() {
        if rows[leaf].is_empty() {
            return Err(Error::InvalidTree("empty leaf"));
        }
        total += stats_of(&rows[leaf], residuals, weights).log_marginal(prior_prec);
    }
    Ok(total)
}

/// Draws the proposal type; trees without decision nodes can only grow.
pub fn select_move<R: Rng + ?Sized>(tree: &Tree, rng: &mut R) -> MoveKind {
    if tree.is_root_leaf() {
        return MoveKind::Grow;
    }
    let u: f64 = rng.random();
    if u < GROW_PROBABILITY {
        MoveKind::Grow
    } else if u < GROW_PROBABILITY + PRUNE_PROBABILITY {
        MoveKind::Prune
    } else {
        MoveKind::Change
    }
}

fn grow_probability(tree_is_root: bool) -> f64 {
    if tree_is_root {
        1.0
    } else {
        GROW_PROBABILITY
    }
}

/// Splittable variables for a set of rows, with their available cutpoints.
fn candidate_rules<'g>(rows: &[usize], x: &DMatrix<f64>, grid: &'g CutpointGrid) -> Vec<(usize, &'g [f64])> {
    (0..grid.n_vars())
        .filter_map(|var| {
            let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(x[(r, var)]), hi.max(x[(r, var)])));
            let cuts = grid.available(var, lo, hi);
            (!cuts.is_empty()).then_some((var, cuts))
        })
        .collect()
}

fn partition(rows: &[usize], x: &DMatrix<f64>, var: usize, value: f64) -> (Vec<usize>, Vec<usize>) {
    rows.iter().partition(|&&r| x[(r, var)] < value)
}

/// `log[ P(split at d) (1 - P(split at d+1))^2 / (1 - P(split at d)) ]`.
fn log_split_prior_ratio(hyper: &BartHyper, depth: u32) -> f64 {
    let p = hyper.split_probability(depth);
    let child = hyper.split_probability(depth + 1);
    libm::log(p) + 2.0 * libm::log1p(-child) - libm::log1p(-p)
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    let u: f64 = rng.random();
    libm::log(u) < log_ratio
}

/// One Metropolis-Hastings move over tree structure, followed by a Gibbs draw
/// of every leaf parameter. `fit` receives the tree's prediction for each
/// training row.
pub fn tree_move_step<R: Rng + ?Sized>(
    tree: &mut Tree,
    x: &DMatrix<f64>,
    grid: &CutpointGrid,
    residuals: &[f64],
    weights: &[f64],
    hyper: &BartHyper,
    fit: &mut [f64],
    rng: &mut R,
) -> Result<StepOutcome> {
    let prior_prec = 1.0 / (hyper.sigma_mu * hyper.sigma_mu);
    let rows = leaf_rows(tree, x);
    let kind = select_move(tree, rng);
    let accepted = match kind {
        MoveKind::Grow => {
            let leaves = tree.leaves();
            let leaf = leaves[rng.random_range(0..leaves.len())];
            let candidates = candidate_rules(&rows[leaf], x, grid);
            if candidates.is_empty() {
                false
            } else {
                let (var, cuts) = candidates[rng.random_range(0..candidates.len())];
                let value = cuts[rng.random_range(0..cuts.len())];
                let (left, right) = partition(&rows[leaf], x, var, value);
                if left.is_empty() || right.is_empty() {
                    false
                } else {
                    let before = stats_of(&rows[leaf], residuals, weights).log_marginal(prior_prec);
                    let after = stats_of(&left, residuals, weights).log_marginal(prior_prec) + stats_of(&right, residuals, weights).log_marginal(prior_prec);
                    let mut proposed = tree.clone();
                    proposed.grow(leaf, var, value);
                    let nogs_after = proposed.nogs().len() as f64;
                    let log_ratio = libm::log(PRUNE_PROBABILITY) - libm::log(grow_probability(tree.is_root_leaf())) + libm::log(leaves.len() as f64)
                        - libm::log(nogs_after)
                        + log_split_prior_ratio(hyper, tree.node(leaf).depth)
                        + after
                        - before;
                    let ok = accept(log_ratio, rng);
                    if ok {
                        *tree = proposed;
                    }
                    ok
                }
            }
        }
        MoveKind::Prune => {
            let nogs = tree.nogs();
            let node = nogs[rng.random_range(0..nogs.len())];
            let NodeKind::Split { left, right, .. } = tree.node(node).kind else {
                return Err(Error::InvalidTree("nog is not a decision node"));
            };
            let sl = stats_of(&rows[left], residuals, weights);
            let sr = stats_of(&rows[right], residuals, weights);
            let merged = LeafStats::merge(sl, sr);
            let leaves_after = (tree.leaves().len() - 1) as f64;
            let becomes_root = node == 0;
            let log_ratio = libm::log(grow_probability(becomes_root)) - libm::log(PRUNE_PROBABILITY) + libm::log(nogs.len() as f64) - libm::log(leaves_after)
                - log_split_prior_ratio(hyper, tree.node(node).depth)
                + merged.log_marginal(prior_prec)
                - sl.log_marginal(prior_prec)
                - sr.log_marginal(prior_prec);
            let ok = accept(log_ratio, rng);
            if ok {
                tree.prune(node);
            }
            ok
        }
        MoveKind::Change => {
            let nogs = tree.nogs();
            let node = nogs[rng.random_range(0..nogs.len())];
            let NodeKind::Split { left, right, .. } = tree.node(node).kind else {
                return Err(Error::InvalidTree("nog is not a decision node"));
            };
            let mut node_rows = rows[left].clone();
            node_rows.extend_from_slice(&rows[right]);
            let candidates = candidate_rules(&node_rows, x, grid);
            if candidates.is_empty() {
                false
            } else {
                let (var, cuts) = candidates[rng.random_range(0..candidates.len())];
                let value = cuts[rng.random_range(0..cuts.len())];
                let (new_left, new_right) = partition(&node_rows, x, var, value);
                if new_left.is_empty() || new_right.is_empty() {
                    false
                } else {
                    let before = stats_of(&rows[left], residuals, weights).log_marginal(prior_prec) + stats_of(&rows[right], residuals, weights).log_marginal(prior_prec);
                    let after = stats_of(&new_left, residuals, weights).log_marginal(prior_prec) + stats_of(&new_right, residuals, weights).log_marginal(prior_prec);
                    // Proposal and rule-prior terms cancel for a nog.
                    let ok = accept(after - before, rng);
                    if ok {
                        tree.set_rule(node, var, value);
                    }
                    ok
                }
            }
        }
    };

    let rows = if accepted { leaf_rows(tree, x) } else { rows };
    for leaf in tree.leaves() {
        if rows[leaf].is_empty() {
            return Err(Error::InvalidTree("empty leaf"));
        }
        let (mean, var) = stats_of(&rows[leaf], residuals, weights).posterior(prior_prec);
        let z: f64 = rng.sample(StandardNormal);
        let mu = mean + libm::sqrt(var) * z;
        tree.set_mu(leaf, mu);
        for &r in &rows[leaf] {
            fit[r] = mu;
        }
    }
    Ok(StepOutcome { kind, accepted })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Trapezoidal quadrature of `prod Normal(r_i | mu, 1/w_i) * Normal(mu | 0, s^2)`.
    fn quadrature(res: &[f64], w: &[f64], sigma_mu: f64) -> (f64, f64, f64) {
        let lik = |mu: f64| -> f64 {
            let mut lp = -0.5 * mu * mu / (sigma_mu * sigma_mu) - 0.5 * libm::log(2.0 * core::f64::consts::PI * sigma_mu * sigma_mu);
            for (&r, &wi) in res.iter().zip(w) {
                lp += 0.5 * libm::log(wi / (2.0 * core::f64::consts::PI)) - 0.5 * wi * (r - mu) * (r - mu);
            }
            libm::exp(lp)
        };
        let (a, b, n) = (-15.0, 15.0, 300_000);
        let h = (b - a) / n as f64;
        let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for k in 0..=n {
            let mu = a + k as f64 * h;
            let c = if k == 0 || k == n { 0.5 } else { 1.0 };
            let f = lik(mu) * c * h;
            z += f;
            m1 += f * mu;
            m2 += f * mu * mu;
        }
        let mean = m1 / z;
        (z, mean, m2 / z - mean * mean)
    }

    /// The shared constants dropped from the closed form.
    fn dropped_constants(res: &[f64], w: &[f64]) -> f64 {
        res.iter().zip(w).map(|(&r, &wi)| 0.5 * libm::log(wi / (2.0 * core::f64::consts::PI)) - 0.5 * wi * r * r).sum()
    }

    #[test]
    fn leaf_posterior_examples() {
        let (m, v) = leaf_posterior(&[2.0], &[1.0], 1.0).unwrap();
        assert_eq!((m, v), (1.0, 0.5));
        let (m, _) = leaf_posterior(&[1.0, 2.0, 6.0], &[1.0; 3], 1e8).unwrap();
        assert_relative_eq!(m, 3.0, epsilon = 1e-12);
        assert!(leaf_posterior(&[], &[], 1.0).is_err());
    }

    #[test]
    fn leaf_posterior_matches_quadrature() {
        let res = [0.4, -1.3, 2.2];
        let w = [0.7, 2.5, 0.3];
        let (m, v) = leaf_posterior(&res, &w, 0.8).unwrap();
        let (_, qm, qv) = quadrature(&res, &w, 0.8);
        assert_relative_eq!(m, qm, epsilon = 1e-8);
        assert_relative_eq!(v, qv, epsilon = 1e-8);
    }

    #[test]
    fn log_marginal_matches_quadrature_and_plug_in() {
        let res = [0.4, -1.3, 2.2];
        let w = [0.7, 2.5, 0.3];
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let lm = log_marginal_tree(&Tree::leaf(0.0), &x, &res, &w, 0.8).unwrap();
        let (z, _, _) = quadrature(&res, &w, 0.8);
        assert_relative_eq!(lm + dropped_constants(&res, &w), libm::log(z), epsilon = 1e-8);

        let one = DMatrix::from_row_slice(1, 1, &[0.0]);
        let sigma_mu: f64 = 0.5;
        let a = 1.0 / (sigma_mu * sigma_mu);
        let lm = log_marginal_tree(&Tree::leaf(0.0), &one, &[0.0], &[1.0], sigma_mu).unwrap();
        assert_relative_eq!(lm, 0.5 * libm::log(a / (a + 1.0)), epsilon = 1e-15);
    }

    #[test]
    fn log_marginal_invariant_to_leaf_relabelling() {
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let res = [1.0, -0.5, 0.2, 3.0];
        let w = [1.0, 2.0, 0.5, 1.5];
        let a = Tree::split(0, 2.0, Tree::leaf(1.0), Tree::leaf(2.0));
        let b = Tree::split(0, 2.0, Tree::leaf(-7.0), Tree::leaf(9.0));
        assert_eq!(log_marginal_tree(&a, &x, &res, &w, 1.0).unwrap(), log_marginal_tree(&b, &x, &res, &w, 1.0).unwrap());
        let empty = Tree::split(0, 10.0, Tree::leaf(0.0), Tree::leaf(0.0));
        assert!(log_marginal_tree(&empty, &x, &res, &w, 1.0).is_err());
    }

    #[test]
    fn root_tree_only_grows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = Tree::leaf(0.0);
        assert!((0..1000).all(|_| select_move(&t, &mut rng) == MoveKind::Grow));
    }

    #[test]
    fn grow_without_cutpoints_is_rejected() {
        let x = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]);
        let grid = CutpointGrid::from_matrix(&x);
        let hyper = BartHyper::new(1, 0.95, 2.0, 2.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut t = Tree::leaf(0.0);
        let mut fit = [0.0; 3];
        for _ in 0..50 {
            let out = tree_move_step(&mut t, &x, &grid, &[1.0, 2.0, 3.0], &[1.0; 3], &hyper, &mut fit, &mut rng).unwrap();
            assert_eq!(out, StepOutcome { kind: MoveKind::Grow, accepted: false });
        }
        assert!(t.is_root_leaf());
    }

    /// Exact two-topology posterior: root leaf versus the single available
    /// split, enumerated in closed form.
    #[test]
    fn two_topology_visit_frequencies() {
        let x = DMatrix::from_row_slice(6, 1, &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let res = [-0.6, -0.4, -0.5, 0.5, 0.4, 0.6];
        let w = [1.0; 6];
        let grid = CutpointGrid::from_matrix(&x);
        let hyper = BartHyper::new(1, 0.95, 2.0, 2.0, 0.7).unwrap();
        let prec = 1.0 / (0.7 * 0.7);

        let root = stats_of(&[0, 1, 2, 3, 4, 5], &res, &w).log_marginal(prec);
        let split = stats_of(&[0, 1, 2], &res, &w).log_marginal(prec) + stats_of(&[3, 4, 5], &res, &w).log_marginal(prec);
        let p0 = hyper.split_probability(0);
        let p1 = hyper.split_probability(1);
        let log_root = libm::log1p(-p0) + root;
        let log_split = libm::log(p0) + 2.0 * libm::log1p(-p1) + split;
        let exact = 1.0 / (1.0 + libm::exp(log_root - log_split));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = Tree::leaf(0.0);
        let mut fit = [0.0; 6];
        let n = 200_000;
        let mut visits = 0usize;
        let mut prev = false;
        let mut switches = 0usize;
        for _ in 0..n {
            tree_move_step(&mut t, &x, &grid, &res, &w, &hyper, &mut fit, &mut rng).unwrap();
            let s = !t.is_root_leaf();
            visits += s as usize;
            switches += (s != prev) as usize;
            prev = s;
        }
        let freq = visits as f64 / n as f64;
        // Effective sample size from the two-state switching rate.
        let ess = (switches as f64).max(1.0);
        let se = libm::sqrt(exact * (1.0 - exact) / ess) * 2.0;
        assert!((freq - exact).abs() < 4.0 * se + 1e-3, "freq {freq}, exact {exact}, se {se}");
    }

    #[test]
    fn splits_concentrate_at_step() {
        let n = 100;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let x = DMatrix::from_column_slice(n, 1, &xs);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let res: Vec<f64> = xs.iter().map(|&v| if v > 0.5 { 1.0 } else { -1.0 } + 0.2 * rng.sample::<f64, _>(StandardNormal)).collect();
        let w = vec![4.0; n];
        let grid = CutpointGrid::from_matrix(&x);
        let hyper = BartHyper::new(1, 0.95, 2.0, 2.0, 1.0).unwrap();
        let mut t = Tree::leaf(0.0);
        let mut fit = vec![0.0; n];
        let mut hist = [0usize; 10];
        for _ in 0..2000 {
            tree_move_step(&mut t, &x, &grid, &res, &w, &hyper, &mut fit, &mut rng).unwrap();
            for node in t.nodes() {
                if let NodeKind::Split { value, .. } = node.kind {
                    hist[((value * 10.0) as usize).min(9)] += 1;
                }
            }
        }
        let mode = (0..10).max_by_key(|&b| hist[b]).unwrap();
        assert!(mode == 4 || mode == 5, "histogram {hist:?}");
    }
}
