//! Sum-of-trees link component.
//!
//! Trees use the rule "`x[var] < value` goes left". Leaf parameters have a
//! `Normal(0, sigma_mu^2)` prior and the data enter through residuals with
//! per-row precisions `omega_i`, so both the leaf posterior and the marginal
//! likelihood of a tree are available in closed form.

mod ensemble;
mod grid;
mod importance;
mod moves;
mod tree;

pub use ensemble::{backfit_sweep, BartHyper, SweepStats, TreeEnsemble};
pub use grid::CutpointGrid;
pub use importance::{inclusion_proportions, split_counts, InclusionSummary};
pub use moves::{leaf_posterior, log_marginal_tree, select_move, tree_move_step, MoveKind, StepOutcome, GROW_PROBABILITY, PRUNE_PROBABILITY};
pub use tree::{NodeKind, NodeRecord, RecordKind, Tree, TreeNode};
