use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::tree::Tree;
use crate::math::quantile;
use crate::{Error, Result};

/// Split-rule occurrences per predictor over a set of trees.
pub fn split_counts(trees: &[Tree], n_vars: usize) -> Vec<usize> {
    let mut counts = vec![0; n_vars];
    for t in trees {
        for v in t.split_vars() {
            counts[v] += 1;
        }
    }
    counts
}

/// Posterior mean and central 95% interval of each predictor's share of
/// split rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionSummary {
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Draws without any split count as uniform over predictors.
pub fn inclusion_proportions(draws: &[Vec<usize>]) -> Result<InclusionSummary> {
    let q = draws.first().ok_or(Error::Input("no retained draws".into()))?.len();
    if q == 0 {
        return Err(Error::Input("no predictors".into()));
    }
    let mut per_var: Vec<Vec<f64>> = vec![Vec::with_capacity(draws.len()); q];
    for d in draws {
        if d.len() != q {
            return Err(Error::Dimension("draws disagree on predictor count".into()));
        }
        let total: usize = d.iter().sum();
        for (j, &c) in d.iter().enumerate() {
            per_var[j].push(if total == 0 { 1.0 / q as f64 } else { c as f64 / total as f64 });
        }
    }
    let mut summary = InclusionSummary { mean: Vec::with_capacity(q), lower: Vec::with_capacity(q), upper: Vec::with_capacity(q) };
    for v in per_var {
        summary.mean.push(v.iter().sum::<f64>() / v.len() as f64);
        summary.lower.push(quantile(&v, 0.025));
        summary.upper.push(quantile(&v, 0.975));
    }
    Ok(summary)
}
