use alloc::vec::Vec;

use nalgebra::DMatrix;

/// Sorted unique observed values of every predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct CutpointGrid {
    values: Vec<Vec<f64>>,
}

impl CutpointGrid {
    pub fn from_matrix(x: &DMatrix<f64>) -> Self {
        let values = (0..x.ncols())
            .map(|j| {
                let mut col: Vec<f64> = x.column(j).iter().copied().collect();
                col.sort_by(f64::total_cmp);
                col.dedup();
                col
            })
            .collect();
        CutpointGrid { values }
    }

    pub fn n_vars(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self, var: usize) -> &[f64] {
        &self.values[var]
    }

    /// Cutpoints `v` with `lo < v <= hi`: exactly those that leave at least
    /// one row with `x >= v` and one with `x < v` when `lo`/`hi` are the
    /// minimum and maximum of the node's rows.
    pub fn available(&self, var: usize, lo: f64, hi: f64) -> &[f64] {
        let g = &self.values[var];
        let start = g.partition_point(|&v| v <= lo);
        let end = g.partition_point(|&v| v <= hi);
        &g[start..end.max(start)]
    }
}
