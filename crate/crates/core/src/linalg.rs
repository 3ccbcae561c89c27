//! Small dense/sparse helpers on top of nalgebra.

use alloc::vec::Vec;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Row-compressed sparse square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    n: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let rows = (0..n)
            .map(|i| {
                (0..m.ncols())
                    .filter(|&j| m[(i, j)] != 0.0)
                    .map(|j| (j, m[(i, j)]))
                    .collect()
            })
            .collect();
        SparseRows { n, rows }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// Maximum absolute row sum (the induced infinity norm).
    pub fn inf_norm(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.iter().map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&(j, a)| a * v[j]).sum())
            .collect()
    }

    /// `scale * self * dense`, computed column by column.
    pub fn mul_dense(&self, dense: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
        let cols = dense.ncols();
        let mut out = DMatrix::zeros(self.n, cols);
        for c in 0..cols {
            let src = dense.column(c);
            let mut dst = out.column_mut(c);
            for (i, row) in self.rows.iter().enumerate() {
                let mut acc = 0.0;
                for &(j, a) in row {
                    acc += a * src[j];
                }
                dst[i] = scale * acc;
            }
        }
        out
    }
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Gaussian specified through its precision matrix `P` and linear term `b`:
/// mean `P^{-1} b`, covariance `P^{-1}`.
#[derive(Debug, Clone)]
pub struct PrecisionGaussian {
    chol: Cholesky<f64, Dyn>,
    mean: DVector<f64>,
}

impl PrecisionGaussian {
    pub fn new(precision: DMatrix<f64>, linear: &DVector<f64>, what: &'static str) -> Result<Self> {
        let chol = precision.cholesky().ok_or(Error::NotPositiveDefinite(what))?;
        let mean = chol.solve(linear);
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(what));
        }
        Ok(PrecisionGaussian { chol, mean })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    /// `mean + L^{-T} xi` with `P = L L^T`, `xi ~ Normal(0, I)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let xi = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let shift = self
            .chol
            .l_dirty()
            .tr_solve_lower_triangular(&xi)
            .expect("cholesky factor has a positive diagonal");
        &self.mean + shift
    }
}
