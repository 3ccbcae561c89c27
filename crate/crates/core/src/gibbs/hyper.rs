use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Prior constants. Gamma distributions are shape/rate throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    pub zeta_gamma: DVector<f64>,
    pub delta_gamma: DMatrix<f64>,
    pub zeta_tau: f64,
    pub sigma2_tau: f64,
    pub b_sigma2: f64,
    pub c_sigma2: f64,
    pub r0: f64,
    pub b0: f64,
    pub c0: f64,
}

impl Hyperparameters {
    pub const DEFAULT_GAMMA_VARIANCE: f64 = 100.0;
    pub const DEFAULT_SIGMA2_TAU: f64 = 10.0;
    pub const DEFAULT_GAMMA_SHAPE_RATE: f64 = 0.01;
    pub const DEFAULT_R0: f64 = 1.0;

    /// Weakly informative defaults for a linear part with `p` coefficients.
    pub fn default_for(p: usize) -> Self {
        Hyperparameters {
            zeta_gamma: DVector::zeros(p),
            delta_gamma: DMatrix::identity(p, p) * Self::DEFAULT_GAMMA_VARIANCE,
            zeta_tau: 0.0,
            sigma2_tau: Self::DEFAULT_SIGMA2_TAU,
            b_sigma2: Self::DEFAULT_GAMMA_SHAPE_RATE,
            c_sigma2: Self::DEFAULT_GAMMA_SHAPE_RATE,
            r0: Self::DEFAULT_R0,
            b0: Self::DEFAULT_GAMMA_SHAPE_RATE,
            c0: Self::DEFAULT_GAMMA_SHAPE_RATE,
        }
    }

    pub fn n_gamma(&self) -> usize {
        self.zeta_gamma.len()
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.zeta_gamma.len() != p || self.delta_gamma.shape() != (p, p) {
            return Err(Error::Dimension(alloc::format!(
                "gamma prior has dimension {} / {:?}, linear part has {p} columns",
                self.zeta_gamma.len(),
                self.delta_gamma.shape()
            )));
        }
        if self.delta_gamma.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("gamma prior covariance"));
        }
        let positive = [
            ("sigma2_tau", self.sigma2_tau),
            ("b_sigma2", self.b_sigma2),
            ("c_sigma2", self.c_sigma2),
            ("r0", self.r0),
            ("b0", self.b0),
            ("c0", self.c0),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(alloc::format!("{name} must be positive, got {v}")));
            }
        }
        if !self.zeta_tau.is_finite() || self.zeta_gamma.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("prior means must be finite".into()));
        }
        Ok(())
    }

    /// `Delta_gamma^{-1}`.
    pub fn gamma_precision(&self) -> Result<DMatrix<f64>> {
        self.delta_gamma.clone().cholesky().map(|c| c.inverse()).ok_or(Error::NotPositiveDefinite("gamma prior covariance"))
    }
}
