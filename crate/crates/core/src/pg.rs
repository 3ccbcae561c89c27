//! Polya-Gamma `PG(b, c)` variates for real shape `b > 0`.
//!
//! Draws use the truncated sum-of-gammas representation
//! `PG(b, c) = 1/(2 pi^2) sum_k g_k / ((k - 1/2)^2 + c^2/(4 pi^2))`,
//! `g_k ~ Gamma(b, 1)`, with the mean of the discarded tail added back
//! deterministically so the first moment is exact.

use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::{Error, Result};

pub const DEFAULT_TERMS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgParameters {
    b: f64,
    c: f64,
}

impl PgParameters {
    pub fn new(b: f64, c: f64) -> Result<Self> {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::InvalidParameter(alloc::format!("PG shape must be positive, got {b}")));
        }
        if !c.is_finite() {
            return Err(Error::InvalidParameter(alloc::format!("PG tilt must be finite, got {c}")));
        }
        Ok(PgParameters { b, c })
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }
}

/// `E[PG(b, c)] = b/(2c) tanh(c/2)`, with the `b/4` limit at `c = 0`.
pub fn pg_mean(params: PgParameters) -> f64 {
    let PgParameters { b, c } = params;
    let c = c.abs();
    if c < 1e-6 {
        // tanh(c/2)/(2c) = 1/4 - c^2/48 + O(c^4)
        b * (0.25 - c * c / 48.0)
    } else {
        b / (2.0 * c) * libm::tanh(c / 2.0)
    }
}

/// `Var[PG(b, 0)] = b/24`.
pub fn pg_variance_at_zero(b: f64) -> f64 {
    b / 24.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgSampler {
    terms: usize,
}

impl Default for PgSampler {
    fn default() -> Self {
        PgSampler { terms: DEFAULT_TERMS }
    }
}

impl PgSampler {
    pub fn new(terms: usize) -> Result<Self> {
        if terms == 0 {
            return Err(Error::InvalidParameter("PG truncation needs at least one term".into()));
        }
        Ok(PgSampler { terms })
    }

    pub fn terms(&self) -> usize {
        self.terms
    }

    fn denominators(&self, c: f64) -> impl Iterator<Item = f64> {
        let tilt = c * c / (4.0 * PI * PI);
        (1..=self.terms).map(move |k| {
            let h = k as f64 - 0.5;
            h * h + tilt
        })
    }

    /// Mean of the truncated series, i.e. without the tail correction.
    pub fn truncated_mean(&self, params: PgParameters) -> f64 {
        let s: f64 = self.denominators(params.c).map(|d| 1.0 / d).sum();
        params.b * s / (2.0 * PI * PI)
    }

    pub fn sample<R: Rng + ?Sized>(&self, params: PgParameters, rng: &mut R) -> Result<f64> {
        let gamma = Gamma::new(params.b, 1.0).map_err(|_| Error::NonFinite("PG gamma shape"))?;
        let mut acc = 0.0;
        let mut inv_sum = 0.0;
        for d in self.denominators(params.c) {
            acc += gamma.sample(rng) / d;
            inv_sum += 1.0 / d;
        }
        let scale = 1.0 / (2.0 * PI * PI);
        let tail = pg_mean(params) - params.b * inv_sum * scale;
        let draw = acc * scale + tail.max(0.0);
        if !draw.is_finite() {
            return Err(Error::NonFinite("Polya-Gamma draw"));
        }
        Ok(draw)
    }
}
