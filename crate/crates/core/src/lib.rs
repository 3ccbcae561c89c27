//! Spatial negative binomial crash-count model with a sum-of-trees link
//! component.
//!
//! The link is `psi = F gamma + G(X) + phi`, where `G` is a Bayesian additive
//! regression tree ensemble and `phi` follows a matrix exponential spatial
//! specification `exp(tau W) phi ~ Normal(0, sigma^2 I)`. Estimation is by a
//! Polya-Gamma augmented Gibbs sampler. On top of the posterior draws the crate
//! provides goodness-of-fit and convergence diagnostics, probabilistic and
//! classical hot-spot rankings, and the temporal consistency tests.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the command
//! line and thread-parallel chains live in the `nbbart` companion crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod bart;
pub mod data;
pub mod diagnostics;
mod error;
pub mod gibbs;
pub mod linalg;
pub mod math;
pub mod mess;
pub mod pg;
pub mod ranking;
pub mod synth;

pub use error::{Error, Result};

pub use nalgebra::{DMatrix, DVector};
