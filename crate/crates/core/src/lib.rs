//! Numerical laboratory for covariant quantum fields with indefinite metric
//! built from Gauss–Poisson white noise.
//!
//! A model is a covariant operator `D` with symbol `Q_E(k)/Π(k² + m²)^ν`
//! applied to Lévy noise. From it the crate derives cumulant tensors,
//! truncated Schwinger functions (analytically and by lattice Monte Carlo),
//! their Wightman continuations and the resulting scattering amplitudes.

// index loops read closer to the tensor formulas than iterator chains
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod lattice;
pub mod levy;
pub mod model;
pub mod polynomial;
pub mod propagator;
mod fft;
pub mod quadrature;
pub mod scattering;
pub mod schwinger;
pub mod truncation;
pub mod wightman;

#[cfg(any(test, feature = "oracles"))]
pub mod oracles;

pub use error::{Error, Result};
