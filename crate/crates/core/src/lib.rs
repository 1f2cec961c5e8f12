//! Spectral independence regularization for Q-ensembles.
//!
//! A symmetric matrix built from the N member Q-values at a state-action pair
//! should have a semicircle-shaped spectrum when the members are independent.
//! [`spqr`] turns the divergence from that shape into a differentiable loss;
//! [`rl`] adds it to ensemble Q-learning; [`diagnostics`] measures the effect.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN. Index loops
// mirror the textbook form of the numerical kernels.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diagnostics;
pub mod eigen;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod matrix;
pub mod nn;
pub mod rl;
pub mod rng;
pub mod spectral;
pub mod spqr;
pub mod worlds;

pub use error::{Error, Result};
pub use matrix::{Spectrum, SymMatrix};

/// Crate version recorded in run outputs.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
