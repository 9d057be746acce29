//! Boundary crossing probabilities for one-dimensional diffusions.
//!
//! A diffusion is mapped to unit diffusion coefficient, discretised in time
//! with a Gaussian one-step scheme, and projected onto lattices anchored at
//! the boundaries. The non-crossing probability is then a product of
//! substochastic matrices, each corrected for crossings between grid times
//! by a Brownian bridge.

// `!(x > 0.0)` rejects NaN as well as non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bridge;
pub mod cli;
pub mod engine;
pub mod error;
pub mod grid;
pub mod model;
pub mod oracles;
pub mod taylor;

pub use error::{BcpError, Result};
