//! Numerics for the random difference equation `R_n = M_n R_{n-1} + Q_n`
//! with matrix-valued `M`: tail index, tail constants and spectral tail
//! measure of the stationary law, and the stable limit of Birkhoff sums.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assumptions;
pub mod batch;
pub mod env;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod quadrature;
pub mod recursion;
pub mod rng;
pub mod spectral;
pub mod stable;
pub mod stats;
pub mod tails;

pub use error::{Error, Result};
