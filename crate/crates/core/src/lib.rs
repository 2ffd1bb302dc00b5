//! Design and verification of cluster randomized trials with continuous
//! co-primary endpoints under a multivariate linear mixed model.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod em;
pub mod error;
pub mod matstat;
pub mod power;
pub mod scenario;
pub mod sim;
pub mod types;

pub use error::{Error, Result};
