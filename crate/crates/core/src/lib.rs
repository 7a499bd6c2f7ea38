//! Stochastic primal-dual hybrid gradient (SPDHG) for arbitrary random
//! samplings. Step sizes come with a spectral certificate, and a synthetic
//! parallel-MRI benchmark drives the experiments.

// `!(x > 0.0)` is used on purpose: it rejects NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod harness;
pub mod mri_bench;
pub mod operators;
pub mod proximal;
pub mod sampling;
pub mod solver;
pub mod stepsize;

pub use error::{Error, Result};
