//! Numerical core for per-path null control of stochastic heat equations
//! with multiplicative noise on an interval.
//!
//! The state lives in the Dirichlet sine basis ([`spectral`]); Wiener paths
//! are reproducible per seed ([`paths`]); [`sde`] steps the controlled linear
//! equation; [`lrcontrol`] builds adapted null controls; [`weights`] and
//! [`source_method`] handle sources decaying at the terminal time;
//! [`semilinear`] closes the Picard loop for truncated nonlinearities; and
//! [`statlab`] turns ensembles into probability statements.

#![no_std]
// `!(x > 0.0)` guards reject NaN along with the out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

// Modules import `num_traits::Float` for `exp`, `ln`, `powf` and friends;
// the import goes unused whenever std is linked into the same build, hence
// the `allow` on each of them.

pub mod error;
pub mod lrcontrol;
pub mod paths;
pub mod sde;
pub mod semilinear;
pub mod source_method;
pub mod spectral;
pub mod statlab;
pub mod weights;

pub use error::{Error, Result};
