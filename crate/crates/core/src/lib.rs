//! Scalability certificates and simulation for nonlinear networks with
//! delayed and delay-free couplings under disturbances.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod certify;
pub mod error;
pub mod expcli;
pub mod generic;
pub mod halanay;
pub mod measures;
pub mod netmodel;
pub mod neuralnet;
pub mod unicycle;

pub use error::{Error, Result};
