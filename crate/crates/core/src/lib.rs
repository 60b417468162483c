// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod fusion;
pub mod grid;
pub mod gyro_field;
pub mod homography_fit;
pub mod io;
pub mod math;
pub mod metrics;
pub mod synth;

pub use error::{Error, Result};
