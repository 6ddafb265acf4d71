// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod harness;
pub mod hessian;
pub mod matrix;
pub mod network;
pub mod spectrum;

pub use error::{Error, Result};
pub use matrix::Matrix;
