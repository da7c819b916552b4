//! Caputo fractional-order equivalent-circuit battery model.
//!
//! Mittag-Leffler evaluation, the two-state-per-branch recursion, a
//! Grünwald–Letnikov baseline, HPPC identification and synthetic data
//! generation.

// `!(x > 0.0)` is used on purpose so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ecm;
pub mod error;
pub mod gl;
pub mod ident;
pub mod io;
pub mod mlfunc;
pub mod ocv;
pub mod report;
pub mod synthgen;
mod sum;
pub mod trace;

pub use error::{Error, Result};
