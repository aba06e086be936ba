//! Distributed estimation of functional and scalar effects for intensively
//! measured longitudinal outcomes.
//!
//! The outcome time axis is cut into blocks. Each block is fitted on its own
//! with quadratic inference functions (`qif`), and the block summaries are
//! combined in one closed-form step (`combine`) that enforces continuity of
//! the fitted curves at block edges (`constraint`) and applies a ridge
//! penalty chosen by generalized cross-validation.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod combine;
pub mod constraint;
pub mod error;
pub mod linalg;
pub mod model;
pub mod partition;
pub mod pipeline;
pub mod qif;
pub mod simulate;

pub use error::{Result, ScmError};
