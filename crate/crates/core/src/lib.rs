//! Minimax generalized cross-entropy (MGCE): a convex margin loss defined
//! through an implicit potential solved by bisection, with baselines, a small
//! SGD trainer and evaluation metrics.

// `!(x > y)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod data;
pub mod error;
pub mod gradients;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod models;
pub mod objective;
pub mod train;

pub use error::{Error, Result};
pub use loss::{LossParams, MarginVector, ProbabilityVector};
pub use models::Model;
