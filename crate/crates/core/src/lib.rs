//! Normal-Block model: joint clustering of p Gaussian variables into q groups
//! and sparse association network inference between the groups.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod em;
pub mod error;
pub mod experiment;
pub mod glasso;
mod linalg;
pub mod metrics;
pub mod rng;
pub mod selection;
pub mod sim;
pub mod twostep;
pub mod types;
pub mod vem;
pub mod zi;

pub use error::{Error, Result};
pub use types::*;
