// NaN-rejecting checks are written as `!(x > 0.0)` on purpose, and the
// symmetric adjacency loops read better with explicit indices.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod alt_opt;
pub mod bayes_opt;
pub mod channel;
pub mod error;
pub mod exec;
pub mod harness;
pub mod rng;
pub mod sensing;

pub use error::{Error, Result};
pub use exec::Execution;
