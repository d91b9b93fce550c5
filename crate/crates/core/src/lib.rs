//! Discrepancy-based sampling (DBsample) for discrete distributions and the
//! score-function gradient estimators built on it.
//!
//! Module map:
//!
//! * [`prob_core`]: probability vectors, sample matrices, sigmoid/softmax and
//!   the discrepancy `p̂ - p` of a sample set.
//! * [`sampler`]: i.i.d. and discrepancy-corrected samplers for Bernoulli,
//!   categorical, finite-support and tail-grouped infinite-support laws.
//! * [`estimators`]: Reinforce, leave-one-out Reinforce (LOORF), DBsurf and
//!   the one-dimensional debiasing factors.
//! * [`oracle`]: exact enumeration of the sampler's path law and closed-form
//!   reference values that the tests compare against.
//! * [`bench`]: CSV sweeps over `(p, n, alpha)` and the toy optimization run.
//! * [`nas_sim`]: a tabular architecture-search simulator driven by the
//!   categorical sampler and LOORF.

// `!(x > 0.0)` is used on purpose to reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops over several parallel arrays read closer to the matrix algebra.
#![allow(clippy::needless_range_loop)]

pub mod bench;
pub mod error;
pub mod estimators;
pub mod nas_sim;
pub mod optim;
pub mod oracle;
pub mod par;
pub mod prob_core;
pub mod sampler;

pub use error::{Error, Result};

/// Build identifier embedded in every CSV written by this crate.
pub const BUILD_ID: &str = concat!("dbsurf ", env!("CARGO_PKG_VERSION"));

/// Formats a real with 17 significant digits so outputs are byte-comparable.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}
