//! Privacy-preserving active learning over a query stream.
//!
//! Queries are Bernoulli-subsampled, filtered through a frequency-based
//! k-anonymity gate backed by probabilistic sketches, and only then ranked
//! for annotation. The privacy accountant turns the (beta, k) knobs into
//! (epsilon, delta) differential-privacy guarantees; the harness measures
//! the privacy/utility/annotation-budget tradeoff over a parameter grid.

pub mod annotator;
pub mod error;
pub mod harness;
pub mod hash;
pub mod learner;
pub mod pipeline;
pub mod privacy;
pub mod sketch;
pub mod workload;

pub use error::{Error, Result};
