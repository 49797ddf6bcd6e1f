//! Streaming sketches: distinct-count estimation (HyperLogLog) and
//! frequency estimation (Count-Mean-Min with conservative update).

mod cmm;
mod hll;

pub use cmm::CountMeanMin;
pub use hll::HyperLogLog;
