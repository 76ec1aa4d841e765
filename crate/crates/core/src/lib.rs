//! Sequence-to-set label generation from scratch.
//!
//! A bidirectional GRU encoder reads a token sequence; an attention decoder
//! emits an ordered, duplicate-free label list. The decoder can be fed a
//! coverage vector summarizing the labels it has already produced, and can
//! be trained with an order-tolerant soft cross entropy. A multi-label
//! classification head over the same encoder serves as the baseline.
//!
//! Everything is `f64`, single-threaded and seeded: two runs with the same
//! seed, data and configuration produce bitwise-identical parameters.

pub mod adam;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod gru;
pub mod model;
pub mod multilabel;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
