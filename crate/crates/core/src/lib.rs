//! Multi-user semantic communication over a shared channel, separated by
//! non-orthogonal codewords that gate learned features.

pub mod baselines;
pub mod channel;
pub mod checkpoint;
pub mod cli;
pub mod codebook;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod nsm;
pub mod optim;
pub mod semcodec;
pub mod trainer;

pub use error::{Error, Result};
