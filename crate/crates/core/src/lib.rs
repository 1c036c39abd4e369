//! Loop-erased random walk on Z³: exact small-domain oracles, reproducible
//! Monte Carlo estimators for escape probabilities and LERW growth, and the
//! box-counting / Frostman-energy statistics behind its Hausdorff dimension.

pub mod cli;
pub mod conditioned;
pub mod dimension;
pub mod error;
pub mod escape;
pub mod lattice;
pub mod loop_erasure;
pub mod parallel;
pub mod potential;
pub mod verify;
pub mod walk;

pub use error::{Error, Result};
