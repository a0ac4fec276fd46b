//! Deterministic simulator for sparse federated training with local steps,
//! control variates and probabilistic communication.

pub mod datasets;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod objectives;
pub mod ops;
pub mod problem;
pub mod runner;

pub use error::{Error, Result};
