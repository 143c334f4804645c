//! Pursuit and interception laboratory: target estimation, guidance laws,
//! model-predictive planning, closed-loop simulation and benchmarking.

pub mod bench;
pub mod error;
pub mod estimation;
pub mod guidance;
pub mod mpc;
pub mod numcore;
pub mod sensing;
pub mod simworld;
pub mod trajlab;

pub use error::{Error, Result};
