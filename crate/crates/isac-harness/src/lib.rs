//! Experiment harness: configuration, frame timing, property checks and pipelines.

pub mod checks;
pub mod config;
pub mod error;
pub mod pipelines;
pub mod scenefile;
pub mod timing;

pub use error::{HarnessError, Result};
