//! Experiment plumbing around the `nellcom` library: run directories, sweeps,
//! cross-seed aggregation and SVG plots.

pub mod aggregate;
pub mod cli;
pub mod config;
pub mod error;
pub mod plot;
pub mod run;

pub use error::{HarnessError, Result};
