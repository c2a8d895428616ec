//! Std companion to `imfuse-core`: dataset directories, synthetic cohorts,
//! k-fold cross-validation, checkpoints, reports and the `imfuse` CLI.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod pipeline;
pub mod report;
pub mod split;
pub mod synthetic;
pub mod train;

pub use error::{HarnessError, Result};
