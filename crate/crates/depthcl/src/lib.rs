//! File formats, the experiment driver and the command line for
//! `depthcl-core`.
//!
//! - [`dataset`]: task directories of binary triplet samples.
//! - [`checkpoint`]: single-file model checkpoints.
//! - [`tables`]: performance matrix and loss log CSVs.
//! - [`report`]: aggregate tables and heatmap grids.
//! - [`commands`]: `generate`, `train`, `eval` and `report`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fsutil;
pub mod report;
pub mod tables;

pub use error::{Error, Result};

/// Environment variable that overrides the training seed.
pub const SEED_ENV: &str = "DEPTHCL_SEED";
