//! File formats, dataset assembly, synthetic data, parallel grid execution
//! and the command-line driver built on [`apex_core`].

pub mod battles;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod fsutil;
pub mod grid;
pub mod manifest;
pub mod report;
pub mod synth;

pub use error::{AppError, AppResult};
