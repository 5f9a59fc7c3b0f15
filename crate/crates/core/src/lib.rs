//! Multi-task prediction of engagement-based popularity scores and aesthetic
//! quality ratings for generated songs, from precomputed per-layer audio
//! embeddings.
//!
//! The crate is `no_std` (with `alloc`) and carries no IO. File formats,
//! synthetic data generation and the command-line driver live in the `apex`
//! crate.
//!
//! Module map:
//!
//! - [`data`]: song records, filtering, stratified splits and downsampling
//! - [`scores`]: percentile ranks and the power transform onto `[0, 100]`
//! - [`network`]: layer aggregation, shared trunk, task heads, exact backward
//! - [`losses`]: per-task MSE and the equal / weighted / uncertainty strategies
//! - [`optim`]: AdamW and the cosine learning-rate schedule
//! - [`trainer`]: input modes, the training loop with early stopping, the grid
//! - [`metrics`]: regression and classification metrics
//! - [`preference`]: pairwise battle features, naive rules, logistic
//!   regression and stratified cross-validation

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod preference;
pub mod rng;
pub mod scores;
pub mod trainer;

pub use error::{CoreError, Result};

/// Number of encoder layers stacked per segment embedding.
pub const N_LAYERS: usize = 4;
/// Width of one encoder layer representation.
pub const EMBED_DIM: usize = 768;
