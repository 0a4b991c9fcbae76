//! Chunk-wise correlation mixing (CMoS) forecaster.
//!
//! A lookback window of `L` steps is cut into `L/S` chunks of `S` steps. Each of
//! `K` shared correlation matrices maps those chunks linearly onto the `H/S`
//! future chunks, and every channel blends the `K` candidate forecasts with a
//! softmax gate computed from a strided convolution summary of its own window.
//!
//! The crate is organised as:
//!
//! - [`data`]: CSV ingestion, split protocol, standardization and window batching.
//! - [`model`]: forward pass, hand-derived gradients, parameter init and checkpoints.
//! - [`periodicity`]: autocorrelation period search and periodicity injection.
//! - [`train`]: MSE/MAE, AdamW, StepLR and the epoch loop.
//! - [`eval`]: metrics, ablations, parameter accounting and noise-sensitivity checks.
//! - [`synth`]: sinusoid, Gaussian and burst-noise generators.
//! - [`cli`]: the `cmos` command-line front end.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod periodicity;
pub mod synth;
pub mod train;

pub use error::{CmosError, Result};
