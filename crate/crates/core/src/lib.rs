//! Selective windowing attention for long multivariate time-series.
//!
//! The crate is split along the pipeline:
//!
//! - [`tensor`]: dense `f64` tensors, a reverse-mode tape and Adam.
//! - [`attention`]: range and window masks, positional encoding, limited-range
//!   self-attention, windowing cross-attention and window weighing.
//! - [`model`]: the SWAN classifier, its ablations and two baselines.
//! - [`data`]: sample schema, synthetic planted-event generator, dataset files,
//!   resampling, upsampling and subject folds.
//! - [`train`]: training loop, UAR, cross-validation, window sweeps and
//!   attention export.

pub mod attention;
pub mod data;
pub mod error;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
