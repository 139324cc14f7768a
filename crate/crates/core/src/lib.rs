//! Spectral cross-domain ECG classification: a 1-D ResNet whose stage outputs
//! pass through trainable soft-threshold spectral filters (SATSE blocks).
//!
//! The crate carries its own dense tensor type with reverse-mode
//! differentiation, FFTs for arbitrary lengths, the layer set, a seeded
//! training loop with per-epoch parameter traces, macro-averaged metrics,
//! ablation sweeps and two binary container formats (ECGB datasets and SCDN
//! models).

pub mod ablation;
pub mod autodiff;
mod binio;
pub mod cli;
pub mod data;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod satse;
pub mod seed;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{DType, Tensor};
