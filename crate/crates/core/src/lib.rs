//! Heart-sound (PCG) abnormality detection robust to additive noise and
//! stethoscope channel distortion.
//!
//! The pipeline runs from raw waveforms through [`preprocess`] and
//! [`features`] into the residual network in [`model`], trained by
//! [`training`] and scored by [`eval`]. [`distortion`] simulates noisy,
//! channel-distorted recordings; [`formats`] holds the on-disk encodings.

pub mod distortion;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod features;
pub mod filter;
pub mod formats;
pub mod model;
pub mod pipeline;
pub mod preprocess;
pub mod training;

pub use error::{Error, Result};
pub use preprocess::Label;

/// Working sample rate of the whole pipeline, Hz.
pub const SAMPLE_RATE: f64 = 1000.0;

/// Samples per fixed-length cardiac cycle (2.5 s).
pub const CYCLE_LEN: usize = 2500;
