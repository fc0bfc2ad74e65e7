//! Short-time spectral analysis: framing, power spectra, mel filterbanks,
//! log compression, orthonormal DCT and regression deltas.
//!
//! Everything here is a pure function of its inputs. Structs such as
//! [`SpectralAnalyzer`] and [`Dct2`] only cache plans and basis matrices.

mod cepstral;
mod mel;
mod spectrum;

pub use cepstral::{dct2_orthonormal, delta_features, log_energies, Dct2};
pub use mel::{hz_to_mel, mel_to_hz, MelFilterbank};
pub use spectrum::{power_spectrum, SpectralAnalyzer, Spectrum};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WindowFn {
    Rectangular,
    #[default]
    Hamming,
    Hann,
}

impl WindowFn {
    /// Symmetric window coefficients of length `len`.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        if len == 1 {
            return vec![1.0];
        }
        let denom = (len - 1) as f64;
        (0..len)
            .map(|n| {
                let phase = 2.0 * std::f64::consts::PI * n as f64 / denom;
                match self {
                    WindowFn::Rectangular => 1.0,
                    WindowFn::Hamming => 0.54 - 0.46 * phase.cos(),
                    WindowFn::Hann => 0.5 - 0.5 * phase.cos(),
                }
            })
            .collect()
    }
}

/// Frame length, hop and DFT size, all in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameSpec {
    pub window_len: usize,
    pub hop: usize,
    pub window_fn: WindowFn,
    pub dft_size: usize,
}

impl Default for FrameSpec {
    /// 50 ms window, 10 ms hop at 1000 Hz, Hamming, 64-point DFT.
    fn default() -> Self {
        FrameSpec {
            window_len: 50,
            hop: 10,
            window_fn: WindowFn::Hamming,
            dft_size: 64,
        }
    }
}

impl FrameSpec {
    pub fn new(window_len: usize, hop: usize, window_fn: WindowFn, dft_size: usize) -> Result<Self> {
        let spec = FrameSpec {
            window_len,
            hop,
            window_fn,
            dft_size,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 {
            return Err(Error::param("window_len must be at least 1"));
        }
        if self.hop == 0 {
            return Err(Error::param("hop must be at least 1"));
        }
        if self.dft_size < self.window_len {
            return Err(Error::param(format!(
                "dft_size {} is smaller than window_len {}",
                self.dft_size, self.window_len
            )));
        }
        Ok(())
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            (len - self.window_len) / self.hop + 1
        }
    }
}

/// Cuts `x` into overlapping windowed frames. Trailing samples that do not
/// fill a whole window are dropped.
pub fn frame_signal(x: &[f64], spec: &FrameSpec) -> Result<Vec<Vec<f64>>> {
    spec.validate()?;
    if x.len() < spec.window_len {
        return Err(Error::SignalTooShort {
            len: x.len(),
            needed: spec.window_len,
        });
    }
    let window = spec.window_fn.coefficients(spec.window_len);
    let frames = (0..spec.num_frames(x.len()))
        .map(|i| {
            let start = i * spec.hop;
            x[start..start + spec.window_len]
                .iter()
                .zip(&window)
                .map(|(s, w)| s * w)
                .collect()
        })
        .collect();
    Ok(frames)
}
