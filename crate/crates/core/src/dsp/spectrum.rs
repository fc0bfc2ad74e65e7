use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// One-sided power spectrum, `dft_size / 2 + 1` nonnegative bins.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub power: Vec<f64>,
}

/// Planned real-input power spectrum of a fixed DFT size.
#[derive(Clone)]
pub struct SpectralAnalyzer {
    dft_size: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectralAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralAnalyzer")
            .field("dft_size", &self.dft_size)
            .finish()
    }
}

impl SpectralAnalyzer {
    pub fn new(dft_size: usize) -> Result<Self> {
        if dft_size == 0 {
            return Err(Error::param("dft_size must be positive"));
        }
        let fft = FftPlanner::new().plan_fft_forward(dft_size);
        Ok(SpectralAnalyzer { dft_size, fft })
    }

    pub fn dft_size(&self) -> usize {
        self.dft_size
    }

    pub fn num_bins(&self) -> usize {
        self.dft_size / 2 + 1
    }

    /// `|DFT_k(frame)|²` for `k = 0..=dft_size/2`, zero-padding the frame.
    pub fn power(&self, frame: &[f64]) -> Result<Spectrum> {
        if frame.len() > self.dft_size {
            return Err(Error::shape(format!(
                "frame of {} samples exceeds dft_size {}",
                frame.len(),
                self.dft_size
            )));
        }
        let mut buf = vec![Complex::new(0.0, 0.0); self.dft_size];
        for (b, &s) in buf.iter_mut().zip(frame) {
            b.re = s;
        }
        self.fft.process(&mut buf);
        let power = buf[..self.num_bins()].iter().map(|c| c.norm_sqr()).collect();
        Ok(Spectrum { power })
    }
}

pub fn power_spectrum(frame: &[f64], dft_size: usize) -> Result<Spectrum> {
    SpectralAnalyzer::new(dft_size)?.power(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn impulse_has_flat_spectrum() {
        let mut frame = vec![0.0; 64];
        frame[0] = 1.0;
        let sp = power_spectrum(&frame, 64).unwrap();
        assert_eq!(sp.power.len(), 33);
        assert!(sp.power.iter().all(|&p| (p - 1.0).abs() < 1e-12));
    }

    #[test]
    fn zero_frame_has_zero_power() {
        let sp = power_spectrum(&[0.0; 50], 64).unwrap();
        assert!(sp.power.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn cosine_on_bin_four() {
        let frame: Vec<f64> = (0..64).map(|t| (2.0 * PI * 4.0 * t as f64 / 64.0).cos()).collect();
        let sp = power_spectrum(&frame, 64).unwrap();
        for (k, &p) in sp.power.iter().enumerate() {
            if k == 4 {
                assert!((p - 1024.0).abs() < 1e-9);
            } else {
                assert!(p.abs() < 1e-9, "bin {k} = {p}");
            }
        }
    }

    #[test]
    fn oversized_frame_is_rejected() {
        assert!(power_spectrum(&[0.0; 65], 64).is_err());
    }
}
