use crate::dsp::Spectrum;
use crate::error::{Error, Result};

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with centers equally spaced on the mel scale. Each
/// filter rises from its left neighbour's center to its own center and falls
/// to its right neighbour's center.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    weights: Vec<Vec<f64>>,
    /// Per-filter count of bins with nonzero weight.
    support: Vec<usize>,
    sample_rate: f64,
    f_low: f64,
    f_high: f64,
    dft_size: usize,
}

impl MelFilterbank {
    pub fn new(num_filters: usize, sample_rate: f64, dft_size: usize, f_low: f64, f_high: f64) -> Result<Self> {
        if num_filters == 0 {
            return Err(Error::param("filterbank needs at least one filter"));
        }
        if dft_size < 2 {
            return Err(Error::param("dft_size must be at least 2"));
        }
        if !(sample_rate > 0.0) {
            return Err(Error::param("sample rate must be positive"));
        }
        if !(0.0 <= f_low && f_low < f_high && f_high <= sample_rate / 2.0) {
            return Err(Error::param(format!(
                "need 0 <= f_low < f_high <= {} Hz, got [{f_low}, {f_high}]",
                sample_rate / 2.0
            )));
        }
        let (mel_lo, mel_hi) = (hz_to_mel(f_low), hz_to_mel(f_high));
        let edges: Vec<f64> = (0..num_filters + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (num_filters + 1) as f64))
            .collect();
        let num_bins = dft_size / 2 + 1;
        let bin_hz = sample_rate / dft_size as f64;

        let mut weights = Vec::with_capacity(num_filters);
        let mut support = Vec::with_capacity(num_filters);
        for i in 0..num_filters {
            let (left, center, right) = (edges[i], edges[i + 1], edges[i + 2]);
            let row: Vec<f64> = (0..num_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= left || f >= right {
                        0.0
                    } else if f <= center {
                        (f - left) / (center - left)
                    } else {
                        (right - f) / (right - center)
                    }
                })
                .collect();
            let nonzero = row.iter().filter(|&&w| w > 0.0).count();
            if nonzero == 0 {
                return Err(Error::EmptyFilter { index: i });
            }
            weights.push(row);
            support.push(nonzero);
        }
        Ok(MelFilterbank {
            weights,
            support,
            sample_rate,
            f_low,
            f_high,
            dft_size,
        })
    }

    pub fn num_filters(&self) -> usize {
        self.weights.len()
    }

    pub fn num_bins(&self) -> usize {
        self.dft_size / 2 + 1
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn band(&self) -> (f64, f64) {
        (self.f_low, self.f_high)
    }

    pub fn dft_size(&self) -> usize {
        self.dft_size
    }

    /// Mean weighted power over each filter's in-band bins.
    pub fn apply(&self, sp: &Spectrum) -> Result<Vec<f64>> {
        if sp.power.len() != self.num_bins() {
            return Err(Error::shape(format!(
                "spectrum has {} bins, filterbank expects {}",
                sp.power.len(),
                self.num_bins()
            )));
        }
        Ok(self.apply_power(&sp.power))
    }

    pub(crate) fn apply_power(&self, power: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.support)
            .map(|(row, &n)| {
                let acc: f64 = row
                    .iter()
                    .zip(power)
                    .filter(|(w, _)| **w > 0.0)
                    .map(|(w, p)| w * p)
                    .sum();
                acc / n as f64
            })
            .collect()
    }
}
