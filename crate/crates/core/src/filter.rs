//! Butterworth IIR filters as cascaded second-order sections, with
//! forward-backward (zero-phase) application.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// One biquad in transposed direct form II, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Filter state after an infinitely long unit-step input.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * g;
        [self.b[1] - self.a[0] * g + z2, z2]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for s in x.iter_mut() {
            let input = *s;
            let y = b0 * input + z[0];
            z[0] = b1 * input - a1 * y + z[1];
            z[1] = b2 * input - a2 * y;
            *s = y;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Lowpass,
    Highpass,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sos {
    sections: Vec<Biquad>,
}

impl Sos {
    pub fn butter_lowpass(order: usize, cutoff_hz: f64, fs: f64) -> Result<Self> {
        Self::butter(order, cutoff_hz, fs, Kind::Lowpass)
    }

    pub fn butter_highpass(order: usize, cutoff_hz: f64, fs: f64) -> Result<Self> {
        Self::butter(order, cutoff_hz, fs, Kind::Highpass)
    }

    /// High-pass at `lo` cascaded with low-pass at `hi`, each of `order`.
    pub fn butter_bandpass(order: usize, lo: f64, hi: f64, fs: f64) -> Result<Self> {
        if !(lo < hi) {
            return Err(Error::param(format!("band edges must satisfy lo < hi, got {lo}..{hi}")));
        }
        let mut sos = Self::butter_highpass(order, lo, fs)?;
        sos.sections.extend(Self::butter_lowpass(order, hi, fs)?.sections);
        Ok(sos)
    }

    fn butter(order: usize, cutoff: f64, fs: f64, kind: Kind) -> Result<Self> {
        if order == 0 {
            return Err(Error::param("filter order must be positive"));
        }
        if !(cutoff > 0.0 && cutoff < fs / 2.0) {
            return Err(Error::param(format!("cutoff {cutoff} Hz outside (0, {}) Hz", fs / 2.0)));
        }
        let k = (PI * cutoff / fs).tan();
        let mut sections = Vec::with_capacity(order.div_ceil(2));
        for i in 0..order / 2 {
            let phi = PI * (2 * i + 1) as f64 / (2 * order) as f64;
            let inv_q = 2.0 * phi.sin();
            let norm = 1.0 / (1.0 + k * inv_q + k * k);
            let a = [2.0 * (k * k - 1.0) * norm, (1.0 - k * inv_q + k * k) * norm];
            let b = match kind {
                Kind::Lowpass => {
                    let b0 = k * k * norm;
                    [b0, 2.0 * b0, b0]
                }
                Kind::Highpass => [norm, -2.0 * norm, norm],
            };
            sections.push(Biquad { b, a });
        }
        if order % 2 == 1 {
            let norm = 1.0 / (1.0 + k);
            let a = [(k - 1.0) * norm, 0.0];
            let b = match kind {
                Kind::Lowpass => [k * norm, k * norm, 0.0],
                Kind::Highpass => [norm, -norm, 0.0],
            };
            sections.push(Biquad { b, a });
        }
        Ok(Sos { sections })
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Causal filtering from zero initial state.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            s.run(&mut y, [0.0; 2]);
        }
        y
    }

    fn filter_from_steady_state(&self, y: &mut [f64]) {
        let Some(&first) = y.first() else { return };
        let mut level = first;
        for s in &self.sections {
            let zi = s.step_state();
            s.run(y, [zi[0] * level, zi[1] * level]);
            level *= s.dc_gain();
        }
    }

    /// Zero-phase forward-backward filtering with odd reflection padding and
    /// steady-state initial conditions at both ends.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        if x.is_empty() {
            return Vec::new();
        }
        let trivial = self.sections.iter().filter(|s| s.b[2] == 0.0 && s.a[1] == 0.0).count();
        let pad = (3 * (2 * self.sections.len() + 1 - trivial)).min(x.len() - 1);
        let n = x.len();
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        self.filter_from_steady_state(&mut ext);
        ext.reverse();
        self.filter_from_steady_state(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|t| (2.0 * PI * freq * t as f64 / fs).sin()).collect()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn fourth_order_q_values() {
        let sos = Sos::butter_lowpass(4, 100.0, 1000.0).unwrap();
        assert_eq!(sos.sections().len(), 2);
        // unity DC gain for each low-pass section
        for s in sos.sections() {
            assert!((s.dc_gain() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn highpass_blocks_dc() {
        let sos = Sos::butter_highpass(3, 25.0, 1000.0).unwrap();
        let y = sos.filtfilt(&vec![1.0; 500]);
        assert!(y.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn lowpass_passes_dc_exactly_with_steady_state() {
        let sos = Sos::butter_lowpass(4, 50.0, 1000.0).unwrap();
        let y = sos.filtfilt(&vec![2.0; 300]);
        assert!(y.iter().all(|v| (v - 2.0).abs() < 1e-9));
    }

    #[test]
    fn lowpass_attenuates_stopband() {
        let sos = Sos::butter_lowpass(4, 100.0, 1000.0).unwrap();
        let pass = sos.filtfilt(&sine(20.0, 1000.0, 4000));
        let stop = sos.filtfilt(&sine(400.0, 1000.0, 4000));
        assert!((rms(&pass[500..3500]) / rms(&sine(20.0, 1000.0, 3000)) - 1.0).abs() < 0.01);
        assert!(rms(&stop[500..3500]) < 1e-3);
    }

    #[test]
    fn invalid_designs() {
        assert!(Sos::butter_lowpass(0, 100.0, 1000.0).is_err());
        assert!(Sos::butter_lowpass(2, 600.0, 1000.0).is_err());
        assert!(Sos::butter_bandpass(2, 300.0, 200.0, 1000.0).is_err());
    }

    #[test]
    fn short_and_empty_inputs() {
        let sos = Sos::butter_bandpass(4, 25.0, 400.0, 1000.0).unwrap();
        assert!(sos.filtfilt(&[]).is_empty());
        assert_eq!(sos.filtfilt(&[0.5]).len(), 1);
        assert_eq!(sos.filtfilt(&[0.5, 0.1, -0.2]).len(), 3);
    }
}
