//! Acoustic degradation model: a clean PCG plus additive noise, passed
//! through a stethoscope FIR channel, `x = (s + n) * h`.
//!
//! Also hosts the synthetic clean-PCG generator used for desk-scale
//! experiments.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::Sos;
use crate::{Label, SAMPLE_RATE};

/// Grid size on which channel frequency responses are normalized.
pub const RESPONSE_GRID: usize = 4096;

/// Longest FIR accepted for a channel; must stay below the analysis window.
pub const MAX_CHANNEL_LEN: usize = 49;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    pub impulse_response: Vec<f64>,
    pub label: String,
}

impl ChannelModel {
    /// Builds a channel from raw taps, rescaling so the peak magnitude of the
    /// frequency response is 1.
    pub fn from_taps(taps: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if taps.is_empty() || taps.len() > MAX_CHANNEL_LEN {
            return Err(Error::param(format!(
                "channel length must be in 1..={MAX_CHANNEL_LEN}, got {}",
                taps.len()
            )));
        }
        if taps.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("channel taps must be finite"));
        }
        let peak = peak_response(&taps);
        if peak == 0.0 {
            return Err(Error::param("channel impulse response is all zero"));
        }
        Ok(ChannelModel {
            impulse_response: taps.into_iter().map(|v| v / peak).collect(),
            label: label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.impulse_response.len()
    }

    pub fn is_empty(&self) -> bool {
        self.impulse_response.is_empty()
    }
}

/// Magnitude of the DTFT of `h` on a `RESPONSE_GRID`-point grid.
pub fn magnitude_response(h: &[f64]) -> Vec<f64> {
    let mut buf = vec![Complex::new(0.0, 0.0); RESPONSE_GRID.max(h.len())];
    for (b, &v) in buf.iter_mut().zip(h) {
        b.re = v;
    }
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf[..buf.len() / 2 + 1].iter().map(|c| c.norm()).collect()
}

/// `|H(e^{jw})|` by direct summation.
fn dtft_magnitude(h: &[f64], w: f64) -> f64 {
    let (re, im) = h.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, &v)| {
        let a = w * t as f64;
        (re + v * a.cos(), im - v * a.sin())
    });
    re.hypot(im)
}

/// Peak of `|H|` over `[0, π]`: grid search, then golden-section refinement
/// within one grid step of the best bin.
fn peak_response(h: &[f64]) -> f64 {
    let grid = magnitude_response(h);
    let (best, grid_peak) = grid
        .iter()
        .enumerate()
        .fold((0, 0.0), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let step = PI / (grid.len() - 1) as f64;
    let (mut lo, mut hi) = ((best as f64 - 1.0).max(0.0) * step, ((best + 1) as f64 * step).min(PI));
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let a = hi - ratio * (hi - lo);
        let b = lo + ratio * (hi - lo);
        if dtft_magnitude(h, a) < dtft_magnitude(h, b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    grid_peak.max(dtft_magnitude(h, 0.5 * (lo + hi)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelKind {
    Identity,
    /// Gentle low-pass roll-off, like a bell chest piece.
    LowpassTilt,
    /// Damped resonance near 120 Hz.
    Resonant,
    RandomFir {
        seed: u64,
        len: usize,
    },
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelKind::Identity => f.write_str("identity"),
            ChannelKind::LowpassTilt => f.write_str("lowpass_tilt"),
            ChannelKind::Resonant => f.write_str("resonant"),
            ChannelKind::RandomFir { seed, len } => write!(f, "random_fir:{seed}:{len}"),
        }
    }
}

impl FromStr for ChannelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "identity" => Ok(ChannelKind::Identity),
            "lowpass_tilt" => Ok(ChannelKind::LowpassTilt),
            "resonant" => Ok(ChannelKind::Resonant),
            other => {
                let parts: Vec<&str> = other.split(':').collect();
                match parts.as_slice() {
                    ["random_fir", seed, len] => Ok(ChannelKind::RandomFir {
                        seed: seed
                            .parse()
                            .map_err(|_| Error::param(format!("bad channel seed in {other:?}")))?,
                        len: len
                            .parse()
                            .map_err(|_| Error::param(format!("bad channel length in {other:?}")))?,
                    }),
                    _ => Err(Error::param(format!(
                        "unknown channel {other:?}; expected identity, lowpass_tilt, resonant or random_fir:SEED:LEN"
                    ))),
                }
            }
        }
    }
}

pub fn make_channel(kind: ChannelKind) -> Result<ChannelModel> {
    let taps = match kind {
        ChannelKind::Identity => vec![1.0],
        ChannelKind::LowpassTilt => vec![1.0, 0.8, 0.55, 0.3, 0.12],
        ChannelKind::Resonant => (0..24)
            .map(|t| {
                let t = t as f64;
                (-t / 6.0).exp() * (2.0 * PI * 120.0 * t / SAMPLE_RATE).cos()
            })
            .collect(),
        ChannelKind::RandomFir { seed, len } => {
            if len == 0 || len > MAX_CHANNEL_LEN {
                return Err(Error::param(format!(
                    "random FIR length must be in 1..={MAX_CHANNEL_LEN}, got {len}"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let decay = (len as f64 / 3.0).max(1.0);
            (0..len)
                .map(|t| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    g * (-(t as f64) / decay).exp()
                })
                .collect()
        }
    };
    ChannelModel::from_taps(taps, kind.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvolutionMode {
    /// Full convolution truncated to the input length.
    Linear,
    /// Circular convolution over the input length.
    Circular,
}

pub fn apply_channel(x: &[f64], ch: &ChannelModel, mode: ConvolutionMode) -> Result<Vec<f64>> {
    let h = &ch.impulse_response;
    if x.len() < h.len() {
        return Err(Error::SignalTooShort {
            len: x.len(),
            needed: h.len(),
        });
    }
    let n = x.len();
    let mut y = vec![0.0; n];
    for (t, out) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &hj) in h.iter().enumerate() {
            match mode {
                ConvolutionMode::Linear => {
                    if j > t {
                        break;
                    }
                    acc += hj * x[t - j];
                }
                ConvolutionMode::Circular => acc += hj * x[(t + n - j) % n],
            }
        }
        *out = acc;
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Bandlimited { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// `f64::INFINITY` means no noise.
    pub snr_db: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn white(snr_db: f64, seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::White,
            snr_db,
            seed,
        }
    }
}

fn mean_power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Unit-power Gaussian noise, optionally band-limited.
pub fn gaussian_noise(len: usize, kind: NoiseKind, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut noise = match kind {
        NoiseKind::White => raw,
        NoiseKind::Bandlimited { lo, hi } => {
            if !(lo > 0.0 && lo < hi && hi < SAMPLE_RATE / 2.0) {
                return Err(Error::param(format!(
                    "noise band must satisfy 0 < lo < hi < {} Hz, got {lo}..{hi}",
                    SAMPLE_RATE / 2.0
                )));
            }
            Sos::butter_bandpass(4, lo, hi, SAMPLE_RATE)?.filtfilt(&raw)
        }
    };
    let p = mean_power(&noise);
    if p > 0.0 {
        let g = p.sqrt().recip();
        noise.iter_mut().for_each(|v| *v *= g);
    }
    Ok(noise)
}

/// The noise track that `mix_at_snr` would add to `s`.
pub fn noise_for(s: &[f64], noise: &NoiseSpec) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Err(Error::Empty("signal for noise mixing".into()));
    }
    if noise.snr_db.is_nan() {
        return Err(Error::param("SNR is NaN"));
    }
    if noise.snr_db == f64::INFINITY {
        return Ok(vec![0.0; s.len()]);
    }
    let ps = mean_power(s);
    if ps == 0.0 {
        return Err(Error::SilentSignal);
    }
    let target = ps / 10f64.powf(noise.snr_db / 10.0);
    let mut n = gaussian_noise(s.len(), noise.kind, noise.seed)?;
    let pn = mean_power(&n);
    if pn == 0.0 {
        return Err(Error::param("noise generator produced silence"));
    }
    let g = (target / pn).sqrt();
    n.iter_mut().for_each(|v| *v *= g);
    Ok(n)
}

/// `s + n` with `n` scaled so the full-segment SNR equals `noise.snr_db`.
pub fn mix_at_snr(s: &[f64], noise: &NoiseSpec) -> Result<Vec<f64>> {
    if noise.snr_db == f64::INFINITY && !s.is_empty() {
        return Ok(s.to_vec());
    }
    let n = noise_for(s, noise)?;
    Ok(s.iter().zip(&n).map(|(a, b)| a + b).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticPcgSpec {
    pub heart_rate_bpm: f64,
    pub class: Label,
    pub murmur_band: (f64, f64),
    /// Murmur RMS relative to the S1 amplitude.
    pub murmur_level: f64,
    pub duration_s: f64,
    pub seed: u64,
}

impl SyntheticPcgSpec {
    pub fn validate(&self) -> Result<()> {
        if !(35.0..=159.0).contains(&self.heart_rate_bpm) {
            return Err(Error::param(format!(
                "heart rate {} bpm outside 35..=159",
                self.heart_rate_bpm
            )));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::param("duration must be positive"));
        }
        if !(self.murmur_level >= 0.0 && self.murmur_level.is_finite()) {
            return Err(Error::param("murmur level must be nonnegative"));
        }
        let (lo, hi) = self.murmur_band;
        if !(lo > 0.0 && lo < hi && hi < SAMPLE_RATE / 2.0) {
            return Err(Error::param(format!("bad murmur band {lo}..{hi} Hz")));
        }
        Ok(())
    }

    /// Samples between S1 onset and S2 onset.
    pub fn systole_samples(&self) -> usize {
        let s = (0.3 - 0.001 * (self.heart_rate_bpm - 60.0)).clamp(0.2, 0.34);
        (s * SAMPLE_RATE).round() as usize
    }

    pub fn period_samples(&self) -> f64 {
        60.0 / self.heart_rate_bpm * SAMPLE_RATE
    }
}

const S1_LEN: usize = 60;
const S2_LEN: usize = 50;

fn add_burst(out: &mut [f64], start: usize, len: usize, freq: f64, amp: f64) {
    let centre = len as f64 / 2.0;
    let sigma = len as f64 / 6.0;
    for i in 0..len {
        let Some(o) = out.get_mut(start + i) else { break };
        let t = i as f64;
        let env = (-0.5 * ((t - centre) / sigma).powi(2)).exp();
        *o += amp * env * (2.0 * PI * freq * t / SAMPLE_RATE).sin();
    }
}

/// Deterministic synthetic heart sound at 1000 Hz. S1 onsets sit at exact
/// multiples of the beat period starting from sample 0. The abnormal class
/// differs only by a band-limited systolic murmur.
pub fn synth_pcg(spec: &SyntheticPcgSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = (spec.duration_s * SAMPLE_RATE).round() as usize;
    if n == 0 {
        return Err(Error::param("duration shorter than one sample"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = vec![0.0; n];
    let period = spec.period_samples();
    let systole = spec.systole_samples();

    let (lo, hi) = spec.murmur_band;
    let murmur_track = gaussian_noise(n, NoiseKind::Bandlimited { lo, hi }, rng.random())?;
    let murmur_gain = match spec.class {
        Label::Normal => 0.0,
        Label::Abnormal => spec.murmur_level,
    };
    let mut envelope = vec![0.0; n];

    let mut beat = 0usize;
    loop {
        let onset = (beat as f64 * period).round() as usize;
        if onset >= n {
            break;
        }
        let a1 = rng.random_range(0.9..1.1);
        let f1 = rng.random_range(40.0..60.0);
        let a2 = 0.5 * rng.random_range(0.9..1.1);
        let f2 = rng.random_range(55.0..80.0);
        add_burst(&mut out, onset, S1_LEN, f1, a1);
        add_burst(&mut out, onset + systole, S2_LEN, f2, a2);

        let m_start = onset + S1_LEN;
        let m_len = systole.saturating_sub(S1_LEN);
        for i in 0..m_len {
            if let Some(e) = envelope.get_mut(m_start + i) {
                *e = a1 * (PI * i as f64 / m_len as f64).sin();
            }
        }
        beat += 1;
    }

    for ((o, e), m) in out.iter_mut().zip(&envelope).zip(&murmur_track) {
        *o += murmur_gain * e * m;
    }
    let peak = out.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak > 0.0 {
        let g = 0.9 / peak;
        out.iter_mut().for_each(|v| *v *= g);
    }
    Ok(out)
}
