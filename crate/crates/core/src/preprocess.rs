//! Recording preprocessing: resampling to 1000 Hz, 25-400 Hz zero-phase
//! band-pass, and fixed 2.5 s cardiac-cycle segmentation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::Sos;
use crate::{CYCLE_LEN, SAMPLE_RATE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Normal => 0,
            Label::Abnormal => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Normal),
            1 => Some(Label::Abnormal),
            _ => None,
        }
    }

    pub const ALL: [Label; 2] = [Label::Normal, Label::Abnormal];
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Normal => "normal",
            Label::Abnormal => "abnormal",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" | "0" | "-1" => Ok(Label::Normal),
            "abnormal" | "1" => Ok(Label::Abnormal),
            other => Err(Error::param(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcgRecording {
    pub id: String,
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub label: Label,
    pub domain: String,
    pub patient_id: String,
    pub quality: Option<bool>,
}

/// One 2500-sample cardiac cycle at 1000 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleSegment {
    pub samples: Vec<f64>,
    pub parent: String,
    pub cycle_index: usize,
}

/// Decimates to 1000 Hz after an 8th-order zero-phase anti-aliasing low-pass
/// at 450 Hz. Output sample `i` is linearly interpolated at input position
/// `i * fs_in / 1000`.
pub fn resample_1k(x: &[f64], fs_in: f64) -> Result<Vec<f64>> {
    if !(fs_in.is_finite() && fs_in >= SAMPLE_RATE) {
        return Err(Error::param(format!(
            "input rate {fs_in} Hz below {SAMPLE_RATE} Hz; upsampling is unsupported"
        )));
    }
    if fs_in == SAMPLE_RATE || x.is_empty() {
        return Ok(x.to_vec());
    }
    let filtered = Sos::butter_lowpass(8, 0.45 * SAMPLE_RATE, fs_in)?.filtfilt(x);
    let out_len = (x.len() as f64 * SAMPLE_RATE / fs_in).round() as usize;
    let step = fs_in / SAMPLE_RATE;
    let last = filtered.len() - 1;
    Ok((0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let k = (pos.floor() as usize).min(last);
            let frac = pos - k as f64;
            if k == last {
                filtered[last]
            } else {
                filtered[k] * (1.0 - frac) + filtered[k + 1] * frac
            }
        })
        .collect())
}

/// 4th-order Butterworth 25-400 Hz band-pass at 1000 Hz, applied forward
/// and backward.
pub fn bandpass_25_400(x: &[f64]) -> Vec<f64> {
    Sos::butter_bandpass(4, 25.0, 400.0, SAMPLE_RATE)
        .expect("fixed band-pass design is valid")
        .filtfilt(x)
}

/// Resample then band-pass.
pub fn preprocess(x: &[f64], fs_in: f64) -> Result<Vec<f64>> {
    Ok(bandpass_25_400(&resample_1k(x, fs_in)?))
}

const MAX_BPM: f64 = 159.0;
const ENVELOPE_MS: usize = 40;
const PEAK_THRESHOLD: f64 = 0.25;

/// Smoothed, max-normalized Shannon-energy envelope.
pub fn shannon_envelope(x: &[f64]) -> Vec<f64> {
    let peak = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if peak == 0.0 {
        return vec![0.0; x.len()];
    }
    let energy: Vec<f64> = x
        .iter()
        .map(|v| {
            let sq = (v / peak).powi(2);
            if sq > 0.0 {
                -sq * sq.ln()
            } else {
                0.0
            }
        })
        .collect();
    let half = ENVELOPE_MS * SAMPLE_RATE as usize / 1000 / 2;
    let mut prefix = vec![0.0; energy.len() + 1];
    for (i, e) in energy.iter().enumerate() {
        prefix[i + 1] = prefix[i] + e;
    }
    let mut env: Vec<f64> = (0..energy.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(energy.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect();
    let max = env.iter().fold(0.0f64, |a, &v| a.max(v));
    if max > 0.0 {
        env.iter_mut().for_each(|v| *v /= max);
    }
    env
}

/// S1 onset estimates from envelope peaks. Peaks are accepted tallest first
/// and must be at least one beat at the fastest plausible heart rate apart,
/// which suppresses S2. Each onset is the point where the envelope first
/// rises above a tenth of its peak.
pub fn detect_onsets(x: &[f64]) -> Vec<usize> {
    let env = shannon_envelope(x);
    let min_distance = (60.0 / MAX_BPM * SAMPLE_RATE).round() as usize;
    let mut candidates: Vec<usize> = (0..env.len())
        .filter(|&i| {
            let v = env[i];
            v >= PEAK_THRESHOLD && (i == 0 || env[i - 1] < v) && (i + 1 == env.len() || env[i + 1] <= v)
        })
        .collect();
    candidates.sort_by(|&a, &b| env[b].total_cmp(&env[a]).then(a.cmp(&b)));
    let mut accepted: Vec<usize> = Vec::new();
    for c in candidates {
        if accepted.iter().all(|&a| a.abs_diff(c) >= min_distance) {
            accepted.push(c);
        }
    }
    accepted.sort_unstable();
    let max_lead = min_distance / 2;
    let mut onsets: Vec<usize> = accepted
        .into_iter()
        .map(|p| {
            let floor = 0.1 * env[p];
            let mut i = p;
            while i > 0 && p - i < max_lead && env[i - 1] > floor {
                i -= 1;
            }
            i
        })
        .collect();
    onsets.dedup();
    onsets
}

/// One fixed-length segment per cycle start. When `onsets` is `None` the
/// envelope detector supplies them. Segments are truncated or zero-padded to
/// `CYCLE_LEN` samples.
pub fn slice_cycles(rec: &PcgRecording, onsets: Option<&[usize]>) -> Result<Vec<CycleSegment>> {
    if rec.sample_rate != SAMPLE_RATE {
        return Err(Error::param(format!(
            "recording {} is at {} Hz; preprocess to {SAMPLE_RATE} Hz first",
            rec.id, rec.sample_rate
        )));
    }
    let mut starts: Vec<usize> = match onsets {
        Some(o) => o.to_vec(),
        None => detect_onsets(&rec.samples),
    };
    starts.retain(|&s| s < rec.samples.len());
    starts.sort_unstable();
    starts.dedup();
    if starts.is_empty() {
        return Err(Error::Unsegmentable(rec.id.clone()));
    }
    Ok(starts
        .into_iter()
        .enumerate()
        .map(|(cycle_index, start)| {
            let end = (start + CYCLE_LEN).min(rec.samples.len());
            let mut samples = rec.samples[start..end].to_vec();
            samples.resize(CYCLE_LEN, 0.0);
            CycleSegment {
                samples,
                parent: rec.id.clone(),
                cycle_index,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recording(samples: Vec<f64>) -> PcgRecording {
        PcgRecording {
            id: "r1".into(),
            samples,
            sample_rate: SAMPLE_RATE,
            label: Label::Normal,
            domain: "a".into(),
            patient_id: "p1".into(),
            quality: None,
        }
    }

    #[test]
    fn label_parsing() {
        assert_eq!("Abnormal".parse::<Label>().unwrap(), Label::Abnormal);
        assert_eq!("-1".parse::<Label>().unwrap(), Label::Normal);
        assert!("maybe".parse::<Label>().is_err());
        assert_eq!(Label::from_index(Label::Abnormal.index()), Some(Label::Abnormal));
    }

    #[test]
    fn resample_identity_and_length() {
        let x: Vec<f64> = (0..777).map(|v| (v as f64 * 0.01).sin()).collect();
        assert_eq!(resample_1k(&x, 1000.0).unwrap(), x);
        assert_eq!(resample_1k(&vec![0.0; 5000], 2000.0).unwrap().len(), 2500);
        assert_eq!(resample_1k(&vec![0.0; 4410], 4410.0).unwrap().len(), 1000);
        assert!(resample_1k(&x, 800.0).is_err());
    }

    #[test]
    fn bandpass_of_silence_is_silence() {
        assert!(bandpass_25_400(&[0.0; 1000]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn short_recording_is_zero_padded() {
        let rec = recording(vec![1.0; 1800]);
        let segs = slice_cycles(&rec, Some(&[0])).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].samples.len(), CYCLE_LEN);
        assert!(segs[0].samples[..1800].iter().all(|&v| v == 1.0));
        assert!(segs[0].samples[1800..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_onsets_two_segments() {
        let rec = recording((0..4000).map(|v| v as f64).collect());
        let segs = slice_cycles(&rec, Some(&[0, 1000])).unwrap();
        assert_eq!(segs.len(), 2);
        assert!(segs.iter().all(|s| s.samples.len() == CYCLE_LEN));
        assert_eq!(segs[1].samples[0], 1000.0);
        assert_eq!(segs[1].cycle_index, 1);
        assert_eq!(segs[1].samples[2499], 3499.0);
    }

    #[test]
    fn silent_recording_is_unsegmentable() {
        let err = slice_cycles(&recording(vec![0.0; 3000]), None).unwrap_err();
        assert!(err.to_string().starts_with("unsegmentable recording"));
        let err = slice_cycles(&recording(vec![1.0; 30]), Some(&[100])).unwrap_err();
        assert!(matches!(err, Error::Unsegmentable(_)));
    }

    #[test]
    fn slicing_requires_1k() {
        let mut rec = recording(vec![0.0; 3000]);
        rec.sample_rate = 2000.0;
        assert!(slice_cycles(&rec, Some(&[0])).is_err());
    }
}
