//! End-to-end glue shared by the command-line tool and the synthetic
//! experiment: simulating distorted recordings, cutting recordings into
//! cycles, and scoring a recording from its cycles.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distortion::{
    apply_channel, make_channel, mix_at_snr, synth_pcg, ChannelKind, ConvolutionMode, NoiseSpec, SyntheticPcgSpec,
};
use crate::error::{Error, Result};
use crate::eval::{majority_vote, RecordingResult};
use crate::model::{predict_batch, ModelParams, Scalar};
use crate::preprocess::{preprocess, slice_cycles, CycleSegment, PcgRecording};
use crate::training::Featurizer;
use crate::{Label, SAMPLE_RATE};

/// Parameters for one simulated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    /// Recordings per (class, channel) pair.
    pub per_cell: usize,
    pub channels: Vec<ChannelKind>,
    /// Assigned round-robin within each cell. `f64::INFINITY` adds no noise.
    pub snrs_db: Vec<f64>,
    pub duration_s: f64,
    pub heart_rate_bpm: (f64, f64),
    pub murmur_band: (f64, f64),
    pub murmur_level: f64,
    pub seed: u64,
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec {
            per_cell: 10,
            channels: vec![ChannelKind::Identity, ChannelKind::LowpassTilt, ChannelKind::Resonant],
            snrs_db: vec![5.0, 15.0],
            duration_s: 2.5,
            heart_rate_bpm: (60.0, 90.0),
            murmur_band: (150.0, 350.0),
            murmur_level: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedRecording {
    pub id: String,
    pub label: Label,
    pub channel: ChannelKind,
    pub snr_db: f64,
    pub heart_rate_bpm: f64,
    /// 1000 Hz waveform, clean sound plus noise, then the channel.
    pub samples: Vec<f64>,
}

/// SNR text as stored in manifests: a number or `inf`.
pub fn format_snr(snr_db: f64) -> String {
    if snr_db == f64::INFINITY {
        "inf".into()
    } else {
        format!("{snr_db}")
    }
}

pub fn parse_snr(s: &str) -> Result<f64> {
    let t = s.trim();
    if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
        return Ok(f64::INFINITY);
    }
    let v = f64::from_str(t).map_err(|_| Error::param(format!("bad SNR {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::param(format!("bad SNR {s:?}")));
    }
    Ok(v)
}

/// Recordings in class-major, then channel, then index order. Ids are
/// `{prefix}{class}_{channel}_{index}`. Every random choice derives from
/// `spec.seed`, so equal specs give identical corpora.
pub fn simulate_corpus(spec: &SimulationSpec, prefix: &str) -> Result<Vec<SimulatedRecording>> {
    if spec.channels.is_empty() || spec.snrs_db.is_empty() {
        return Err(Error::param("need at least one channel and one SNR"));
    }
    let (lo, hi) = spec.heart_rate_bpm;
    if !(lo <= hi) {
        return Err(Error::param(format!("bad heart-rate range {lo}..{hi}")));
    }
    let channels: Vec<_> = spec
        .channels
        .iter()
        .map(|&k| make_channel(k).map(|c| (k, c)))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(2 * channels.len() * spec.per_cell);
    for label in Label::ALL {
        for (kind, ch) in &channels {
            for i in 0..spec.per_cell {
                let heart_rate_bpm = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                let synth_seed: u64 = rng.random();
                let noise_seed: u64 = rng.random();
                let snr_db = spec.snrs_db[i % spec.snrs_db.len()];
                let clean = synth_pcg(&SyntheticPcgSpec {
                    heart_rate_bpm,
                    class: label,
                    murmur_band: spec.murmur_band,
                    murmur_level: spec.murmur_level,
                    duration_s: spec.duration_s,
                    seed: synth_seed,
                })?;
                let noisy = mix_at_snr(&clean, &NoiseSpec::white(snr_db, noise_seed))?;
                let samples = apply_channel(&noisy, ch, ConvolutionMode::Linear)?;
                out.push(SimulatedRecording {
                    id: format!("{prefix}{label}_{kind}_{i:04}").replace(':', "-"),
                    label,
                    channel: *kind,
                    snr_db,
                    heart_rate_bpm,
                    samples,
                });
            }
        }
    }
    Ok(out)
}

/// Resamples and band-limits a raw recording, then cuts it into cycles
/// (at `onsets` when given, else at detected S1 onsets).
pub fn recording_segments(
    id: &str,
    samples: &[f64],
    sample_rate: f64,
    onsets: Option<&[usize]>,
) -> Result<Vec<CycleSegment>> {
    let rec = PcgRecording {
        id: id.to_string(),
        samples: preprocess(samples, sample_rate)?,
        sample_rate: SAMPLE_RATE,
        label: Label::Normal,
        domain: String::new(),
        patient_id: String::new(),
        quality: None,
    };
    slice_cycles(&rec, onsets)
}

/// Cycles scored per inference batch.
pub const INFER_CHUNK: usize = 64;

/// Majority vote over the cycles; the recording score is the mean cycle
/// probability of the abnormal class.
pub fn score_recording<T: Scalar>(
    params: &ModelParams<T>,
    feat: Featurizer<'_>,
    segments: &[CycleSegment],
    id: &str,
    domain: &str,
    truth: Label,
) -> Result<RecordingResult> {
    let mats = segments.iter().map(|s| feat.matrix(s)).collect::<Result<Vec<_>>>()?;
    score_matrices(params, &mats.iter().collect::<Vec<_>>(), id, domain, truth)
}

/// [`score_recording`] from precomputed network inputs.
pub fn score_matrices<T: Scalar>(
    params: &ModelParams<T>,
    mats: &[&ndarray::Array2<f64>],
    id: &str,
    domain: &str,
    truth: Label,
) -> Result<RecordingResult> {
    if mats.is_empty() {
        return Err(Error::Empty(format!("recording {id} has no cycles")));
    }
    let mut preds = Vec::with_capacity(mats.len());
    for chunk in mats.chunks(INFER_CHUNK) {
        preds.extend(predict_batch(params, chunk)?);
    }
    let labels: Vec<Label> = preds.iter().map(|p| p.label).collect();
    let p_abnormal = preds.iter().map(|p| p.p_abnormal).sum::<f64>() / preds.len() as f64;
    Ok(RecordingResult {
        id: id.to_string(),
        domain: domain.to_string(),
        truth,
        predicted: majority_vote(&labels)?,
        p_abnormal,
    })
}
