//! Seeded synthetic robustness experiment: train one system per feature
//! kind on simulated noisy, channel-distorted heart sounds and compare
//! recording-level accuracy, its spread across channels, and the
//! first-layer noise response before and after training.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::distortion::{mix_at_snr, synth_pcg, ChannelKind, NoiseSpec, SyntheticPcgSpec};
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::features::{FeatureConfig, FeatureExtractor, FeatureKind};
use crate::model::{init_model, ModelConfig, ModelParams};
use crate::pipeline::{recording_segments, score_matrices, simulate_corpus, SimulatedRecording, SimulationSpec};
use crate::preprocess::CycleSegment;
use crate::training::{fit, noise_orthogonality_stat, EpochRecord, Featurizer, TrainConfig, TrainSegment};
use crate::{Label, SAMPLE_RATE};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub seed: u64,
    pub train_recordings: usize,
    pub test_recordings: usize,
    pub channels: Vec<ChannelKind>,
    pub snrs_db: Vec<f64>,
    pub duration_s: f64,
    pub heart_rate_bpm: (f64, f64),
    pub murmur_band: (f64, f64),
    pub murmur_level: f64,
    pub systems: Vec<FeatureKind>,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    /// Clean/noisy cycle pairs for the noise-response statistic.
    pub orthogonality_draws: usize,
    pub orthogonality_snr_db: f64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let sim = SimulationSpec::default();
        ExperimentSpec {
            seed: 7,
            train_recordings: 300,
            test_recordings: 100,
            channels: sim.channels,
            snrs_db: sim.snrs_db,
            duration_s: sim.duration_s,
            heart_rate_bpm: sim.heart_rate_bpm,
            murmur_band: sim.murmur_band,
            murmur_level: sim.murmur_level,
            systems: ["MFCC13", "Fbank", "Fbank&MFCC13"]
                .iter()
                .map(|s| s.parse().expect("known kinds"))
                .collect(),
            features: FeatureConfig::default(),
            train: TrainConfig {
                epochs: 30,
                seed: 7,
                ..TrainConfig::default()
            },
            orthogonality_draws: 200,
            orthogonality_snr_db: 5.0,
        }
    }
}

/// One system's outcome.
#[derive(Debug, Clone)]
pub struct SystemResult {
    pub kind: FeatureKind,
    pub report: EvalReport,
    pub log: Vec<EpochRecord>,
    /// Noise-response ratio at initialization and after training.
    pub orthogonality_init: f64,
    pub orthogonality_trained: f64,
    pub params: ModelParams<f32>,
}

impl SystemResult {
    pub fn macc(&self) -> Option<f64> {
        self.report.metrics.macc
    }

    pub fn channel_std(&self) -> f64 {
        self.report.domains.std
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub train_segments: usize,
    pub test_segments: usize,
    pub systems: Vec<SystemResult>,
}

struct Split {
    recordings: Vec<SimulatedRecording>,
    segments: Vec<Vec<CycleSegment>>,
}

/// Simulates `total` recordings spread as evenly as possible over the
/// (class, channel) cells and cuts each into cycles.
fn build_split(spec: &ExperimentSpec, total: usize, seed: u64, prefix: &str) -> Result<Split> {
    let cells = 2 * spec.channels.len();
    let sim = SimulationSpec {
        per_cell: total.div_ceil(cells),
        channels: spec.channels.clone(),
        snrs_db: spec.snrs_db.clone(),
        duration_s: spec.duration_s,
        heart_rate_bpm: spec.heart_rate_bpm,
        murmur_band: spec.murmur_band,
        murmur_level: spec.murmur_level,
        seed,
    };
    let all = simulate_corpus(&sim, prefix)?;
    // Keep the first `total` in cell-interleaved order so every cell is hit.
    let per_cell = sim.per_cell;
    let mut recordings = Vec::with_capacity(total);
    'outer: for i in 0..per_cell {
        for c in 0..cells {
            if recordings.len() == total {
                break 'outer;
            }
            recordings.push(all[c * per_cell + i].clone());
        }
    }
    let segments = recordings
        .iter()
        .map(|r| recording_segments(&r.id, &r.samples, SAMPLE_RATE, None))
        .collect::<Result<Vec<_>>>()?;
    Ok(Split { recordings, segments })
}

/// Matched clean and noisy cycles for the noise-response statistic, cut at
/// the same onsets. Returns `(noise component, clean)` network inputs.
fn orthogonality_sets(spec: &ExperimentSpec, feat: Featurizer<'_>) -> Result<(Vec<Array2<f64>>, Vec<Array2<f64>>)> {
    let mut noise = Vec::with_capacity(spec.orthogonality_draws);
    let mut clean = Vec::with_capacity(spec.orthogonality_draws);
    let (lo, hi) = spec.heart_rate_bpm;
    for i in 0..spec.orthogonality_draws {
        let frac = if spec.orthogonality_draws > 1 {
            i as f64 / (spec.orthogonality_draws - 1) as f64
        } else {
            0.5
        };
        let s = synth_pcg(&SyntheticPcgSpec {
            heart_rate_bpm: lo + (hi - lo) * frac,
            class: Label::ALL[i % 2],
            murmur_band: spec.murmur_band,
            murmur_level: spec.murmur_level,
            duration_s: spec.duration_s,
            seed: spec.seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
        })?;
        let x = mix_at_snr(
            &s,
            &NoiseSpec::white(spec.orthogonality_snr_db, spec.seed ^ (0xA5A5 + i as u64)),
        )?;
        let c = recording_segments("o", &s, SAMPLE_RATE, Some(&[0]))?;
        let n = recording_segments("o", &x, SAMPLE_RATE, Some(&[0]))?;
        let fc = feat.matrix(&c[0])?;
        let fx = feat.matrix(&n[0])?;
        noise.push(&fx - &fc);
        clean.push(fc);
    }
    Ok((noise, clean))
}

/// Runs the full experiment. Deterministic for a given spec.
pub fn run(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    if spec.systems.is_empty() {
        return Err(Error::param("no systems to train"));
    }
    let extractor = FeatureExtractor::new(spec.features)?;
    let train = build_split(spec, spec.train_recordings, spec.seed, "train_")?;
    let test = build_split(spec, spec.test_recordings, spec.seed.wrapping_add(1), "test_")?;
    let corpus: Vec<TrainSegment> = train
        .recordings
        .iter()
        .zip(&train.segments)
        .flat_map(|(r, segs)| {
            segs.iter().map(move |s| TrainSegment {
                segment: s.clone(),
                label: r.label,
                domain: r.channel.to_string(),
            })
        })
        .collect();
    let test_segments = test.segments.iter().map(Vec::len).sum();
    log::info!(
        "{} train cycles from {} recordings, {test_segments} test cycles",
        corpus.len(),
        train.recordings.len()
    );

    let mut systems = Vec::with_capacity(spec.systems.len());
    for kind in &spec.systems {
        let feat = Featurizer {
            extractor: &extractor,
            kind,
        };
        let model_cfg: ModelConfig = feat.model_config()?;
        let init = init_model::<f32>(&model_cfg, spec.train.seed)?;
        let (noise, clean) = orthogonality_sets(spec, feat)?;
        let orthogonality_init = noise_orthogonality_stat(&init, &noise, &clean)?;
        log::info!("training {kind}");
        let outcome = fit(&corpus, feat, &model_cfg, &spec.train)?;
        let orthogonality_trained = noise_orthogonality_stat(&outcome.params, &noise, &clean)?;

        let mut records = Vec::with_capacity(test.recordings.len());
        for (r, segs) in test.recordings.iter().zip(&test.segments) {
            let mats = segs.iter().map(|s| feat.matrix(s)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&Array2<f64>> = mats.iter().collect();
            records.push(score_matrices(
                &outcome.params,
                &refs,
                &r.id,
                &r.channel.to_string(),
                r.label,
            )?);
        }
        systems.push(SystemResult {
            kind: kind.clone(),
            report: EvalReport::from_records(records)?,
            log: outcome.log,
            orthogonality_init,
            orthogonality_trained,
            params: outcome.params,
        });
    }
    Ok(ExperimentResult {
        train_segments: corpus.len(),
        test_segments,
        systems,
    })
}

/// Compact text summary: one row per system plus per-channel accuracy.
pub fn summarize(result: &ExperimentResult) -> String {
    let mut s = format!(
        "{} train cycles, {} test cycles\n{:<16}{:>8}{:>8}{:>8}{:>10}{:>10}{:>10}\n",
        result.train_segments, result.test_segments, "system", "Macc", "AUC", "F1", "ch.std", "orth0", "orth"
    );
    let f = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{:.4}", v));
    for sys in &result.systems {
        s.push_str(&format!(
            "{:<16}{:>8}{:>8}{:>8}{:>10.4}{:>10.4}{:>10.4}\n",
            sys.kind.to_string(),
            f(sys.macc()),
            f(sys.report.auc),
            f(sys.report.metrics.f1),
            sys.channel_std(),
            sys.orthogonality_init,
            sys.orthogonality_trained
        ));
    }
    for sys in &result.systems {
        let accs: BTreeMap<&str, f64> = sys
            .report
            .domains
            .per_domain
            .iter()
            .map(|(d, a)| (d.as_str(), a.accuracy))
            .collect();
        s.push_str(&format!("{:<16}{accs:?}\n", sys.kind.to_string()));
    }
    s
}
