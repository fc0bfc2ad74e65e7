//! The corpus verbs. Each returns a summary for the caller to report; data
//! problems surface as [`CliError`] values that map onto exit codes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use pcg_core::distortion::ChannelKind;
use pcg_core::eval::{mcnemar_test, EvalReport, McNemarResult, PairedOutcomes, RecordingResult};
use pcg_core::features::{FeatureExtractor, FeatureKind, SegmentRef};
use pcg_core::formats::feature_cache::{self, CachedFeatures};
use pcg_core::formats::manifest::{self, Manifest, ManifestRow, Split};
use pcg_core::formats::{checkpoint, onsets, report, wav, write_atomic};
use pcg_core::pipeline::{format_snr, recording_segments, score_matrices, simulate_corpus, SimulationSpec};
use pcg_core::preprocess::CycleSegment;
use pcg_core::training::{fit, EpochRecord, Featurizer, TrainSegment};
use pcg_core::{Error, SAMPLE_RATE};
use rayon::prelude::*;

use crate::cache::{sha256_hex, CacheLayout, CacheRecord};
use crate::config::ExperimentConfig;
use crate::CliError;

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| Error::io(path, e).into())
}

fn mkdirs(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e).into())
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Usage(format!("worker pool: {e}")))
}

#[derive(Debug, Clone)]
pub struct SimulateArgs {
    pub out: PathBuf,
    pub per_cell: usize,
    pub channels: Vec<ChannelKind>,
    /// SNR values as typed; written to the manifest unchanged.
    pub snrs: Vec<String>,
    pub seed: u64,
    pub duration_s: f64,
    pub murmur_level: f64,
    /// Every `test_every`-th recording of each (class, channel) pair goes to
    /// the test split; 0 puts everything in train.
    pub test_every: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulateSummary {
    pub manifest: PathBuf,
    pub recordings: usize,
}

/// Synthesizes, adds noise, applies the channel, and writes 16-bit WAVs
/// plus `manifest.csv`. Domains are the channel names.
pub fn simulate(args: &SimulateArgs) -> Result<SimulateSummary, CliError> {
    if args.per_cell == 0 || args.channels.is_empty() || args.snrs.is_empty() {
        return Err(CliError::Usage("need --per-cell > 0, channels and SNRs".into()));
    }
    let snrs = args
        .snrs
        .iter()
        .map(|s| pcg_core::pipeline::parse_snr(s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let spec = SimulationSpec {
        per_cell: args.per_cell,
        channels: args.channels.clone(),
        snrs_db: snrs,
        duration_s: args.duration_s,
        murmur_level: args.murmur_level,
        seed: args.seed,
        ..SimulationSpec::default()
    };
    let recs = simulate_corpus(&spec, "sim_").map_err(|e| CliError::Usage(e.to_string()))?;
    let wav_dir = args.out.join("wav");
    mkdirs(&wav_dir)?;
    let mut m = Manifest {
        extra_columns: vec!["snr_db".into(), "channel".into(), "heart_rate_bpm".into()],
        rows: Vec::with_capacity(recs.len()),
    };
    for (pos, r) in recs.iter().enumerate() {
        let i = pos % args.per_cell;
        let peak = r.samples.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let scale = if peak > 0.0 { 0.9 / peak } else { 1.0 };
        let scaled: Vec<f64> = r.samples.iter().map(|v| v * scale).collect();
        let rel = format!("wav/{}.wav", r.id);
        write_atomic(&args.out.join(&rel), &wav::encode_pcm16(&scaled, SAMPLE_RATE as u32)?)?;
        let test = args.test_every > 0 && i % args.test_every == args.test_every - 1;
        let extra = BTreeMap::from([
            ("snr_db".to_string(), args.snrs[i % args.snrs.len()].trim().to_string()),
            ("channel".to_string(), r.channel.to_string()),
            ("heart_rate_bpm".to_string(), format!("{:.3}", r.heart_rate_bpm)),
        ]);
        debug_assert_eq!(
            pcg_core::pipeline::parse_snr(&extra["snr_db"]).map(format_snr).ok(),
            Some(format_snr(r.snr_db))
        );
        m.rows.push(ManifestRow {
            path: rel,
            label: r.label,
            domain: r.channel.to_string().replace(':', "-"),
            split: if test { Split::Test } else { Split::Train },
            patient_id: r.id.clone(),
            extra,
        });
    }
    let manifest = args.out.join("manifest.csv");
    write_atomic(&manifest, m.to_csv()?.as_bytes())?;
    log::info!("wrote {} recordings and {}", m.rows.len(), manifest.display());
    Ok(SimulateSummary {
        manifest,
        recordings: m.rows.len(),
    })
}

pub fn load_manifest(path: &Path) -> Result<Manifest, CliError> {
    let text = String::from_utf8(read(path)?).map_err(|e| Error::format("manifest", e.to_string()))?;
    Ok(manifest::parse(&text)?)
}

fn base_dir(manifest: &Path) -> &Path {
    manifest.parent().unwrap_or(Path::new(""))
}

/// Everything the cache-reading commands share.
pub struct Context {
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
    pub cfg: ExperimentConfig,
    pub kind: FeatureKind,
    pub extractor: FeatureExtractor,
    pub layout: CacheLayout,
    pub workers: usize,
}

impl Context {
    pub fn new(
        manifest_path: &Path,
        cfg: ExperimentConfig,
        cache_flag: Option<&Path>,
        workers: usize,
    ) -> Result<Self, CliError> {
        let manifest = load_manifest(manifest_path)?;
        let kind = cfg.feature_kind()?;
        let extractor = FeatureExtractor::new(cfg.feature).map_err(|e| CliError::Usage(e.to_string()))?;
        let root = cfg.resolve_cache_root(cache_flag, manifest_path);
        let layout = CacheLayout::new(&root, &kind, &cfg.feature);
        Ok(Context {
            manifest_path: manifest_path.to_path_buf(),
            manifest,
            cfg,
            kind,
            extractor,
            layout,
            workers,
        })
    }

    fn featurizer(&self) -> Featurizer<'_> {
        Featurizer {
            extractor: &self.extractor,
            kind: &self.kind,
        }
    }

    fn source(&self, row: &ManifestRow) -> PathBuf {
        base_dir(&self.manifest_path).join(&row.path)
    }

    fn onsets(&self, row: &ManifestRow) -> Result<Option<Vec<usize>>, CliError> {
        match row.extra.get("onsets").filter(|s| !s.trim().is_empty()) {
            None => Ok(None),
            Some(p) => {
                let path = base_dir(&self.manifest_path).join(p.trim());
                let text = String::from_utf8(read(&path)?).map_err(|e| Error::format("onset file", e.to_string()))?;
                Ok(Some(onsets::parse(&text)?))
            }
        }
    }

    /// Cache record for a row, or an error telling the user to extract.
    fn record(&self, row: &ManifestRow) -> Result<(String, CacheRecord), CliError> {
        let key = CacheLayout::key(&row.path);
        let hash = sha256_hex(&read(&self.source(row))?);
        if !self.layout.is_current(&key, &hash) {
            return Err(CliError::Data(format!(
                "no up-to-date cached features for {} in {}; run `pcg extract` with the same manifest and config first",
                row.path,
                self.layout.dir.display()
            )));
        }
        let rec = self.layout.read_record(&key).expect("checked current");
        Ok((key, rec))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExtractSummary {
    pub written: usize,
    pub skipped: usize,
    pub cycles: usize,
    pub failed: Vec<(String, String)>,
}

enum RowOutcome {
    Written(usize),
    Skipped(usize),
}

fn extract_row(ctx: &Context, row: &ManifestRow) -> Result<RowOutcome, CliError> {
    let src = ctx.source(row);
    let bytes = read(&src)?;
    let hash = sha256_hex(&bytes);
    let key = CacheLayout::key(&row.path);
    if ctx.layout.is_current(&key, &hash) {
        let cycles = ctx.layout.read_record(&key).map_or(0, |r| r.cycles);
        return Ok(RowOutcome::Skipped(cycles));
    }
    let w = wav::decode(&bytes)?;
    let onsets = ctx.onsets(row)?;
    let segments = recording_segments(&row.path, &w.samples, f64::from(w.sample_rate), onsets.as_deref())?;
    for seg in &segments {
        // Stored waveforms are f32; features come from exactly what is stored.
        let q: Vec<f64> = seg.samples.iter().map(|&v| f64::from(v as f32)).collect();
        let seg = CycleSegment {
            samples: q,
            parent: seg.parent.clone(),
            cycle_index: seg.cycle_index,
        };
        write_atomic(
            &ctx.layout.waveform(&key, seg.cycle_index),
            &wav::encode_f32(&seg.samples, SAMPLE_RATE as u32)?,
        )?;
        let m = ctx.extractor.extract_normalized(&seg, &ctx.kind)?;
        write_atomic(
            &ctx.layout.features(&key, seg.cycle_index),
            &feature_cache::encode(&CachedFeatures::from_matrix(&m)),
        )?;
    }
    let rec = CacheRecord {
        source: row.path.clone(),
        source_sha256: hash,
        kind: ctx.kind.to_string(),
        cycles: segments.len(),
    };
    let json = serde_json::to_string_pretty(&rec).expect("record serializes");
    write_atomic(&ctx.layout.record(&key), json.as_bytes())?;
    Ok(RowOutcome::Written(segments.len()))
}

/// Caches features and cycle waveforms for every manifest row. Rows that
/// fail are logged and listed; the rest still run.
pub fn extract(ctx: &Context) -> Result<ExtractSummary, CliError> {
    mkdirs(&ctx.layout.dir)?;
    let outcomes: Vec<(String, Result<RowOutcome, CliError>)> = pool(ctx.workers)?.install(|| {
        ctx.manifest
            .rows
            .par_iter()
            .map(|row| (row.path.clone(), extract_row(ctx, row)))
            .collect()
    });
    let mut s = ExtractSummary::default();
    for (path, out) in outcomes {
        match out {
            Ok(RowOutcome::Written(c)) => {
                log::info!("{path}: {c} cycles");
                s.written += 1;
                s.cycles += c;
            }
            Ok(RowOutcome::Skipped(c)) => {
                s.skipped += 1;
                s.cycles += c;
            }
            Err(e) => {
                log::error!("{path}: {e}");
                s.failed.push((path, e.to_string()));
            }
        }
    }
    log::info!(
        "extract: {} recordings written, {} up to date, {} failed, {} cycles in {}",
        s.written,
        s.skipped,
        s.failed.len(),
        s.cycles,
        ctx.layout.dir.display()
    );
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub segments: usize,
    pub last: Option<EpochRecord>,
}

pub fn train_log_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("log.jsonl")
}

/// Trains on the train split's cached cycle waveforms and writes the
/// checkpoint plus a line-per-epoch log beside it.
pub fn train(ctx: &Context, checkpoint_out: &Path) -> Result<TrainSummary, CliError> {
    ctx.cfg
        .train
        .validate()
        .map_err(|e| CliError::Usage(format!("train config: {e}")))?;
    let mut corpus = Vec::new();
    for row in ctx.manifest.split(Split::Train) {
        let (key, rec) = ctx.record(row)?;
        for k in 0..rec.cycles {
            let w = wav::decode(&read(&ctx.layout.waveform(&key, k))?)?;
            corpus.push(TrainSegment {
                segment: CycleSegment {
                    samples: w.samples,
                    parent: row.path.clone(),
                    cycle_index: k,
                },
                label: row.label,
                domain: row.domain.clone(),
            });
        }
    }
    if corpus.is_empty() {
        return Err(CliError::Data("train split has no cycles".into()));
    }
    let feat = ctx.featurizer();
    let (rows, cols) = feat.input_shape();
    let model_cfg = ctx.cfg.model_config(rows, cols)?;
    log::info!("training on {} cycles", corpus.len());
    let outcome = fit(&corpus, feat, &model_cfg, &ctx.cfg.train)?;
    if let Some(parent) = checkpoint_out.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdirs(parent)?;
    }
    write_atomic(checkpoint_out, &checkpoint::encode(&outcome.params))?;
    let log_path = train_log_path(checkpoint_out);
    write_atomic(&log_path, report::to_jsonl(&outcome.log).as_bytes())?;
    Ok(TrainSummary {
        checkpoint: checkpoint_out.to_path_buf(),
        log: log_path,
        segments: corpus.len(),
        last: outcome.log.last().cloned(),
    })
}

/// Scores the test split from cached features and writes `<out>.txt` and
/// `<out>.jsonl`.
pub fn evaluate(ctx: &Context, checkpoint_path: &Path, out: &Path) -> Result<EvalReport, CliError> {
    let params = checkpoint::decode(&read(checkpoint_path)?)?;
    let (rows, cols) = ctx.featurizer().input_shape();
    let mc = params.config();
    if (mc.input_rows, mc.input_cols) != (rows, cols) {
        return Err(CliError::Usage(format!(
            "checkpoint expects {}×{} inputs but {} features are {rows}×{cols}",
            mc.input_rows, mc.input_cols, ctx.kind
        )));
    }
    let test: Vec<&ManifestRow> = ctx.manifest.split(Split::Test).collect();
    if test.is_empty() {
        return Err(CliError::Data("test split is empty".into()));
    }
    let score = |row: &ManifestRow| -> Result<RecordingResult, CliError> {
        let (key, rec) = ctx.record(row)?;
        let mats = (0..rec.cycles)
            .map(|k| {
                let f = feature_cache::decode(&read(&ctx.layout.features(&key, k))?)?;
                if f.kind != ctx.kind {
                    return Err(CliError::Data(format!("{}: cached kind {} differs", row.path, f.kind)));
                }
                Ok(f.into_matrix(SegmentRef {
                    recording: row.path.clone(),
                    cycle_index: k,
                })
                .values)
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        let refs: Vec<_> = mats.iter().collect();
        Ok(score_matrices(&params, &refs, &row.path, &row.domain, row.label)?)
    };
    let records = pool(ctx.workers)?.install(|| test.par_iter().map(|r| score(r)).collect::<Result<Vec<_>, _>>())?;
    let rep = EvalReport::from_records(records)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdirs(parent)?;
    }
    write_atomic(&out.with_extension("txt"), rep.render_text().as_bytes())?;
    write_atomic(&out.with_extension("jsonl"), report::encode(&rep).as_bytes())?;
    Ok(rep)
}

pub fn compare(a: &Path, b: &Path) -> Result<(PairedOutcomes, McNemarResult), CliError> {
    let parse = |p: &Path| -> Result<Vec<RecordingResult>, CliError> {
        let text = String::from_utf8(read(p)?).map_err(|e| Error::format("report", e.to_string()))?;
        Ok(report::parse_records(&text)?)
    };
    let pair = PairedOutcomes::from_reports(&parse(a)?, &parse(b)?).map_err(|e| CliError::Data(e.to_string()))?;
    Ok((pair, mcnemar_test(&pair)?))
}

pub fn render_compare(pair: &PairedOutcomes, r: &McNemarResult) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "recordings {}  b (A right, B wrong) {}  c (A wrong, B right) {}",
        pair.n, pair.b, pair.c
    );
    let _ = writeln!(s, "chi2 {:.4}  p {:.6}", r.chi2, r.p_value);
    if let Some(e) = r.exact_p {
        let _ = writeln!(s, "exact binomial p {e:.6}");
    }
    let _ = writeln!(
        s,
        "{}",
        if r.significant {
            "significant at 0.05"
        } else {
            "not significant at 0.05"
        }
    );
    s
}
