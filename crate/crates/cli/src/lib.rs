//! `pcg` command-line front end: simulate a corpus, cache features, train,
//! evaluate and compare systems.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 training divergence.

pub mod cache;
pub mod commands;
pub mod config;
pub mod physionet;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pcg_core::distortion::ChannelKind;

use crate::commands::{Context, SimulateArgs};
use crate::config::{ExperimentConfig, CACHE_ENV};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] pcg_core::Error),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(pcg_core::Error::Diverged(_)) => 3,
            CliError::Core(_) | CliError::Data(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "pcg",
    version,
    about = "Heart sound abnormality detection under noise and channel distortion"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Manifest CSV (path,label,domain,split,patient_id[,...]).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Experiment TOML file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Single worker, fixed order.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output: directory for simulate, checkpoint for train, report prefix
    /// for evaluate.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, env = CACHE_ENV)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic labelled corpus and its manifest.
    Simulate {
        #[arg(long, default_value_t = 10)]
        per_cell: usize,
        /// Comma-separated channels: identity, lowpass_tilt, resonant,
        /// random_fir:<seed>:<len>.
        #[arg(long, value_delimiter = ',', default_values_t = vec![ChannelKind::Identity, ChannelKind::LowpassTilt, ChannelKind::Resonant])]
        channels: Vec<ChannelKind>,
        /// Comma-separated SNRs in dB; `inf` for no noise.
        #[arg(long, value_delimiter = ',', default_values_t = vec!["5".to_string(), "15".to_string()])]
        snrs: Vec<String>,
        #[arg(long, default_value_t = 2.5)]
        duration: f64,
        #[arg(long, default_value_t = 0.5)]
        murmur_level: f64,
        /// Every k-th recording of each class and channel is held out.
        #[arg(long, default_value_t = 4)]
        test_every: usize,
    },
    /// Segment recordings and cache features and cycle waveforms.
    Extract,
    /// Train on the train split and write a checkpoint.
    Train,
    /// Score the test split with a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// McNemar test between two evaluation reports (`.jsonl`).
    Compare { report_a: PathBuf, report_b: PathBuf },
    /// Build a manifest for a PhysioNet/CinC 2016 download. `--out` names the
    /// CSV (default `<root>/manifest.csv`).
    Physionet {
        #[arg(long)]
        root: PathBuf,
        /// Record names for the test split, one per line.
        #[arg(long)]
        test_list: Option<PathBuf>,
    },
}

fn require(p: Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    p.ok_or_else(|| CliError::Usage(format!("{what} is required (flag or config file)")))
}

fn workers(common: &Common, cfg: &ExperimentConfig) -> usize {
    if common.deterministic {
        1
    } else {
        common
            .workers
            .or(cfg.workers)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

fn context(common: &Common, cfg: ExperimentConfig) -> Result<Context, CliError> {
    let manifest = require(common.manifest.clone().or(cfg.manifest.clone()), "--manifest")?;
    let w = workers(common, &cfg);
    Context::new(&manifest, cfg, common.cache_dir.as_deref(), w)
}

/// Runs one command. Returns the process exit code on success paths that
/// still need a nonzero status (partial extraction failures).
pub fn run(cli: Cli) -> Result<u8, CliError> {
    let common = cli.common;
    let mut cfg = ExperimentConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    match cli.command {
        Command::Simulate {
            per_cell,
            channels,
            snrs,
            duration,
            murmur_level,
            test_every,
        } => {
            let out = require(common.out, "--out")?;
            let s = commands::simulate(&SimulateArgs {
                out,
                per_cell,
                channels,
                snrs,
                seed: common.seed.unwrap_or(0),
                duration_s: duration,
                murmur_level,
                test_every,
            })?;
            println!("{} recordings, manifest {}", s.recordings, s.manifest.display());
            Ok(0)
        }
        Command::Extract => {
            let ctx = context(&common, cfg)?;
            let s = commands::extract(&ctx)?;
            println!(
                "{} written, {} up to date, {} failed, {} cycles",
                s.written,
                s.skipped,
                s.failed.len(),
                s.cycles
            );
            Ok(if s.failed.is_empty() { 0 } else { 2 })
        }
        Command::Train => {
            let out = require(common.out.clone().or(cfg.checkpoint.clone()), "--out")?;
            let ctx = context(&common, cfg)?;
            let s = commands::train(&ctx, &out)?;
            if let Some(last) = &s.last {
                println!("epoch {} loss {:.4} acc {:.4}", last.epoch, last.loss, last.train_acc);
            }
            println!(
                "checkpoint {} ({} cycles), log {}",
                s.checkpoint.display(),
                s.segments,
                s.log.display()
            );
            Ok(0)
        }
        Command::Evaluate { checkpoint } => {
            let ckpt = require(checkpoint.or(cfg.checkpoint.clone()), "--checkpoint")?;
            let out = require(common.out.clone().or(cfg.report.clone()), "--out")?;
            let ctx = context(&common, cfg)?;
            let rep = commands::evaluate(&ctx, &ckpt, &out)?;
            print!("{}", rep.render_text());
            Ok(0)
        }
        Command::Compare { report_a, report_b } => {
            let (pair, r) = commands::compare(&report_a, &report_b)?;
            print!("{}", commands::render_compare(&pair, &r));
            Ok(0)
        }
        Command::Physionet { root, test_list } => {
            let out = common.out.unwrap_or_else(|| root.join("manifest.csv"));
            let test = match test_list {
                Some(p) => {
                    physionet::parse_record_list(&std::fs::read_to_string(&p).map_err(|e| pcg_core::Error::io(&p, e))?)
                }
                None => Default::default(),
            };
            // Paths stay relative only when the manifest sits in the root.
            let same_dir = out.parent().map(|p| p.canonicalize().ok()) == Some(root.canonicalize().ok());
            let prefix = if same_dir {
                None
            } else {
                Some(root.canonicalize().map_err(|e| pcg_core::Error::io(&root, e))?)
            };
            let m = physionet::build_manifest(&root, &test, prefix.as_deref())?;
            pcg_core::formats::write_atomic(&out, m.to_csv()?.as_bytes())?;
            println!(
                "{} recordings ({} test), manifest {}",
                m.rows.len(),
                m.split(pcg_core::formats::manifest::Split::Test).count(),
                out.display()
            );
            Ok(0)
        }
    }
}
