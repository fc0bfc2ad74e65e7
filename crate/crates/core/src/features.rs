//! Frame-level acoustic features taken from successive stages of the
//! filterbank pipeline, their vertical fusion, and per-cycle normalization.
//!
//! ```text
//! power spectrum -> mel filterbank -> Fbank
//!                                  -> ln -> LogFbank
//!                                        -> DCT -> MFCC26 / MFCC13 (+ deltas)
//! ```

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dsp::{delta_features, Dct2, FrameSpec, MelFilterbank, SpectralAnalyzer};
use crate::error::{Error, Result};
use crate::preprocess::CycleSegment;
use crate::SAMPLE_RATE;

pub const NUM_MEL: usize = 26;
pub const MFCC_SHORT: usize = 13;
pub const MAX_FUSED_ROWS: usize = 65;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaseFeature {
    Fbank,
    LogFbank,
    Mfcc26,
    Mfcc13,
    Mfcc13D,
    Mfcc13DD,
}

impl BaseFeature {
    pub fn rows(self) -> usize {
        match self {
            BaseFeature::Fbank | BaseFeature::LogFbank | BaseFeature::Mfcc26 => NUM_MEL,
            BaseFeature::Mfcc13 => MFCC_SHORT,
            BaseFeature::Mfcc13D => 2 * MFCC_SHORT,
            BaseFeature::Mfcc13DD => 3 * MFCC_SHORT,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            BaseFeature::Fbank => "Fbank",
            BaseFeature::LogFbank => "LogFbank",
            BaseFeature::Mfcc26 => "MFCC26",
            BaseFeature::Mfcc13 => "MFCC13",
            BaseFeature::Mfcc13D => "MFCC13_D",
            BaseFeature::Mfcc13DD => "MFCC13_DD",
        }
    }
}

impl FromStr for BaseFeature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .trim()
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "fbank" => Ok(BaseFeature::Fbank),
            "logfbank" => Ok(BaseFeature::LogFbank),
            "mfcc26" => Ok(BaseFeature::Mfcc26),
            "mfcc13" => Ok(BaseFeature::Mfcc13),
            "mfcc13d" | "mfcc13+d" | "mfcc13+δ" => Ok(BaseFeature::Mfcc13D),
            "mfcc13dd" | "mfcc13+d+dd" | "mfcc13+δ+δδ" => Ok(BaseFeature::Mfcc13DD),
            _ => Err(Error::param(format!("unknown feature {s:?}"))),
        }
    }
}

/// Ordered list of base features stacked top to bottom.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureKind(Vec<BaseFeature>);

impl FeatureKind {
    pub fn new(parts: Vec<BaseFeature>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::param("feature kind needs at least one part"));
        }
        for (i, p) in parts.iter().enumerate() {
            if parts[..i].contains(p) {
                return Err(Error::param(format!("feature {} listed twice", p.tag())));
            }
        }
        let kind = FeatureKind(parts);
        if kind.rows() > MAX_FUSED_ROWS {
            return Err(Error::param(format!(
                "fused feature {kind} has {} rows, limit is {MAX_FUSED_ROWS}",
                kind.rows()
            )));
        }
        Ok(kind)
    }

    pub fn single(base: BaseFeature) -> Self {
        FeatureKind(vec![base])
    }

    pub fn parts(&self) -> &[BaseFeature] {
        &self.0
    }

    pub fn rows(&self) -> usize {
        self.0.iter().map(|p| p.rows()).sum()
    }

    pub fn is_fused(&self) -> bool {
        self.0.len() > 1
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tags: Vec<&str> = self.0.iter().map(|p| p.tag()).collect();
        f.write_str(&tags.join("&"))
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts = s
            .split(['&', ','])
            .map(str::parse)
            .collect::<Result<Vec<BaseFeature>>>()?;
        FeatureKind::new(parts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// One mean and standard deviation over the whole matrix.
    #[default]
    Global,
    PerRow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FusionNorm {
    /// Normalize the stacked matrix once.
    #[default]
    AfterFusion,
    /// Normalize each part before stacking.
    PerPart,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub frame: FrameSpec,
    pub num_filters: usize,
    pub f_low: f64,
    pub f_high: f64,
    pub log_floor: f64,
    pub delta_half_width: usize,
    pub norm: NormMode,
    pub fusion_norm: FusionNorm,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            frame: FrameSpec::default(),
            num_filters: NUM_MEL,
            f_low: 0.0,
            f_high: SAMPLE_RATE / 2.0,
            log_floor: 1e-10,
            delta_half_width: 2,
            norm: NormMode::Global,
            fusion_norm: FusionNorm::AfterFusion,
        }
    }
}

/// Identifies the cycle a matrix was computed from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct SegmentRef {
    pub recording: String,
    pub cycle_index: usize,
}

impl From<&CycleSegment> for SegmentRef {
    fn from(seg: &CycleSegment) -> Self {
        SegmentRef {
            recording: seg.parent.clone(),
            cycle_index: seg.cycle_index,
        }
    }
}

/// `d × T` matrix: one column per frame, one row per feature coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    pub kind: FeatureKind,
    pub segment: SegmentRef,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }
}

/// Planned feature pipeline. Cheap to clone, safe to share across threads.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    analyzer: SpectralAnalyzer,
    filterbank: MelFilterbank,
    dct: Dct2,
    window: Vec<f64>,
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        cfg.frame.validate()?;
        if cfg.num_filters != NUM_MEL {
            return Err(Error::param(format!(
                "feature dimensions assume {NUM_MEL} mel filters, got {}",
                cfg.num_filters
            )));
        }
        if !(cfg.log_floor > 0.0) {
            return Err(Error::param("log floor must be positive"));
        }
        Ok(FeatureExtractor {
            analyzer: SpectralAnalyzer::new(cfg.frame.dft_size)?,
            filterbank: MelFilterbank::new(cfg.num_filters, SAMPLE_RATE, cfg.frame.dft_size, cfg.f_low, cfg.f_high)?,
            dct: Dct2::new(cfg.num_filters)?,
            window: cfg.frame.window_fn.coefficients(cfg.frame.window_len),
            cfg,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// Linear filterbank energies, `num_filters × frames`.
    pub fn fbank(&self, samples: &[f64]) -> Result<Array2<f64>> {
        let spec = &self.cfg.frame;
        let frames = spec.num_frames(samples.len());
        if frames == 0 {
            return Err(Error::SignalTooShort {
                len: samples.len(),
                needed: spec.window_len,
            });
        }
        let mut out = Array2::zeros((self.cfg.num_filters, frames));
        let mut frame = vec![0.0; spec.window_len];
        for t in 0..frames {
            let start = t * spec.hop;
            for ((f, s), w) in frame
                .iter_mut()
                .zip(&samples[start..start + spec.window_len])
                .zip(&self.window)
            {
                *f = s * w;
            }
            let power = self.analyzer.power(&frame)?;
            let energies = self.filterbank.apply(&power)?;
            out.column_mut(t).assign(&ndarray::Array1::from(energies));
        }
        Ok(out)
    }

    fn log_of(&self, fbank: &Array2<f64>) -> Array2<f64> {
        let floor = self.cfg.log_floor;
        fbank.mapv(|e| e.max(floor).ln())
    }

    fn cepstra(&self, logfb: &Array2<f64>, keep: usize) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((keep, logfb.ncols()));
        for (t, col) in logfb.columns().into_iter().enumerate() {
            let c = self.dct.forward(&col.to_vec(), keep)?;
            out.column_mut(t).assign(&ndarray::Array1::from(c));
        }
        Ok(out)
    }

    fn with_deltas(&self, base: Array2<f64>, order: usize) -> Result<Array2<f64>> {
        let mut blocks = vec![base];
        for _ in 0..order {
            let d = delta_features(blocks.last().expect("nonempty"), self.cfg.delta_half_width)?;
            blocks.push(d);
        }
        let views: Vec<ArrayView2<f64>> = blocks.iter().map(|b| b.view()).collect();
        Ok(concatenate(Axis(0), &views).expect("blocks share column count"))
    }

    fn base_values(&self, samples: &[f64], parts: &[BaseFeature]) -> Result<Vec<Array2<f64>>> {
        let fbank = self.fbank(samples)?;
        let needs_log = parts.iter().any(|p| *p != BaseFeature::Fbank);
        let logfb = needs_log.then(|| self.log_of(&fbank));
        let mut mfcc13: Option<Array2<f64>> = None;
        let mut out = Vec::with_capacity(parts.len());
        for part in parts {
            let logfb = logfb.as_ref();
            let values = match part {
                BaseFeature::Fbank => fbank.clone(),
                BaseFeature::LogFbank => logfb.expect("computed").clone(),
                BaseFeature::Mfcc26 => self.cepstra(logfb.expect("computed"), NUM_MEL)?,
                BaseFeature::Mfcc13 | BaseFeature::Mfcc13D | BaseFeature::Mfcc13DD => {
                    if mfcc13.is_none() {
                        mfcc13 = Some(self.cepstra(logfb.expect("computed"), MFCC_SHORT)?);
                    }
                    let base = mfcc13.clone().expect("computed");
                    match part {
                        BaseFeature::Mfcc13 => base,
                        BaseFeature::Mfcc13D => self.with_deltas(base, 1)?,
                        _ => self.with_deltas(base, 2)?,
                    }
                }
            };
            out.push(values);
        }
        Ok(out)
    }

    /// Unnormalized matrix for one base feature.
    pub fn extract(&self, seg: &CycleSegment, base: BaseFeature) -> Result<FeatureMatrix> {
        let mut values = self.base_values(&seg.samples, &[base])?;
        Ok(FeatureMatrix {
            values: values.pop().expect("one part"),
            kind: FeatureKind::single(base),
            segment: seg.into(),
        })
    }

    /// Extracts every part of `kind`, stacks them and normalizes per cycle
    /// according to the configured modes. This is the network input.
    pub fn extract_normalized(&self, seg: &CycleSegment, kind: &FeatureKind) -> Result<FeatureMatrix> {
        let segment = SegmentRef::from(seg);
        let parts: Vec<FeatureMatrix> = self
            .base_values(&seg.samples, kind.parts())?
            .into_iter()
            .zip(kind.parts())
            .map(|(values, &base)| FeatureMatrix {
                values,
                kind: FeatureKind::single(base),
                segment: segment.clone(),
            })
            .collect();
        let norm = |m: &FeatureMatrix| match self.cfg.norm {
            NormMode::Global => normalize_cycle(m),
            NormMode::PerRow => normalize_rows(m),
        };
        match self.cfg.fusion_norm {
            FusionNorm::AfterFusion => Ok(norm(&fuse(&parts)?)),
            FusionNorm::PerPart => {
                let normed: Vec<FeatureMatrix> = parts.iter().map(norm).collect();
                fuse(&normed)
            }
        }
    }
}

/// Stacks parts vertically in the given order.
pub fn fuse(parts: &[FeatureMatrix]) -> Result<FeatureMatrix> {
    let first = parts.first().ok_or_else(|| Error::Empty("nothing to fuse".into()))?;
    for p in &parts[1..] {
        if p.cols() != first.cols() {
            return Err(Error::shape(format!(
                "cannot fuse {} columns with {} columns",
                p.cols(),
                first.cols()
            )));
        }
        if p.segment != first.segment {
            return Err(Error::shape(format!(
                "cannot fuse features of {}#{} with {}#{}",
                p.segment.recording, p.segment.cycle_index, first.segment.recording, first.segment.cycle_index
            )));
        }
    }
    let kind = FeatureKind::new(parts.iter().flat_map(|p| p.kind.parts().iter().copied()).collect())?;
    let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| p.values.view()).collect();
    Ok(FeatureMatrix {
        values: concatenate(Axis(0), &views).expect("checked column counts"),
        kind,
        segment: first.segment.clone(),
    })
}

pub const NORM_EPS: f64 = 1e-8;

fn standardize(values: ndarray::ArrayViewMut2<f64>) {
    let mut values = values;
    let n = values.len() as f64;
    if n == 0.0 {
        return;
    }
    let mean = values.sum() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = var.sqrt().max(NORM_EPS);
    values.mapv_inplace(|v| (v - mean) / scale);
}

/// Zero mean, unit standard deviation over all entries of the matrix.
pub fn normalize_cycle(f: &FeatureMatrix) -> FeatureMatrix {
    let mut out = f.clone();
    standardize(out.values.view_mut());
    out
}

/// Zero mean, unit standard deviation within each row.
pub fn normalize_rows(f: &FeatureMatrix) -> FeatureMatrix {
    let mut out = f.clone();
    for r in 0..out.rows() {
        standardize(out.values.slice_mut(s![r..r + 1, ..]));
    }
    out
}
