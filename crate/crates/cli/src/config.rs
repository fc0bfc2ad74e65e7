//! Experiment configuration: one TOML file, with command-line flags
//! taking precedence.

use std::path::{Path, PathBuf};

use pcg_core::features::{FeatureConfig, FeatureKind};
use pcg_core::model::ModelConfig;
use pcg_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CACHE_ENV: &str = "PCG_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub stem_width: usize,
    pub widths: [usize; 4],
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            stem_width: 16,
            widths: [16, 32, 64, 128],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Network input, e.g. `"Fbank&MFCC13"`.
    pub features: String,
    pub manifest: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub workers: Option<usize>,
    pub feature: FeatureConfig,
    pub train: TrainConfig,
    pub model: ModelSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            features: "Fbank&MFCC13".into(),
            manifest: None,
            cache_dir: None,
            checkpoint: None,
            report: None,
            workers: None,
            feature: FeatureConfig::default(),
            train: TrainConfig::default(),
            model: ModelSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    /// Defaults when `path` is `None`. Relative paths inside the file are
    /// resolved against the file's directory.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.manifest,
            &mut cfg.cache_dir,
            &mut cfg.checkpoint,
            &mut cfg.report,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn feature_kind(&self) -> Result<FeatureKind, CliError> {
        self.features
            .parse()
            .map_err(|e| CliError::Usage(format!("features {:?}: {e}", self.features)))
    }

    pub fn model_config(&self, rows: usize, cols: usize) -> Result<ModelConfig, CliError> {
        ModelConfig::reduced(rows, cols, self.model.stem_width, self.model.widths)
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    /// Flag, then environment, then config file, then `<manifest dir>/cache`.
    pub fn resolve_cache_root(&self, flag: Option<&Path>, manifest: &Path) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(p);
        }
        if let Some(p) = &self.cache_dir {
            return p.clone();
        }
        manifest.parent().unwrap_or(Path::new(".")).join("cache")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_partial_config() {
        let cfg = ExperimentConfig::parse(
            "features = \"MFCC13\"\n[train]\nepochs = 3\nbatch_size = 8\n[model]\nwidths = [4, 4, 8, 8]\n[feature.frame]\nhop = 10\n",
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.momentum, 0.9);
        assert_eq!(cfg.model.stem_width, 16);
        assert_eq!(cfg.feature_kind().unwrap().rows(), 13);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(ExperimentConfig::parse("featurez = \"MFCC13\"").is_err());
        assert!(ExperimentConfig::parse("[train]\nlr = 1").is_err());
    }
}
