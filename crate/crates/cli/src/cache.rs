//! Feature cache layout under a root directory:
//!
//! ```text
//! <root>/<kind>-<config hash>/<recording key>.json      per-recording record
//! <root>/<kind>-<config hash>/<recording key>.c<k>.pcgf cycle k features
//! <root>/<kind>-<config hash>/<recording key>.c<k>.wav  cycle k waveform
//! ```
//!
//! The record is written last, so its presence means the entry is complete.

use std::path::{Path, PathBuf};

use pcg_core::features::{FeatureConfig, FeatureKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

fn hex(bytes: &[u8], n: usize) -> String {
    bytes.iter().take(n).map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes), 32)
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct CacheLayout {
    pub dir: PathBuf,
}

impl CacheLayout {
    pub fn new(root: &Path, kind: &FeatureKind, cfg: &FeatureConfig) -> Self {
        let fingerprint = serde_json::to_string(&(kind.to_string(), cfg)).expect("config serializes");
        let tag = format!(
            "{}-{}",
            sanitize(&kind.to_string()),
            hex(&Sha256::digest(fingerprint.as_bytes()), 4)
        );
        CacheLayout { dir: root.join(tag) }
    }

    /// Stable key from the manifest path: readable stem plus a short hash.
    pub fn key(manifest_path: &str) -> String {
        let stem = Path::new(manifest_path)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("rec");
        format!(
            "{}-{}",
            sanitize(stem),
            hex(&Sha256::digest(manifest_path.as_bytes()), 4)
        )
    }

    pub fn record(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn features(&self, key: &str, cycle: usize) -> PathBuf {
        self.dir.join(format!("{key}.c{cycle}.pcgf"))
    }

    pub fn waveform(&self, key: &str, cycle: usize) -> PathBuf {
        self.dir.join(format!("{key}.c{cycle}.wav"))
    }

    pub fn read_record(&self, key: &str) -> Option<CacheRecord> {
        let text = std::fs::read_to_string(self.record(key)).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// True when the record matches `source_sha256` and every cycle file exists.
    pub fn is_current(&self, key: &str, source_sha256: &str) -> bool {
        self.read_record(key).is_some_and(|r| {
            r.source_sha256 == source_sha256
                && (0..r.cycles).all(|k| self.features(key, k).is_file() && self.waveform(key, k).is_file())
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheRecord {
    pub source: String,
    pub source_sha256: String,
    pub kind: String,
    pub cycles: usize,
}
