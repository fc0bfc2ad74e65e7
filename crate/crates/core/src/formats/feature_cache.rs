//! `PCGF` feature cache: magic, version, rows, cols, kind tag, then
//! row-major little-endian f32 values.

use ndarray::Array2;

use super::{put_f32s, put_str, put_u32, Reader};
use crate::error::Result;
use crate::features::{FeatureKind, FeatureMatrix, SegmentRef, MAX_FUSED_ROWS};

pub const MAGIC: &[u8; 4] = b"PCGF";
pub const VERSION: u32 = 1;
/// Upper bound on stored frames; a 2.5 s cycle has a few hundred.
pub const MAX_COLS: usize = 1 << 16;
const MAX_TAG: usize = 256;

/// Decoded cache entry. Values are kept at stored precision.
#[derive(Debug, Clone, PartialEq)]
pub struct CachedFeatures {
    pub kind: FeatureKind,
    pub values: Array2<f32>,
}

impl CachedFeatures {
    pub fn from_matrix(m: &FeatureMatrix) -> Self {
        CachedFeatures {
            kind: m.kind.clone(),
            values: m.values.mapv(|v| v as f32),
        }
    }

    pub fn into_matrix(self, segment: SegmentRef) -> FeatureMatrix {
        FeatureMatrix {
            values: self.values.mapv(f64::from),
            kind: self.kind,
            segment,
        }
    }
}

pub fn encode(f: &CachedFeatures) -> Vec<u8> {
    let (rows, cols) = f.values.dim();
    let tag = f.kind.to_string();
    let mut out = Vec::with_capacity(20 + tag.len() + 4 * rows * cols);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    put_u32(&mut out, rows);
    put_u32(&mut out, cols);
    put_str(&mut out, &tag);
    put_f32s(&mut out, f.values.iter().copied());
    out
}

pub fn decode(bytes: &[u8]) -> Result<CachedFeatures> {
    let mut r = Reader::new(bytes, "feature cache");
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    if rows == 0 || rows > MAX_FUSED_ROWS || cols == 0 || cols > MAX_COLS {
        return Err(r.err(format!("implausible shape {rows}×{cols}")));
    }
    let tag = r.string(MAX_TAG)?;
    let kind: FeatureKind = tag.parse().map_err(|e| r.err(format!("kind {tag:?}: {e}")))?;
    if kind.rows() != rows {
        return Err(r.err(format!("kind {kind} has {} rows, header says {rows}", kind.rows())));
    }
    let data = r.f32s(rows * cols)?;
    r.finish()?;
    let values = Array2::from_shape_vec((rows, cols), data).map_err(|e| r.err(e.to_string()))?;
    Ok(CachedFeatures { kind, values })
}
