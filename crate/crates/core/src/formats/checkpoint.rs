//! `PCGM` checkpoint: magic, version, tensor count, then per tensor a
//! length-prefixed name, rank, dims and little-endian f32 values.

use std::collections::BTreeMap;

use super::{put_f32s, put_str, put_u32, Reader};
use crate::error::Result;
use crate::model::{ModelParams, ParamMap, Tensor};

pub const MAGIC: &[u8; 4] = b"PCGM";
pub const VERSION: u32 = 1;
const MAX_NAME: usize = 256;
const MAX_RANK: usize = 8;
const MAX_TENSORS: usize = 4096;

pub fn encode_tensors(tensors: &ParamMap<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    put_u32(&mut out, tensors.len());
    for (name, t) in tensors {
        put_str(&mut out, name);
        put_u32(&mut out, t.shape.len());
        for &d in &t.shape {
            put_u32(&mut out, d);
        }
        put_f32s(&mut out, t.data.iter().copied());
    }
    out
}

pub fn decode_tensors(bytes: &[u8]) -> Result<ParamMap<f32>> {
    let mut r = Reader::new(bytes, "checkpoint");
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    if count > MAX_TENSORS {
        return Err(r.err(format!("{count} tensors exceeds {MAX_TENSORS}")));
    }
    let mut map = BTreeMap::new();
    for _ in 0..count {
        let name = r.string(MAX_NAME)?.to_string();
        let rank = r.u32()? as usize;
        if rank > MAX_RANK {
            return Err(r.err(format!("{name}: rank {rank} exceeds {MAX_RANK}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| r.err(format!("{name}: element count overflows")))?;
        let data = r.f32s(n)?;
        if map.insert(name.clone(), Tensor { shape, data }).is_some() {
            return Err(r.err(format!("duplicate tensor {name}")));
        }
    }
    r.finish()?;
    Ok(map)
}

pub fn encode(params: &ModelParams<f32>) -> Vec<u8> {
    encode_tensors(params.tensors())
}

/// Decodes and checks that the tensors form a consistent network.
pub fn decode(bytes: &[u8]) -> Result<ModelParams<f32>> {
    ModelParams::from_tensors(decode_tensors(bytes)?)
}
