//! Mono WAV input (integer PCM or 32-bit float) and output.

use std::io::{Cursor, Read, Seek};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

/// Decoded mono waveform, scaled to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

fn read<R: Read>(reader: WavReader<R>) -> Result<Waveform> {
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::format(
            "WAV",
            format!("{} channels, expected mono", spec.channels),
        ));
    }
    if spec.sample_rate == 0 {
        return Err(Error::format("WAV", "zero sample rate"));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (SampleFormat::Int, bits @ 1..=32) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<Vec<_>, _>>()?
        }
        (fmt, bits) => {
            return Err(Error::format("WAV", format!("unsupported {fmt:?} with {bits} bits")));
        }
    };
    Ok(Waveform {
        samples,
        sample_rate: spec.sample_rate,
    })
}

pub fn decode(bytes: &[u8]) -> Result<Waveform> {
    read(WavReader::new(Cursor::new(bytes))?)
}

pub fn read_file(path: &Path) -> Result<Waveform> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn write<W: std::io::Write + Seek>(w: W, samples: &[f64], sample_rate: u32, float: bool) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: if float { 32 } else { 16 },
        sample_format: if float { SampleFormat::Float } else { SampleFormat::Int },
    };
    let mut ww = WavWriter::new(w, spec)?;
    for &s in samples {
        if float {
            ww.write_sample(s as f32)?;
        } else {
            ww.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?;
        }
    }
    ww.finalize()?;
    Ok(())
}

/// 16-bit PCM at a scale of 32768; samples outside `[-1, 1)` clip.
pub fn encode_pcm16(samples: &[f64], sample_rate: u32) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    write(&mut buf, samples, sample_rate, false)?;
    Ok(buf.into_inner())
}

/// 32-bit float, lossless for values already at f32 precision.
pub fn encode_f32(samples: &[f64], sample_rate: u32) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    write(&mut buf, samples, sample_rate, true)?;
    Ok(buf.into_inner())
}
