//! Flat binary spectrogram cache (`SBSP`).
//!
//! Layout, little-endian: magic `SBSP`, u32 version, u32 freq_bins, u32 frames,
//! f64 f_lo, f64 f_hi, f64 sample_rate, then `freq_bins * frames` f32 values
//! in row-major order.

use std::fs;
use std::path::Path;

use super::Spectrogram;
use crate::error::{Error, Result};

pub const SPECTROGRAM_MAGIC: &[u8; 4] = b"SBSP";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 3 + 8 * 3;

pub fn encode_spectrogram(spec: &Spectrogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + spec.values().len() * 4);
    out.extend_from_slice(SPECTROGRAM_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.freq_bins() as u32).to_le_bytes());
    out.extend_from_slice(&(spec.frames() as u32).to_le_bytes());
    out.extend_from_slice(&spec.f_lo().to_le_bytes());
    out.extend_from_slice(&spec.f_hi().to_le_bytes());
    out.extend_from_slice(&spec.sample_rate().to_le_bytes());
    for v in spec.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a cache blob.
///
/// The header has no bin-width field: fullband entries get
/// `sample_rate / (2 * (freq_bins - 1))`, slices get `(f_hi - f_lo) / freq_bins`.
pub fn decode_spectrogram(bytes: &[u8]) -> Result<Spectrogram> {
    if bytes.len() < HEADER_LEN || &bytes[0..4] != SPECTROGRAM_MAGIC {
        return Err(Error::Parse("missing SBSP header".into()));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::UnsupportedFormat(format!("SBSP version {version}")));
    }
    let bins = u32_at(8) as usize;
    let frames = u32_at(12) as usize;
    let (f_lo, f_hi, sr) = (f64_at(16), f64_at(24), f64_at(32));
    let n = bins
        .checked_mul(frames)
        .ok_or_else(|| Error::Parse("SBSP dimensions overflow".into()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != n * 4 {
        return Err(Error::Parse(format!(
            "SBSP body has {} bytes, header implies {}",
            body.len(),
            n * 4
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let bin_hz = if f_lo == 0.0 && f_hi == sr / 2.0 && bins > 1 {
        sr / (2.0 * (bins - 1) as f64)
    } else {
        (f_hi - f_lo) / bins as f64
    };
    Spectrogram::new(values, bins, frames, f_lo, f_hi, sr, bin_hz)
}

pub fn write_spectrogram_cache(path: impl AsRef<Path>, spec: &Spectrogram) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_spectrogram(spec)).map_err(|e| Error::file(path, e))
}

pub fn read_spectrogram_cache(path: impl AsRef<Path>) -> Result<Spectrogram> {
    let path = path.as_ref();
    decode_spectrogram(&fs::read(path).map_err(|e| Error::file(path, e))?)
}
