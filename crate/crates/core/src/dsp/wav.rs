//! RIFF/WAVE reader and writer for 16-bit PCM and 32-bit float audio.

use std::fs;
use std::path::Path;

use super::AudioClip;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy)]
enum Encoding {
    Pcm16,
    Float32,
}

/// Reads a WAV file and downmixes it to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    read_wav(&bytes)
}

/// Parses WAV bytes. Channels are averaged; 16-bit samples are scaled by 1/32768.
pub fn read_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Parse("missing RIFF/WAVE header".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(Encoding, u16, u32)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::Parse(format!("chunk {:?} overruns file", String::from_utf8_lossy(id))))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => fmt = Some(parse_fmt(body)?),
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (size & 1);
    }
    let (encoding, channels, sample_rate) =
        fmt.ok_or_else(|| Error::Parse("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Parse("missing data chunk".into()))?;
    let width = match encoding {
        Encoding::Pcm16 => 2,
        Encoding::Float32 => 4,
    };
    let frame = width * channels as usize;
    let n_frames = data.len() / frame;
    if n_frames == 0 {
        return Err(Error::EmptyInput);
    }
    let inv = 1.0 / channels as f64;
    let mut samples = Vec::with_capacity(n_frames);
    for f in data.chunks_exact(frame) {
        let sum: f64 = f
            .chunks_exact(width)
            .map(|s| match encoding {
                Encoding::Pcm16 => i16::from_le_bytes([s[0], s[1]]) as f64 / 32768.0,
                Encoding::Float32 => f32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64,
            })
            .sum();
        samples.push(if channels == 1 { sum } else { sum * inv });
    }
    AudioClip::new(samples, sample_rate)
}

fn parse_fmt(body: &[u8]) -> Result<(Encoding, u16, u32)> {
    if body.len() < 16 {
        return Err(Error::Parse("fmt chunk too short".into()));
    }
    let u16_at = |i: usize| u16::from_le_bytes([body[i], body[i + 1]]);
    let mut format = u16_at(0);
    let channels = u16_at(2);
    let sample_rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
    let bits = u16_at(14);
    if format == FORMAT_EXTENSIBLE {
        if body.len() < 40 {
            return Err(Error::Parse("extensible fmt chunk too short".into()));
        }
        format = u16_at(24);
    }
    if channels == 0 {
        return Err(Error::Parse("zero channels".into()));
    }
    if sample_rate == 0 {
        return Err(Error::Parse("zero sample rate".into()));
    }
    let encoding = match (format, bits) {
        (FORMAT_PCM, 16) => Encoding::Pcm16,
        (FORMAT_FLOAT, 32) => Encoding::Float32,
        (f, b) => {
            return Err(Error::UnsupportedFormat(format!(
                "format tag {f} with {b} bits per sample"
            )))
        }
    };
    Ok((encoding, channels, sample_rate))
}

fn header(data_len: usize, format: u16, bits: u16, sample_rate: u32) -> Vec<u8> {
    let block_align = bits / 8;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    out
}

/// Encodes a clip as mono 16-bit PCM. Samples are clamped to the i16 range.
pub fn encode_pcm16(clip: &AudioClip) -> Vec<u8> {
    let mut out = header(clip.len() * 2, FORMAT_PCM, 16, clip.sample_rate());
    for &s in clip.samples() {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn write_wav_pcm16(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pcm16(clip)).map_err(|e| Error::file(path, e))
}

pub fn write_wav_f32(path: impl AsRef<Path>, clip: &AudioClip) -> Result<()> {
    let path = path.as_ref();
    let mut out = header(clip.len() * 4, FORMAT_FLOAT, 32, clip.sample_rate());
    for &s in clip.samples() {
        out.extend_from_slice(&(s as f32).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::file(path, e))
}
