//! Audio ingest and spectral front end.
//!
//! Clips are kept at their native sample rate; nothing here resamples. The
//! detector assumes 44.1 kHz input ([`NATIVE_SAMPLE_RATE`]) and callers can
//! check [`AudioClip::is_native_rate`] to warn on anything else.

mod cache;
mod partition;
mod stft;
mod wav;

pub use cache::{
    decode_spectrogram, encode_spectrogram, read_spectrogram_cache, write_spectrogram_cache,
    SPECTROGRAM_MAGIC,
};
pub use partition::{
    band_boundaries, bin_range_for_band, partition_spectrogram, slice_band, stack_subbands,
    SubbandPartition,
};
pub use stft::{
    hann_window, logpower_spectrogram, power_spectrogram, PowerSpectrogram, Spectrogram,
    StftConfig, WindowKind, LOG_FLOOR,
};
pub use wav::{encode_pcm16, load_wav, read_wav, write_wav_f32, write_wav_pcm16};

use crate::error::{Error, Result};

/// Sample rate the detector is designed around.
pub const NATIVE_SAMPLE_RATE: u32 = 44_100;

/// Mono sample buffer with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidValue("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("audio sample {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn nyquist_hz(&self) -> f64 {
        self.sample_rate as f64 / 2.0
    }

    pub fn is_native_rate(&self) -> bool {
        self.sample_rate == NATIVE_SAMPLE_RATE
    }
}

/// Crops (from sample 0) or repeat-pads a clip to `target_seconds`.
///
/// Padding tiles the whole clip and truncates the last copy.
pub fn standardize_duration(clip: &AudioClip, target_seconds: f64) -> Result<AudioClip> {
    if !(target_seconds > 0.0) || !target_seconds.is_finite() {
        return Err(Error::InvalidValue(format!(
            "target duration must be positive, got {target_seconds}"
        )));
    }
    if clip.samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let target = (target_seconds * clip.sample_rate as f64).round() as usize;
    if target == 0 {
        return Err(Error::InvalidValue("target duration rounds to zero samples".into()));
    }
    let samples = clip.samples.iter().copied().cycle().take(target).collect();
    Ok(AudioClip {
        samples,
        sample_rate: clip.sample_rate,
    })
}
