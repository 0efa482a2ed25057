use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::AudioClip;
use crate::error::{Error, Result};

/// Additive floor inside the log so silence maps to `ln(1e-10)` instead of -inf.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window_size: usize,
    pub hop_size: usize,
    #[serde(default)]
    pub window: WindowKind,
}

impl Default for StftConfig {
    /// 2048-sample Hann window with a 512-sample hop (about 21.5 Hz per bin at 44.1 kHz).
    fn default() -> Self {
        Self {
            window_size: 2048,
            hop_size: 512,
            window: WindowKind::Hann,
        }
    }
}

impl StftConfig {
    pub fn new(window_size: usize, hop_size: usize) -> Result<Self> {
        let cfg = Self {
            window_size,
            hop_size,
            window: WindowKind::Hann,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 || self.window_size % 2 != 0 {
            return Err(Error::Config(format!(
                "window size must be even and positive, got {}",
                self.window_size
            )));
        }
        if self.hop_size == 0 || self.hop_size > self.window_size {
            return Err(Error::Config(format!(
                "hop size must be in 1..={}, got {}",
                self.window_size, self.hop_size
            )));
        }
        Ok(())
    }

    pub fn freq_bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    pub fn frames_for(&self, n_samples: usize) -> usize {
        if n_samples < self.window_size {
            0
        } else {
            1 + (n_samples - self.window_size) / self.hop_size
        }
    }
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Linear power `|STFT|^2`, one-sided, `[freq_bins x frames]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrogram {
    pub power: Vec<f64>,
    pub freq_bins: usize,
    pub frames: usize,
    pub sample_rate: f64,
    pub window_size: usize,
}

pub fn power_spectrogram(clip: &AudioClip, cfg: &StftConfig) -> Result<PowerSpectrogram> {
    cfg.validate()?;
    let n = cfg.window_size;
    if clip.len() < n {
        return Err(Error::InsufficientSamples {
            needed: n,
            got: clip.len(),
        });
    }
    let frames = cfg.frames_for(clip.len());
    let bins = cfg.freq_bins();
    let window = match cfg.window {
        WindowKind::Hann => hann_window(n),
    };
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::default(); n];
    let mut power = vec![0.0; bins * frames];
    let samples = clip.samples();
    for t in 0..frames {
        let start = t * cfg.hop_size;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(samples[start + i] * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, c) in buf.iter().take(bins).enumerate() {
            power[k * frames + t] = c.norm_sqr();
        }
    }
    Ok(PowerSpectrogram {
        power,
        freq_bins: bins,
        frames,
        sample_rate: clip.sample_rate() as f64,
        window_size: n,
    })
}

/// `ln(|STFT|^2 + 1e-10)` over the full band `[0, sample_rate / 2]`.
pub fn logpower_spectrogram(clip: &AudioClip, cfg: &StftConfig) -> Result<Spectrogram> {
    let p = power_spectrogram(clip, cfg)?;
    let values = p
        .power
        .iter()
        .map(|&x| (x + LOG_FLOOR).ln() as f32)
        .collect();
    Spectrogram::new(
        values,
        p.freq_bins,
        p.frames,
        0.0,
        p.sample_rate / 2.0,
        p.sample_rate,
        p.sample_rate / p.window_size as f64,
    )
}

/// Log-power time-frequency matrix with its band metadata.
///
/// `values` is `[freq_bins x frames]` row-major, lowest frequency first.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    values: Vec<f32>,
    freq_bins: usize,
    frames: usize,
    f_lo: f64,
    f_hi: f64,
    sample_rate: f64,
    bin_hz: f64,
}

impl Spectrogram {
    pub fn new(
        values: Vec<f32>,
        freq_bins: usize,
        frames: usize,
        f_lo: f64,
        f_hi: f64,
        sample_rate: f64,
        bin_hz: f64,
    ) -> Result<Self> {
        if !(sample_rate > 0.0) || !(bin_hz > 0.0) {
            return Err(Error::InvalidValue("sample rate and bin width must be positive".into()));
        }
        if !(f_lo >= 0.0 && f_lo < f_hi) {
            return Err(Error::InvalidValue(format!("invalid band [{f_lo}, {f_hi}]")));
        }
        if f_hi > sample_rate / 2.0 {
            return Err(Error::InvalidValue(format!(
                "f_hi {f_hi} Hz exceeds the Nyquist frequency {} Hz",
                sample_rate / 2.0
            )));
        }
        if freq_bins == 0 || frames == 0 || values.len() != freq_bins * frames {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {freq_bins} x {frames}",
                values.len()
            )));
        }
        // The top band carries the Nyquist bin, so allow one bin of slack.
        let nominal = (f_hi - f_lo) / bin_hz;
        if (freq_bins as f64 - nominal).abs() > 1.0 + 1e-9 {
            return Err(Error::ShapeMismatch(format!(
                "{freq_bins} bins cannot cover [{f_lo}, {f_hi}] Hz at {bin_hz} Hz per bin"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("spectrogram".into()));
        }
        Ok(Self {
            values,
            freq_bins,
            frames,
            f_lo,
            f_hi,
            sample_rate,
            bin_hz,
        })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn freq_bins(&self) -> usize {
        self.freq_bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn f_lo(&self) -> f64 {
        self.f_lo
    }

    pub fn f_hi(&self) -> f64 {
        self.f_hi
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn bin_hz(&self) -> f64 {
        self.bin_hz
    }

    pub fn nyquist_hz(&self) -> f64 {
        self.sample_rate / 2.0
    }

    pub fn is_fullband(&self) -> bool {
        self.f_lo == 0.0 && self.f_hi == self.nyquist_hz()
    }

    pub fn at(&self, bin: usize, frame: usize) -> f32 {
        self.values[bin * self.frames + frame]
    }

    pub fn row(&self, bin: usize) -> &[f32] {
        &self.values[bin * self.frames..(bin + 1) * self.frames]
    }
}
