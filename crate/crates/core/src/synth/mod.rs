//! Deterministic synthetic singing-like corpus with forgery artifacts planted
//! in a chosen frequency band.
//!
//! A bonafide clip is a vibrato harmonic series with `1/k` rolloff plus
//! band-passed breath noise. A deepfake clip is the bonafide clip for the same
//! index with an artifact applied inside [`ArtifactSpec::band`] only, scaled
//! by the bonafide gain, so out-of-band content is unchanged.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dsp::{write_wav_pcm16, AudioClip, NATIVE_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::eval::Label;
use crate::expert::{DatasetManifest, ManifestRow, Split};

const PEAK: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    /// Attenuates the band by `strength` (a full notch at 1).
    BandNotch,
    /// Adds partials reflected into the band from just below it.
    MirroredTones,
    /// Replaces band content with random-phase noise on a quantized envelope.
    BandlimitedResynthesis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArtifactSpec {
    pub kind: ArtifactKind,
    pub band: (f64, f64),
    pub strength: f64,
}

impl Default for ArtifactSpec {
    fn default() -> Self {
        Self {
            kind: ArtifactKind::BandNotch,
            band: (11025.0, 16537.5),
            strength: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vibrato {
    pub rate_hz: f64,
    pub depth_cents: f64,
}

/// Out-of-distribution test split generated from a shifted pitch range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestBSpec {
    pub per_class: usize,
    pub f0_range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_bonafide: usize,
    pub n_deepfake: usize,
    pub f0_range: (f64, f64),
    pub n_harmonics: usize,
    pub vibrato: Vibrato,
    pub breath_noise_band: (f64, f64),
    /// Breath RMS relative to the harmonic RMS, drawn per clip, in dB.
    pub breath_level_db: (f64, f64),
    pub artifact: ArtifactSpec,
    pub duration_secs: f64,
    /// Train and valid fractions per label; the remainder goes to testA.
    pub split_fractions: (f64, f64),
    pub test_b: Option<TestBSpec>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_bonafide: 100,
            n_deepfake: 100,
            f0_range: (150.0, 600.0),
            n_harmonics: 60,
            vibrato: Vibrato {
                rate_hz: 5.5,
                depth_cents: 50.0,
            },
            breath_noise_band: (2000.0, 20000.0),
            breath_level_db: (-26.0, -16.0),
            artifact: ArtifactSpec::default(),
            duration_secs: 4.0,
            split_fractions: (0.6, 0.2),
            test_b: None,
        }
    }
}

impl SynthConfig {
    pub fn nyquist_hz(&self) -> f64 {
        NATIVE_SAMPLE_RATE as f64 / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        let nyq = self.nyquist_hz();
        let (f0_lo, f0_hi) = self.f0_range;
        if !(20.0 <= f0_lo && f0_lo <= f0_hi && f0_hi <= 20_000.0) {
            return Err(Error::Config(format!("f0 range {:?} outside the audible range", self.f0_range)));
        }
        if self.n_bonafide == 0 || self.n_deepfake == 0 {
            return Err(Error::Config("both class counts must be at least 1".into()));
        }
        if self.n_harmonics == 0 || !(self.duration_secs > 0.0) {
            return Err(Error::Config("need harmonics and a positive duration".into()));
        }
        let (b_lo, b_hi) = self.breath_noise_band;
        if !(0.0 <= b_lo && b_lo < b_hi && b_hi <= nyq) {
            return Err(Error::Config(format!("breath band {:?} invalid", self.breath_noise_band)));
        }
        let a = &self.artifact;
        if !(a.strength > 0.0 && a.strength <= 1.0) {
            return Err(Error::Config(format!("artifact strength {} outside (0, 1]", a.strength)));
        }
        if !(0.0 <= a.band.0 && a.band.0 < a.band.1 && a.band.1 <= nyq) {
            return Err(Error::Config(format!("artifact band {:?} outside [0, {nyq}]", a.band)));
        }
        let (tr, va) = self.split_fractions;
        if !(tr >= 0.0 && va >= 0.0 && tr + va <= 1.0) {
            return Err(Error::Config(format!("split fractions {:?} invalid", self.split_fractions)));
        }
        Ok(())
    }

    fn n_samples(&self) -> usize {
        (self.duration_secs * NATIVE_SAMPLE_RATE as f64).round() as usize
    }
}

fn clip_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Applies `op(freq, bin)` to every non-negative-frequency bin of a real
/// signal's spectrum and keeps the result real by conjugate mirroring.
fn spectral_edit(signal: &[f64], sr: f64, mut op: impl FnMut(f64, Complex<f64>) -> Complex<f64>) -> Vec<f64> {
    let n = signal.len();
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = signal.iter().map(|&x| Complex::new(x, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for k in 0..=n / 2 {
        let f = k as f64 * sr / n as f64;
        let mut v = op(f, buf[k]);
        if k == 0 || 2 * k == n {
            v.im = 0.0;
        } else {
            buf[n - k] = v.conj();
        }
        buf[k] = v;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

fn in_band(f: f64, band: (f64, f64)) -> bool {
    f >= band.0 && f <= band.1
}

/// Per-clip draws shared by the bonafide and deepfake renderings of an index.
struct Voice {
    f0: f64,
    vib_rate: f64,
    vib_depth: f64,
    vib_phase: f64,
    trem_rate: f64,
    trem_phase: f64,
    tilt: f64,
    breath_db: f64,
    harmonic_phases: Vec<f64>,
}

impl Voice {
    fn draw(cfg: &SynthConfig, f0_range: (f64, f64), rng: &mut ChaCha8Rng) -> Self {
        let tau = std::f64::consts::TAU;
        Self {
            f0: f0_range.0 * (f0_range.1 / f0_range.0).powf(rng.random::<f64>()),
            vib_rate: cfg.vibrato.rate_hz * rng.random_range(0.8..1.2),
            vib_depth: cfg.vibrato.depth_cents * rng.random_range(0.6..1.4),
            vib_phase: rng.random::<f64>() * tau,
            trem_rate: rng.random_range(0.3..1.2),
            trem_phase: rng.random::<f64>() * tau,
            tilt: rng.random_range(0.8..1.3),
            breath_db: rng.random_range(cfg.breath_level_db.0..=cfg.breath_level_db.1),
            harmonic_phases: (0..cfg.n_harmonics).map(|_| rng.random::<f64>() * tau).collect(),
        }
    }

    /// Fundamental phase `θ(t)` per sample.
    fn phase_track(&self, n: usize, sr: f64) -> Vec<f64> {
        let tau = std::f64::consts::TAU;
        let mut theta = Vec::with_capacity(n);
        let mut acc = 0.0;
        for i in 0..n {
            let t = i as f64 / sr;
            let cents = self.vib_depth * (tau * self.vib_rate * t + self.vib_phase).sin();
            let f = self.f0 * 2f64.powf(cents / 1200.0);
            theta.push(acc);
            acc += tau * f / sr;
        }
        theta
    }

    fn envelope(&self, t: f64) -> f64 {
        0.65 + 0.35 * (std::f64::consts::TAU * self.trem_rate * t + self.trem_phase).sin()
    }

    /// Sum of harmonics, each weighted by `weight(inst_freq)` and `k^-tilt`.
    fn harmonics(&self, theta: &[f64], sr: f64, weight: impl Fn(f64) -> f64) -> Vec<f64> {
        let nyq = sr / 2.0;
        let tau = std::f64::consts::TAU;
        let mut out = vec![0.0; theta.len()];
        for (i, &th) in theta.iter().enumerate() {
            let inst_f = if i + 1 < theta.len() { (theta[i + 1] - th) * sr / tau } else { self.f0 };
            let mut acc = 0.0;
            for (k0, &phi) in self.harmonic_phases.iter().enumerate() {
                let k = k0 + 1;
                let fk = k as f64 * inst_f;
                if fk >= nyq {
                    break;
                }
                let w = weight(fk);
                if w != 0.0 {
                    acc += w * (k as f64).powf(-self.tilt) * (k as f64 * th + phi).sin();
                }
            }
            out[i] = acc * self.envelope(i as f64 / sr);
        }
        out
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// Unnormalized bonafide signal plus the voice parameters it was drawn from.
fn render_bonafide(cfg: &SynthConfig, index: u64, f0_range: (f64, f64)) -> (Vec<f64>, Voice, Vec<f64>) {
    let sr = NATIVE_SAMPLE_RATE as f64;
    let n = cfg.n_samples();
    let mut rng = clip_rng(cfg.seed, index);
    let voice = Voice::draw(cfg, f0_range, &mut rng);
    let theta = voice.phase_track(n, sr);
    let tonal = voice.harmonics(&theta, sr, |_| 1.0);
    let white: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let breath = spectral_edit(&white, sr, |f, c| if in_band(f, cfg.breath_noise_band) { c } else { Complex::new(0.0, 0.0) });
    let scale = rms(&tonal) * 10f64.powf(voice.breath_db / 20.0) / rms(&breath).max(1e-12);
    let signal = tonal
        .iter()
        .zip(&breath)
        .enumerate()
        .map(|(i, (t, b))| t + scale * b * (0.5 + 0.5 * voice.envelope(i as f64 / sr)))
        .collect();
    (signal, voice, theta)
}

fn gain_for(signal: &[f64]) -> f64 {
    let peak = signal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        PEAK / peak
    } else {
        1.0
    }
}

fn to_clip(signal: &[f64], gain: f64) -> AudioClip {
    let samples = signal.iter().map(|v| (v * gain).clamp(-1.0, 1.0)).collect();
    AudioClip::new(samples, NATIVE_SAMPLE_RATE).expect("synthesized audio is finite and non-empty")
}

fn apply_artifact(cfg: &SynthConfig, index: u64, signal: &[f64], voice: &Voice, theta: &[f64]) -> Vec<f64> {
    let sr = NATIVE_SAMPLE_RATE as f64;
    let a = cfg.artifact;
    match a.kind {
        ArtifactKind::BandNotch => {
            spectral_edit(signal, sr, |f, c| if in_band(f, a.band) { c * (1.0 - a.strength) } else { c })
        }
        ArtifactKind::MirroredTones => {
            let (lo, hi) = a.band;
            let width = hi - lo;
            // Reflect partials below the band about f_lo; a band starting at 0
            // instead reflects partials above it about f_hi.
            let pivot = if lo > 0.0 { lo } else { hi };
            let tau = std::f64::consts::TAU;
            let source = voice.harmonics(theta, sr, |fk| {
                let near = if lo > 0.0 { fk < lo && fk >= lo - width } else { fk > hi && fk <= hi + width };
                if near {
                    1.0
                } else {
                    0.0
                }
            });
            // Mixing with 2·pivot puts an image at 2·pivot - f; only the in-band image is kept.
            let mirrored: Vec<f64> = source
                .iter()
                .enumerate()
                .map(|(i, v)| 2.0 * v * (tau * 2.0 * pivot * i as f64 / sr).cos())
                .collect();
            let image = spectral_edit(&mirrored, sr, |f, c| if in_band(f, a.band) { c } else { Complex::new(0.0, 0.0) });
            let level = a.strength * 0.05 * rms(signal) / rms(&image).max(1e-12);
            signal.iter().zip(&image).map(|(s, m)| s + level * m).collect()
        }
        ArtifactKind::BandlimitedResynthesis => {
            let mut rng = clip_rng(cfg.seed ^ 0x5EED_A27F, index);
            let step = 1.0;
            spectral_edit(signal, sr, |f, c| {
                let phase: f64 = rng.random::<f64>() * std::f64::consts::TAU;
                if !in_band(f, a.band) {
                    return c;
                }
                let mag = c.norm();
                let q = if mag > 0.0 { ((mag.ln() / step).round() * step).exp() } else { 0.0 };
                c * (1.0 - a.strength) + Complex::from_polar(q, phase) * a.strength
            })
        }
    }
}

/// Bonafide clip for `index`, peak-normalized to 0.5.
pub fn synth_bonafide(cfg: &SynthConfig, index: u64) -> Result<AudioClip> {
    cfg.validate()?;
    let (signal, _, _) = render_bonafide(cfg, index, cfg.f0_range);
    Ok(to_clip(&signal, gain_for(&signal)))
}

/// Bonafide clip for `index` with the configured artifact, using the bonafide gain.
pub fn synth_deepfake(cfg: &SynthConfig, index: u64) -> Result<AudioClip> {
    cfg.validate()?;
    Ok(render_pair(cfg, index, cfg.f0_range).1)
}

fn render_pair(cfg: &SynthConfig, index: u64, f0_range: (f64, f64)) -> (AudioClip, AudioClip) {
    let (signal, voice, theta) = render_bonafide(cfg, index, f0_range);
    let gain = gain_for(&signal);
    let fake = apply_artifact(cfg, index, &signal, &voice, &theta);
    (to_clip(&signal, gain), to_clip(&fake, gain))
}

struct Planned {
    id: String,
    index: u64,
    label: Label,
    split: Split,
    f0_range: (f64, f64),
}

fn stratified_splits(cfg: &SynthConfig, n: usize, label: Label) -> Vec<Split> {
    let n_train = (n as f64 * cfg.split_fractions.0).round() as usize;
    let n_valid = ((n as f64 * cfg.split_fractions.1).round() as usize).min(n - n_train.min(n));
    let mut splits: Vec<Split> = (0..n)
        .map(|i| {
            if i < n_train {
                Split::Train
            } else if i < n_train + n_valid {
                Split::Valid
            } else {
                Split::TestA
            }
        })
        .collect();
    let salt = match label {
        Label::Bonafide => 0xB0,
        Label::Deepfake => 0xDF,
    };
    use rand::seq::SliceRandom;
    splits.shuffle(&mut clip_rng(cfg.seed, u64::MAX - salt));
    splits
}

/// Writes `audio/<id>.wav` for every clip plus `manifest.tsv` into `out_dir`.
///
/// Deepfake `i` uses source index `n_bonafide + i`, so no deepfake shares a
/// voice with a bonafide clip.
pub fn build_corpus(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    let audio = out_dir.join("audio");
    fs::create_dir_all(&audio).map_err(|e| Error::file(&audio, e))?;

    let mut plan = Vec::new();
    let bona_splits = stratified_splits(cfg, cfg.n_bonafide, Label::Bonafide);
    for (i, split) in bona_splits.into_iter().enumerate() {
        plan.push(Planned { id: format!("bona_{i:04}"), index: i as u64, label: Label::Bonafide, split, f0_range: cfg.f0_range });
    }
    let fake_splits = stratified_splits(cfg, cfg.n_deepfake, Label::Deepfake);
    for (i, split) in fake_splits.into_iter().enumerate() {
        plan.push(Planned {
            id: format!("fake_{i:04}"),
            index: (cfg.n_bonafide + i) as u64,
            label: Label::Deepfake,
            split,
            f0_range: cfg.f0_range,
        });
    }
    if let Some(tb) = cfg.test_b {
        let base = (cfg.n_bonafide + cfg.n_deepfake) as u64;
        for i in 0..tb.per_class {
            for (label, prefix, offset) in [(Label::Bonafide, "bona_b", 0), (Label::Deepfake, "fake_b", tb.per_class)] {
                plan.push(Planned {
                    id: format!("{prefix}_{i:04}"),
                    index: base + (offset + i) as u64,
                    label,
                    split: Split::TestB,
                    f0_range: tb.f0_range,
                });
            }
        }
    }

    let rows: Vec<Result<ManifestRow>> = plan
        .par_iter()
        .map(|p| {
            let (bona, fake) = if p.label == Label::Bonafide {
                let (signal, _, _) = render_bonafide(cfg, p.index, p.f0_range);
                (Some(to_clip(&signal, gain_for(&signal))), None)
            } else {
                (None, Some(render_pair(cfg, p.index, p.f0_range).1))
            };
            let clip = bona.or(fake).expect("one clip rendered");
            let rel = Path::new("audio").join(format!("{}.wav", p.id));
            write_wav_pcm16(out_dir.join(&rel), &clip)?;
            Ok(ManifestRow {
                id: p.id.clone(),
                path: rel,
                label: p.label,
                split: p.split,
                singer: format!("voice{:02}", p.index % 16),
            })
        })
        .collect();
    let manifest = DatasetManifest::new(rows.into_iter().collect::<Result<Vec<_>>>()?).with_base_dir(out_dir);
    manifest.write(out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{power_spectrogram, StftConfig};

    fn short_cfg() -> SynthConfig {
        SynthConfig {
            duration_secs: 0.5,
            n_bonafide: 6,
            n_deepfake: 6,
            ..SynthConfig::default()
        }
    }

    /// Mean power per frame in `[f_lo, f_hi)` Hz.
    fn band_power(clip: &AudioClip, band: (f64, f64)) -> f64 {
        let cfg = StftConfig::new(512, 256).unwrap();
        let p = power_spectrogram(clip, &cfg).unwrap();
        let bin_hz = 44100.0 / 512.0;
        let mut total = 0.0;
        for k in 0..p.freq_bins {
            let f = k as f64 * bin_hz;
            if f >= band.0 && f < band.1 {
                total += p.power[k * p.frames..(k + 1) * p.frames].iter().sum::<f64>();
            }
        }
        total / p.frames as f64
    }

    #[test]
    fn bonafide_is_deterministic_and_normalized() {
        let cfg = short_cfg();
        let a = synth_bonafide(&cfg, 3).unwrap();
        assert_eq!(a, synth_bonafide(&cfg, 3).unwrap());
        assert_ne!(a, synth_bonafide(&cfg, 4).unwrap());
        let peak = a.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak <= 1.0 && (peak - PEAK).abs() < 1e-12);
        assert_eq!(a.len(), 22050);
        assert!(band_power(&a, (11025.0, 22050.0)) > 1e-6);
    }

    #[test]
    fn notch_empties_the_band() {
        let cfg = short_cfg();
        let fake = synth_deepfake(&cfg, 1).unwrap();
        let bona = synth_bonafide(&cfg, 1).unwrap();
        // Whole-clip DFT: the edit is exact on this grid, so no window leakage.
        let band_energy = |clip: &AudioClip| {
            let n = clip.len();
            let mut buf: Vec<Complex<f64>> = clip.samples().iter().map(|&x| Complex::new(x, 0.0)).collect();
            FftPlanner::<f64>::new().plan_fft_forward(n).process(&mut buf);
            (0..=n / 2)
                .filter(|&k| in_band(k as f64 * 44100.0 / n as f64, (11025.0, 16537.5)))
                .map(|k| buf[k].norm_sqr())
                .sum::<f64>()
        };
        let ratio = band_energy(&fake) / band_energy(&bona);
        assert!(ratio < 1e-20, "{ratio}");
    }

    #[test]
    fn strength_zero_rejected() {
        let mut cfg = short_cfg();
        cfg.artifact.strength = 0.0;
        assert!(matches!(synth_deepfake(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn every_artifact_stays_in_band() {
        for kind in [ArtifactKind::BandNotch, ArtifactKind::MirroredTones, ArtifactKind::BandlimitedResynthesis] {
            let mut cfg = short_cfg();
            cfg.artifact.kind = kind;
            let bona = synth_bonafide(&cfg, 2).unwrap();
            let fake = synth_deepfake(&cfg, 2).unwrap();
            let inside = (band_power(&fake, cfg.artifact.band) - band_power(&bona, cfg.artifact.band)).abs();
            let below = (band_power(&fake, (0.0, 10_000.0)) - band_power(&bona, (0.0, 10_000.0))).abs();
            assert!(inside > 0.0, "{kind:?}");
            assert!(below < 1e-3 * inside, "{kind:?}: {below} vs {inside}");
        }
    }

    #[test]
    fn corpus_bookkeeping() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig {
            duration_secs: 0.1,
            n_bonafide: 10,
            n_deepfake: 10,
            test_b: Some(TestBSpec { per_class: 2, f0_range: (700.0, 1000.0) }),
            ..SynthConfig::default()
        };
        let m = build_corpus(&cfg, dir.path()).unwrap();
        assert_eq!(m.len(), 24);
        for split in [Split::Train, Split::Valid, Split::TestA, Split::TestB] {
            assert!(m.split(split).has_both_labels(), "{split}");
        }
        assert_eq!(m.split(Split::Train).count(Label::Bonafide), 6);
        let again = build_corpus(&cfg, dir.path()).unwrap();
        assert_eq!(again.hash().unwrap(), m.hash().unwrap());
    }
}
