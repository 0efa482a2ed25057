//! Joint fullband-subband modeling for high-resolution (44.1 kHz) singing-voice
//! deepfake detection.
//!
//! The crate is organised the way the pipeline runs:
//!
//! * [`dsp`] reads WAV audio, standardizes clip duration, computes log-power
//!   spectrograms and slices them into uniform subbands.
//! * [`engine`] is a small differentiable engine (conv, norm, linear, focal
//!   loss, AdamW, cosine schedule) with a finite-difference checker.
//! * [`expert`] builds and trains fullband/subband expert models that emit a
//!   32-dimensional embedding and a detection logit.
//! * [`fusion`] combines a selected pool of experts by logit averaging,
//!   embedding concatenation or multi-head self-attention.
//! * [`distill`] transfers subband-teacher knowledge into a fullband student.
//! * [`eval`] computes pooled EER with percentile-bootstrap intervals.
//! * [`attribution`] produces Grad-CAM maps and per-band energy fractions.
//! * [`synth`] generates a deterministic corpus with band-planted artifacts.
//! * [`cli`] holds the command implementations behind the `subband` binary.
//!
//! Runnable walkthroughs live in `examples/`; `cargo run --example` lists them.

pub mod attribution;
pub mod cli;
pub mod distill;
pub mod dsp;
pub mod engine;
pub mod error;
pub mod eval;
pub mod expert;
pub mod fusion;
pub mod synth;

pub use error::{Error, Result};
