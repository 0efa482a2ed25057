//! Uniform, non-overlapping subband partitioning of the `[0, Nyquist]` axis.

use super::Spectrogram;
use crate::error::{Error, Result};

/// Band `m` of `n_bands` is `[m * nyquist / n, (m + 1) * nyquist / n)`.
pub fn band_boundaries(n_bands: usize, nyquist_hz: f64) -> Result<Vec<(f64, f64)>> {
    if n_bands == 0 {
        return Err(Error::InvalidPartition("number of bands must be at least 1".into()));
    }
    if !(nyquist_hz > 0.0) {
        return Err(Error::InvalidPartition(format!("nyquist {nyquist_hz} Hz")));
    }
    let n = n_bands as f64;
    Ok((0..n_bands)
        .map(|m| {
            let lo = m as f64 * nyquist_hz / n;
            let hi = if m + 1 == n_bands {
                nyquist_hz
            } else {
                (m + 1) as f64 * nyquist_hz / n
            };
            (lo, hi)
        })
        .collect())
}

fn edge_bin(f: f64, nyquist_hz: f64, freq_bins: usize) -> usize {
    if f >= nyquist_hz {
        return freq_bins;
    }
    // Band edges are m/N fractions of Nyquist; the nudge keeps floor() from
    // landing one bin low when the quotient rounds just under an integer.
    ((f / nyquist_hz) * freq_bins as f64 + 1e-9).floor() as usize
}

/// Half-open bin range covering `[f_lo, f_hi]` on a `freq_bins`-bin fullband axis.
///
/// Uses the same floor rule as [`SubbandPartition`], so the top band absorbs
/// the remainder (including the Nyquist bin).
pub fn bin_range_for_band(
    f_lo: f64,
    f_hi: f64,
    nyquist_hz: f64,
    freq_bins: usize,
) -> Result<(usize, usize)> {
    if !(0.0 <= f_lo && f_lo < f_hi && f_hi <= nyquist_hz) {
        return Err(Error::InvalidPartition(format!(
            "band [{f_lo}, {f_hi}] outside [0, {nyquist_hz}]"
        )));
    }
    let start = edge_bin(f_lo, nyquist_hz, freq_bins);
    let end = edge_bin(f_hi, nyquist_hz, freq_bins);
    if start >= end {
        return Err(Error::InvalidPartition(format!(
            "band [{f_lo}, {f_hi}] covers no bins of a {freq_bins}-bin axis"
        )));
    }
    Ok((start, end))
}

/// `N` uniform bands with their frequency edges and bin ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandPartition {
    n_bands: usize,
    boundaries: Vec<(f64, f64)>,
    bin_ranges: Vec<(usize, usize)>,
    freq_bins: usize,
}

impl SubbandPartition {
    pub const ALLOWED: [usize; 4] = [1, 2, 4, 8];

    /// Builds the partition for a fullband axis of `freq_bins` bins.
    ///
    /// Bin edges are `floor(m * freq_bins / N)`; leftover bins go to the top band.
    pub fn new(n_bands: usize, freq_bins: usize, nyquist_hz: f64) -> Result<Self> {
        if !Self::ALLOWED.contains(&n_bands) {
            return Err(Error::InvalidPartition(format!(
                "number of bands must be one of 1, 2, 4, 8; got {n_bands}"
            )));
        }
        if freq_bins < n_bands {
            return Err(Error::InvalidPartition(format!(
                "{freq_bins} bins cannot be split into {n_bands} bands"
            )));
        }
        let boundaries = band_boundaries(n_bands, nyquist_hz)?;
        let bin_ranges = (0..n_bands)
            .map(|m| (m * freq_bins / n_bands, (m + 1) * freq_bins / n_bands))
            .collect();
        Ok(Self {
            n_bands,
            boundaries,
            bin_ranges,
            freq_bins,
        })
    }

    pub fn for_spectrogram(n_bands: usize, spec: &Spectrogram) -> Result<Self> {
        Self::new(n_bands, spec.freq_bins(), spec.nyquist_hz())
    }

    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    pub fn boundaries(&self) -> &[(f64, f64)] {
        &self.boundaries
    }

    pub fn bin_ranges(&self) -> &[(usize, usize)] {
        &self.bin_ranges
    }

    pub fn freq_bins(&self) -> usize {
        self.freq_bins
    }

    pub fn band(&self, index: usize) -> Option<(f64, f64)> {
        self.boundaries.get(index).copied()
    }
}

fn copy_rows(spec: &Spectrogram, start: usize, end: usize, f_lo: f64, f_hi: f64) -> Result<Spectrogram> {
    let frames = spec.frames();
    Spectrogram::new(
        spec.values()[start * frames..end * frames].to_vec(),
        end - start,
        frames,
        f_lo,
        f_hi,
        spec.sample_rate(),
        spec.bin_hz(),
    )
}

/// Splits a fullband spectrogram into the partition's slices, lowest band first.
pub fn partition_spectrogram(spec: &Spectrogram, part: &SubbandPartition) -> Result<Vec<Spectrogram>> {
    if !spec.is_fullband() {
        return Err(Error::ShapeMismatch(format!(
            "partitioning needs a fullband spectrogram, got [{}, {}] Hz",
            spec.f_lo(),
            spec.f_hi()
        )));
    }
    if spec.freq_bins() != part.freq_bins {
        return Err(Error::ShapeMismatch(format!(
            "partition built for {} bins, spectrogram has {}",
            part.freq_bins,
            spec.freq_bins()
        )));
    }
    part.bin_ranges
        .iter()
        .zip(&part.boundaries)
        .map(|(&(s, e), &(lo, hi))| copy_rows(spec, s, e, lo, hi))
        .collect()
}

/// Cuts the rows of an arbitrary band out of a fullband spectrogram.
pub fn slice_band(spec: &Spectrogram, f_lo: f64, f_hi: f64) -> Result<Spectrogram> {
    if !spec.is_fullband() {
        if spec.f_lo() == f_lo && spec.f_hi() == f_hi {
            return Ok(spec.clone());
        }
        return Err(Error::ShapeMismatch(
            "band slicing needs a fullband spectrogram".into(),
        ));
    }
    let (s, e) = bin_range_for_band(f_lo, f_hi, spec.nyquist_hz(), spec.freq_bins())?;
    copy_rows(spec, s, e, f_lo, f_hi)
}

/// Stacks contiguous slices back into one spectrogram (inverse of partitioning).
pub fn stack_subbands(slices: &[Spectrogram]) -> Result<Spectrogram> {
    let first = slices.first().ok_or(Error::EmptyInput)?;
    let frames = first.frames();
    let mut values = Vec::new();
    let mut bins = 0;
    for (i, s) in slices.iter().enumerate() {
        if s.frames() != frames {
            return Err(Error::ShapeMismatch("slices differ in frame count".into()));
        }
        if i > 0 && s.f_lo() != slices[i - 1].f_hi() {
            return Err(Error::ShapeMismatch("slices are not contiguous".into()));
        }
        values.extend_from_slice(s.values());
        bins += s.freq_bins();
    }
    let last = slices.last().unwrap();
    Spectrogram::new(
        values,
        bins,
        frames,
        first.f_lo(),
        last.f_hi(),
        first.sample_rate(),
        first.bin_hz(),
    )
}
