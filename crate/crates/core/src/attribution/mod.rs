//! Grad-CAM importance maps on the last convolutional stage, per-band energy
//! fractions of those maps, and PNG overlays on the input spectrogram.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::dsp::{Spectrogram, SubbandPartition};
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::expert::ExpertModel;

/// Importance map on the input grid `[freq_bins x frames]`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCamMap {
    pub values: Vec<f64>,
    pub freq_bins: usize,
    pub frames: usize,
    pub source: String,
    pub target: String,
}

impl GradCamMap {
    pub fn at(&self, bin: usize, frame: usize) -> f64 {
        self.values[bin * self.frames + frame]
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// Bilinear resize of a `[h, w]` grid with half-pixel centres and edge clamping.
pub fn bilinear_resize(src: &[f64], (h, w): (usize, usize), (out_h, out_w): (usize, usize)) -> Vec<f64> {
    let coord = |o: usize, n_in: usize, n_out: usize| {
        let x = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = x.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, x - i0 as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|x| coord(x, w, out_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = coord(y, h, out_h);
        for &(x0, x1, fx) in &cols {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Per-map min-max normalization. An all-zero map stays zero; any other
/// constant map becomes all ones.
pub fn min_max_normalize(values: &mut [f64]) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        let fill = if hi == 0.0 { 0.0 } else { 1.0 };
        values.iter_mut().for_each(|v| *v = fill);
        return;
    }
    values.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
}

/// Grad-CAM from feature maps `A [C, h, w]` and their gradients: channel
/// weights are spatial means of the gradient, the weighted sum goes through a
/// ReLU, is resized to `out_hw` and min-max normalized.
pub fn gradcam_from_activations(activations: &Tensor, gradients: &Tensor, out_hw: (usize, usize)) -> Result<Vec<f64>> {
    activations.same_shape(gradients, "Grad-CAM gradients")?;
    let (c, h, w) = match activations.shape() {
        &[c, h, w] if h > 0 && w > 0 => (c, h, w),
        s => return Err(Error::ShapeMismatch(format!("Grad-CAM expects [C, h, w] features, got {s:?}"))),
    };
    let plane = h * w;
    let mut raw = vec![0.0; plane];
    for ch in 0..c {
        let a = &activations.data()[ch * plane..(ch + 1) * plane];
        let g = &gradients.data()[ch * plane..(ch + 1) * plane];
        let weight = g.iter().sum::<f64>() / plane as f64;
        for (r, v) in raw.iter_mut().zip(a) {
            *r += weight * v;
        }
    }
    raw.iter_mut().for_each(|v| *v = v.max(0.0));
    let mut out = bilinear_resize(&raw, (h, w), out_hw);
    min_max_normalize(&mut out);
    Ok(out)
}

/// Grad-CAM of the model's logit over its last conv stage, on the slice grid.
pub fn gradcam(model: &ExpertModel, slice: &Spectrogram) -> Result<GradCamMap> {
    if !model.has_conv_stage() {
        return Err(Error::UnsupportedArchitecture("Grad-CAM needs at least one conv stage".into()));
    }
    let trace = model.forward_trace(slice)?;
    let back = model.backward(&trace, 1.0, None)?;
    let values = gradcam_from_activations(trace.features(), &back.features, (slice.freq_bins(), slice.frames()))?;
    let (lo, hi) = model.band();
    Ok(GradCamMap {
        values,
        freq_bins: slice.freq_bins(),
        frames: slice.frames(),
        source: format!("expert[{lo}-{hi}Hz]"),
        target: "z".into(),
    })
}

/// Share of the map's total mass in each band of `part`; uniform for a zero map.
pub fn band_energy_fraction(map: &GradCamMap, part: &SubbandPartition) -> Result<Vec<f64>> {
    if map.freq_bins != part.freq_bins() {
        return Err(Error::ShapeMismatch(format!(
            "map has {} bins, partition {}",
            map.freq_bins,
            part.freq_bins()
        )));
    }
    let sums: Vec<f64> = part
        .bin_ranges()
        .iter()
        .map(|&(s, e)| map.values[s * map.frames..e * map.frames].iter().sum())
        .collect();
    let total: f64 = sums.iter().sum();
    if total == 0.0 {
        return Ok(vec![1.0 / part.n_bands() as f64; part.n_bands()]);
    }
    Ok(sums.into_iter().map(|s| s / total).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FractionRow {
    pub id: String,
    pub model: String,
    pub fractions: Vec<f64>,
}

/// CSV with columns `id,model,band_0..band_{N-1}`.
pub fn fractions_csv(rows: &[FractionRow]) -> Result<String> {
    let n = rows.first().map_or(0, |r| r.fractions.len());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "model".to_string()];
    header.extend((0..n).map(|i| format!("band_{i}")));
    w.write_record(&header)?;
    for r in rows {
        if r.fractions.len() != n {
            return Err(Error::ShapeMismatch("fraction rows differ in band count".into()));
        }
        let mut rec = vec![r.id.clone(), r.model.clone()];
        rec.extend(r.fractions.iter().map(|f| f.to_string()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

/// 8-bit RGB raster, row-major from the top.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().map_err(|e| Error::Parse(e.to_string()))?;
            writer.write_image_data(&self.pixels).map_err(|e| Error::Parse(e.to_string()))?;
        }
        Ok(out)
    }
}

const HEAT_ALPHA: f64 = 0.6;
const DASH: usize = 4;

fn heat(m: f64) -> [f64; 3] {
    [(3.0 * m).min(1.0), (3.0 * m - 1.0).clamp(0.0, 1.0), (3.0 * m - 2.0).clamp(0.0, 1.0)]
}

/// Grayscale spectrogram (low frequencies at the bottom) with the map
/// alpha-blended as a heat colour and dashed white lines at band edges.
pub fn render_overlay(map: &GradCamMap, spec: &Spectrogram, part: Option<&SubbandPartition>) -> Result<RgbImage> {
    if map.freq_bins != spec.freq_bins() || map.frames != spec.frames() {
        return Err(Error::ShapeMismatch(format!(
            "map {}x{} vs spectrogram {}x{}",
            map.freq_bins,
            map.frames,
            spec.freq_bins(),
            spec.frames()
        )));
    }
    let (h, w) = (spec.freq_bins(), spec.frames());
    let mut gray: Vec<f64> = spec.values().iter().map(|&v| v as f64).collect();
    min_max_normalize(&mut gray);
    let mut pixels = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        let bin = h - 1 - y;
        for x in 0..w {
            let g = gray[bin * w + x];
            let m = map.at(bin, x);
            let a = HEAT_ALPHA * m;
            for c in heat(m) {
                pixels.push(((1.0 - a) * g + a * c).mul_add(255.0, 0.5).floor() as u8);
            }
        }
    }
    if let Some(part) = part {
        if part.freq_bins() != h {
            return Err(Error::ShapeMismatch("partition does not match the spectrogram".into()));
        }
        for &(start, _) in &part.bin_ranges()[1..] {
            let y = h - 1 - start;
            for x in (0..w).filter(|x| (x / DASH) % 2 == 0) {
                let i = 3 * (y * w + x);
                pixels[i..i + 3].fill(255);
            }
        }
    }
    Ok(RgbImage { width: w, height: h, pixels })
}

pub fn export_overlay(
    map: &GradCamMap,
    spec: &Spectrogram,
    part: Option<&SubbandPartition>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let png = render_overlay(map, spec, part)?.to_png()?;
    fs::write(path, png).map_err(|e| Error::file(path, e))
}
