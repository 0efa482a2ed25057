//! Layer primitives. Feature maps are `[channels, height, width]`; vectors are 1-D.

use super::Tensor;
use crate::error::{Error, Result};

/// `c = op(a) * op(b) + beta * c` for row-major operands.
///
/// `a` is `m x k` (stored `k x m` when `trans_a`), `b` is `k x n` (stored
/// `n x k` when `trans_b`), `c` is `m x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above pin every operand to exactly the extent the
    // strides address, so all reads and writes stay in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn chw(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        &[c, h, w] => Ok((c, h, w)),
        s => Err(Error::ShapeMismatch(format!("{what}: expected [C, H, W], got {s:?}"))),
    }
}

fn finite(t: Tensor, what: &str) -> Result<Tensor> {
    t.ensure_finite(what)?;
    Ok(t)
}

/// 2-D convolution with square zero padding and a common stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct Conv2dCache {
    cols: Vec<f64>,
    input_shape: (usize, usize, usize),
    kernel: (usize, usize),
    out_hw: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct Conv2dGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv2d {
    pub fn new(stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::Config("convolution stride must be at least 1".into()));
        }
        Ok(Self { stride, padding })
    }

    pub fn output_hw(&self, h: usize, w: usize, kh: usize, kw: usize) -> Result<(usize, usize)> {
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < kh || wp < kw {
            return Err(Error::ShapeMismatch(format!(
                "kernel {kh}x{kw} larger than padded input {hp}x{wp}"
            )));
        }
        Ok(((hp - kh) / self.stride + 1, (wp - kw) / self.stride + 1))
    }

    fn im2col(&self, x: &[f64], (c, h, w): (usize, usize, usize), (kh, kw): (usize, usize), (ho, wo): (usize, usize)) -> Vec<f64> {
        let n = ho * wo;
        let mut cols = vec![0.0; c * kh * kw * n];
        let pad = self.padding as isize;
        for ci in 0..c {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (ci * kh + ki) * kw + kj;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oi in 0..ho {
                        let ii = (oi * self.stride) as isize + ki as isize - pad;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        let src = &plane[ii as usize * w..(ii as usize + 1) * w];
                        let out_row = &mut dst[oi * wo..(oi + 1) * wo];
                        for (oj, slot) in out_row.iter_mut().enumerate() {
                            let jj = (oj * self.stride) as isize + kj as isize - pad;
                            if jj >= 0 && jj < w as isize {
                                *slot = src[jj as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], (c, h, w): (usize, usize, usize), (kh, kw): (usize, usize), (ho, wo): (usize, usize)) -> Vec<f64> {
        let n = ho * wo;
        let mut x = vec![0.0; c * h * w];
        let pad = self.padding as isize;
        for ci in 0..c {
            let plane = &mut x[ci * h * w..(ci + 1) * h * w];
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (ci * kh + ki) * kw + kj;
                    let src = &cols[row * n..(row + 1) * n];
                    for oi in 0..ho {
                        let ii = (oi * self.stride) as isize + ki as isize - pad;
                        if ii < 0 || ii >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[ii as usize * w..(ii as usize + 1) * w];
                        for oj in 0..wo {
                            let jj = (oj * self.stride) as isize + kj as isize - pad;
                            if jj >= 0 && jj < w as isize {
                                dst[jj as usize] += src[oi * wo + oj];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    /// `input [C, H, W]`, `weight [O, C, kh, kw]`, `bias [O]` -> `[O, Ho, Wo]`.
    pub fn forward(&self, input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<(Tensor, Conv2dCache)> {
        let (c, h, w) = chw(input, "conv2d input")?;
        let (o, kh, kw) = match weight.shape() {
            &[o, wc, kh, kw] if wc == c => (o, kh, kw),
            s => {
                return Err(Error::ShapeMismatch(format!(
                    "conv2d weight {s:?} does not match {c} input channels"
                )))
            }
        };
        if bias.shape() != [o] {
            return Err(Error::ShapeMismatch(format!("conv2d bias {:?}, expected [{o}]", bias.shape())));
        }
        let (ho, wo) = self.output_hw(h, w, kh, kw)?;
        let cols = self.im2col(input.data(), (c, h, w), (kh, kw), (ho, wo));
        let n = ho * wo;
        let mut out = vec![0.0; o * n];
        for (oc, row) in out.chunks_exact_mut(n).enumerate() {
            row.fill(bias.data()[oc]);
        }
        gemm(o, c * kh * kw, n, weight.data(), false, &cols, false, 1.0, &mut out);
        let out = finite(Tensor::new(vec![o, ho, wo], out)?, "conv2d output")?;
        Ok((
            out,
            Conv2dCache {
                cols,
                input_shape: (c, h, w),
                kernel: (kh, kw),
                out_hw: (ho, wo),
            },
        ))
    }

    pub fn backward(&self, cache: &Conv2dCache, weight: &Tensor, grad_out: &Tensor) -> Result<Conv2dGrads> {
        let (c, h, w) = cache.input_shape;
        let (kh, kw) = cache.kernel;
        let (ho, wo) = cache.out_hw;
        let o = weight.shape()[0];
        if grad_out.shape() != [o, ho, wo] {
            return Err(Error::ShapeMismatch(format!(
                "conv2d grad {:?}, expected [{o}, {ho}, {wo}]",
                grad_out.shape()
            )));
        }
        let n = ho * wo;
        let ckk = c * kh * kw;
        let g = grad_out.data();
        let mut gw = vec![0.0; o * ckk];
        gemm(o, n, ckk, g, false, &cache.cols, true, 0.0, &mut gw);
        let gb: Vec<f64> = g.chunks_exact(n).map(|r| r.iter().sum()).collect();
        let mut gcols = vec![0.0; ckk * n];
        gemm(ckk, o, n, weight.data(), true, g, false, 0.0, &mut gcols);
        let gin = self.col2im(&gcols, (c, h, w), (kh, kw), (ho, wo));
        Ok(Conv2dGrads {
            input: Tensor::new(vec![c, h, w], gin)?,
            weight: Tensor::new(weight.shape().to_vec(), gw)?,
            bias: Tensor::new(vec![o], gb)?,
        })
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Passes gradient where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    input.same_shape(grad_out, "relu backward")?;
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(input.shape().to_vec(), data)
}

/// Non-overlapping-or-strided max pooling without padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct MaxPoolCache {
    argmax: Vec<usize>,
    input_shape: (usize, usize, usize),
}

impl MaxPool2d {
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, MaxPoolCache)> {
        let (c, h, w) = chw(x, "maxpool input")?;
        if self.kernel == 0 || self.stride == 0 || h < self.kernel || w < self.kernel {
            return Err(Error::ShapeMismatch(format!(
                "maxpool kernel {} stride {} on {h}x{w}",
                self.kernel, self.stride
            )));
        }
        let ho = (h - self.kernel) / self.stride + 1;
        let wo = (w - self.kernel) / self.stride + 1;
        let mut out = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        let d = x.data();
        for ci in 0..c {
            for oi in 0..ho {
                for oj in 0..wo {
                    let mut best = usize::MAX;
                    let mut best_v = f64::NEG_INFINITY;
                    for ki in 0..self.kernel {
                        for kj in 0..self.kernel {
                            let idx = (ci * h + oi * self.stride + ki) * w + oj * self.stride + kj;
                            if best == usize::MAX || d[idx] > best_v {
                                best = idx;
                                best_v = d[idx];
                            }
                        }
                    }
                    out.push(best_v);
                    argmax.push(best);
                }
            }
        }
        Ok((
            finite(Tensor::new(vec![c, ho, wo], out)?, "maxpool output")?,
            MaxPoolCache {
                argmax,
                input_shape: (c, h, w),
            },
        ))
    }

    pub fn backward(&self, cache: &MaxPoolCache, grad_out: &Tensor) -> Result<Tensor> {
        if grad_out.len() != cache.argmax.len() {
            return Err(Error::ShapeMismatch("maxpool grad length".into()));
        }
        let (c, h, w) = cache.input_shape;
        let mut gin = vec![0.0; c * h * w];
        for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
            gin[idx] += g;
        }
        Tensor::new(vec![c, h, w], gin)
    }
}

/// `[C, H, W] -> [C]` spatial mean.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = chw(x, "global average pool input")?;
    let inv = 1.0 / (h * w) as f64;
    let data = x
        .data()
        .chunks_exact(h * w)
        .map(|p| p.iter().sum::<f64>() * inv)
        .collect();
    Tensor::new(vec![c], data)
}

pub fn global_avg_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let (c, h, w) = match input_shape {
        &[c, h, w] => (c, h, w),
        s => return Err(Error::ShapeMismatch(format!("pool input shape {s:?}"))),
    };
    if grad_out.shape() != [c] {
        return Err(Error::ShapeMismatch(format!("pool grad {:?}, expected [{c}]", grad_out.shape())));
    }
    let inv = 1.0 / (h * w) as f64;
    let mut data = Vec::with_capacity(c * h * w);
    for &g in grad_out.data() {
        data.extend(std::iter::repeat_n(g * inv, h * w));
    }
    Tensor::new(vec![c, h, w], data)
}

/// Fully connected layer `y = W x + b` with `W [out, in]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Linear;

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (o, i) = match weight.shape() {
            &[o, i] if i == x.len() && x.ndim() == 1 => (o, i),
            s => {
                return Err(Error::ShapeMismatch(format!(
                    "linear weight {s:?} vs input {:?}",
                    x.shape()
                )))
            }
        };
        if bias.shape() != [o] {
            return Err(Error::ShapeMismatch(format!("linear bias {:?}, expected [{o}]", bias.shape())));
        }
        let mut y = bias.data().to_vec();
        gemm(o, i, 1, weight.data(), false, x.data(), false, 1.0, &mut y);
        finite(Tensor::new(vec![o], y)?, "linear output")
    }

    pub fn backward(x: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<LinearGrads> {
        let (o, i) = (weight.shape()[0], weight.shape()[1]);
        if grad_out.shape() != [o] || x.shape() != [i] {
            return Err(Error::ShapeMismatch("linear backward".into()));
        }
        let mut gw = vec![0.0; o * i];
        gemm(o, 1, i, grad_out.data(), false, x.data(), false, 0.0, &mut gw);
        let mut gx = vec![0.0; i];
        gemm(i, o, 1, weight.data(), true, grad_out.data(), false, 0.0, &mut gx);
        Ok(LinearGrads {
            input: Tensor::new(vec![i], gx)?,
            weight: Tensor::new(vec![o, i], gw)?,
            bias: grad_out.clone(),
        })
    }
}

/// Per-sample normalization over every element, with a per-channel affine.
///
/// The first axis is the channel axis; a 1-D input is `D` channels of size 1.
#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub eps: f64,
}

impl Default for LayerNorm {
    fn default() -> Self {
        Self { eps: 1e-5 }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Vec<f64>,
    inv_std: f64,
    shape: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct LayerNormGrads {
    pub input: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub fn forward(&self, x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(Tensor, LayerNormCache)> {
        let c = *x.shape().first().ok_or_else(|| Error::ShapeMismatch("layernorm on scalar".into()))?;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::ShapeMismatch(format!(
                "layernorm affine {:?}/{:?} for {c} channels",
                gamma.shape(),
                beta.shape()
            )));
        }
        let n = x.len() as f64;
        let s = x.len() / c;
        let mean = x.data().iter().sum::<f64>() / n;
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + self.eps).sqrt();
        let xhat: Vec<f64> = x.data().iter().map(|v| (v - mean) * inv_std).collect();
        let mut y = Vec::with_capacity(xhat.len());
        for (ch, chunk) in xhat.chunks_exact(s).enumerate() {
            let (g, b) = (gamma.data()[ch], beta.data()[ch]);
            y.extend(chunk.iter().map(|v| g * v + b));
        }
        let y = finite(Tensor::new(x.shape().to_vec(), y)?, "layernorm output")?;
        Ok((
            y,
            LayerNormCache {
                xhat,
                inv_std,
                shape: x.shape().to_vec(),
            },
        ))
    }

    pub fn backward(&self, cache: &LayerNormCache, gamma: &Tensor, grad_out: &Tensor) -> Result<LayerNormGrads> {
        if grad_out.shape() != cache.shape.as_slice() {
            return Err(Error::ShapeMismatch("layernorm backward".into()));
        }
        let c = cache.shape[0];
        let s = cache.xhat.len() / c;
        let n = cache.xhat.len() as f64;
        let mut ggamma = vec![0.0; c];
        let mut gbeta = vec![0.0; c];
        let mut dxhat = Vec::with_capacity(cache.xhat.len());
        for ch in 0..c {
            let g = gamma.data()[ch];
            for k in ch * s..(ch + 1) * s {
                let dy = grad_out.data()[k];
                ggamma[ch] += dy * cache.xhat[k];
                gbeta[ch] += dy;
                dxhat.push(dy * g);
            }
        }
        let sum_d: f64 = dxhat.iter().sum();
        let sum_dx: f64 = dxhat.iter().zip(&cache.xhat).map(|(d, x)| d * x).sum();
        let gin = dxhat
            .iter()
            .zip(&cache.xhat)
            .map(|(d, x)| cache.inv_std / n * (n * d - sum_d - x * sum_dx))
            .collect();
        Ok(LayerNormGrads {
            input: Tensor::new(cache.shape.clone(), gin)?,
            gamma: Tensor::new(vec![c], ggamma)?,
            beta: Tensor::new(vec![c], gbeta)?,
        })
    }
}
