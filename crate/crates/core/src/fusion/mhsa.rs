use serde::{Deserialize, Serialize};

use crate::engine::{gemm, relu, relu_backward, Gradients, Linear, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Attention geometry. `n_heads * d_k` must equal the embedding width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MhsaConfig {
    pub n_heads: usize,
    pub d_k: usize,
}

impl Default for MhsaConfig {
    fn default() -> Self {
        Self { n_heads: 4, d_k: 8 }
    }
}

impl MhsaConfig {
    pub fn validate(&self, embed_dim: usize) -> Result<()> {
        if self.n_heads == 0 || self.d_k == 0 || self.n_heads * self.d_k != embed_dim {
            return Err(Error::Config(format!(
                "{} heads of width {} do not cover embedding width {embed_dim}",
                self.n_heads, self.d_k
            )));
        }
        Ok(())
    }
}

fn matmul(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(m, k, n, a, ta, b, tb, 0.0, &mut c);
    c
}

/// Saved activations of one attention forward pass.
#[derive(Debug, Clone)]
pub struct MhsaTrace {
    len: usize,
    h: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention weights, `[n_heads][len x len]` row-major.
    pub attention: Vec<Vec<f64>>,
    o: Vec<f64>,
    /// Refined sequence after the output projection, `[len x d]`.
    pub refined: Vec<f64>,
    pooled: Tensor,
    hidden_pre: Tensor,
    hidden: Tensor,
    pub z: f64,
}

pub(crate) fn forward(params: &ParamStore, cfg: MhsaConfig, seq: &[Vec<f64>]) -> Result<MhsaTrace> {
    let d = cfg.n_heads * cfg.d_k;
    let len = seq.len();
    if len == 0 {
        return Err(Error::EmptyPool);
    }
    if seq.iter().any(|h| h.len() != d) {
        return Err(Error::PoolMismatch(format!("every embedding must have {d} entries")));
    }
    let h: Vec<f64> = seq.concat();
    let w = |n: &str| params.get(n).map(|t| t.data());
    let q = matmul(len, d, d, &h, false, w("interact.w_q")?, false);
    let k = matmul(len, d, d, &h, false, w("interact.w_k")?, false);
    let v = matmul(len, d, d, &h, false, w("interact.w_v")?, false);
    let scale = 1.0 / (cfg.d_k as f64).sqrt();
    let mut o = vec![0.0; len * d];
    let mut attention = Vec::with_capacity(cfg.n_heads);
    for hd in 0..cfg.n_heads {
        let off = hd * cfg.d_k;
        let mut a = vec![0.0; len * len];
        for i in 0..len {
            let row = &mut a[i * len..(i + 1) * len];
            for (j, s) in row.iter_mut().enumerate() {
                *s = (0..cfg.d_k).map(|c| q[i * d + off + c] * k[j * d + off + c]).sum::<f64>() * scale;
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for s in row.iter_mut() {
                *s = (*s - max).exp();
                total += *s;
            }
            row.iter_mut().for_each(|s| *s /= total);
            for c in 0..cfg.d_k {
                o[i * d + off + c] = (0..len).map(|j| row[j] * v[j * d + off + c]).sum();
            }
        }
        attention.push(a);
    }
    let refined = matmul(len, d, d, &o, false, w("interact.w_o")?, false);
    let pooled: Vec<f64> = (0..d).map(|c| (0..len).map(|i| refined[i * d + c]).sum::<f64>() / len as f64).collect();
    let pooled = Tensor::from_vec(pooled);
    let hidden_pre = Linear::forward(&pooled, params.get("interact.fc1.weight")?, params.get("interact.fc1.bias")?)?;
    let hidden = relu(&hidden_pre);
    let z = Linear::forward(&hidden, params.get("interact.out.weight")?, params.get("interact.out.bias")?)?.data()[0];
    if !z.is_finite() {
        return Err(Error::Numeric("interaction logit".into()));
    }
    Ok(MhsaTrace {
        len,
        h,
        q,
        k,
        v,
        attention,
        o,
        refined,
        pooled,
        hidden_pre,
        hidden,
        z,
    })
}

/// Parameter gradients and the gradient on each input embedding.
pub(crate) fn backward(params: &ParamStore, cfg: MhsaConfig, t: &MhsaTrace, dz: f64) -> Result<(Gradients, Vec<f64>)> {
    let d = cfg.n_heads * cfg.d_k;
    let len = t.len;
    let mut grads = Gradients::new();
    let out = Linear::backward(&t.hidden, params.get("interact.out.weight")?, &Tensor::from_vec(vec![dz]))?;
    grads.insert("interact.out.weight", out.weight);
    grads.insert("interact.out.bias", out.bias);
    let g_pre = relu_backward(&t.hidden_pre, &out.input)?;
    let fc1 = Linear::backward(&t.pooled, params.get("interact.fc1.weight")?, &g_pre)?;
    grads.insert("interact.fc1.weight", fc1.weight);
    grads.insert("interact.fc1.bias", fc1.bias);

    let mut d_refined = vec![0.0; len * d];
    for i in 0..len {
        for c in 0..d {
            d_refined[i * d + c] = fc1.input.data()[c] / len as f64;
        }
    }
    let w_o = params.get("interact.w_o")?.data();
    grads.insert("interact.w_o", Tensor::new(vec![d, d], matmul(d, len, d, &t.o, true, &d_refined, false))?);
    let d_o = matmul(len, d, d, &d_refined, false, w_o, true);

    let scale = 1.0 / (cfg.d_k as f64).sqrt();
    let mut dq = vec![0.0; len * d];
    let mut dk = vec![0.0; len * d];
    let mut dv = vec![0.0; len * d];
    for hd in 0..cfg.n_heads {
        let off = hd * cfg.d_k;
        let a = &t.attention[hd];
        for i in 0..len {
            let da: Vec<f64> = (0..len)
                .map(|j| (0..cfg.d_k).map(|c| d_o[i * d + off + c] * t.v[j * d + off + c]).sum())
                .collect();
            let dot: f64 = (0..len).map(|j| a[i * len + j] * da[j]).sum();
            for j in 0..len {
                let aij = a[i * len + j];
                let ds = aij * (da[j] - dot) * scale;
                for c in 0..cfg.d_k {
                    dv[j * d + off + c] += aij * d_o[i * d + off + c];
                    dq[i * d + off + c] += ds * t.k[j * d + off + c];
                    dk[j * d + off + c] += ds * t.q[i * d + off + c];
                }
            }
        }
    }
    let mut dh = vec![0.0; len * d];
    for (name, g) in [("interact.w_q", &dq), ("interact.w_k", &dk), ("interact.w_v", &dv)] {
        grads.insert(name, Tensor::new(vec![d, d], matmul(d, len, d, &t.h, true, g, false))?);
        gemm(len, d, d, g, false, params.get(name)?.data(), true, 1.0, &mut dh);
    }
    grads.ensure_finite()?;
    Ok((grads, dh))
}
