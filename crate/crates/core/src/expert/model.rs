use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::score::FrontEnd;
use crate::dsp::{Spectrogram, NATIVE_SAMPLE_RATE};
use crate::engine::{
    encode_checkpoint, global_avg_pool, global_avg_pool_backward, read_checkpoint, relu, relu_backward,
    write_checkpoint, Conv2d, Conv2dCache, Gradients, LayerNorm, LayerNormCache, Linear, ParamStore, Tensor,
};
use crate::error::{Error, Result};

/// Default embedding width.
pub const EMBED_DIM: usize = 32;
const KERNEL: usize = 3;

/// One conv -> norm -> ReLU stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    pub channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub stages: Vec<StageSpec>,
}

impl BackboneSpec {
    /// Four stride-2 stages with 16/32/64/64 channels.
    pub fn reference() -> Self {
        Self::stride2(&[16, 32, 64, 64])
    }

    /// Stride-2 stages with the given channel counts.
    pub fn stride2(channels: &[usize]) -> Self {
        Self {
            stages: channels.iter().map(|&channels| StageSpec { channels, stride: 2 }).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.stages.iter().enumerate() {
            if s.channels == 0 || s.stride == 0 {
                return Err(Error::Config(format!("stage {i} needs positive channels and stride, got {s:?}")));
            }
        }
        Ok(())
    }

    /// Channels entering the pooling layer.
    pub fn out_channels(&self) -> usize {
        self.stages.last().map_or(1, |s| s.channels)
    }

    /// Number of scalar parameters for a given embedding width.
    pub fn param_count(&self, embed_dim: usize) -> usize {
        let mut c_in = 1;
        let mut total = 0;
        for s in &self.stages {
            total += s.channels * c_in * KERNEL * KERNEL + s.channels + 2 * s.channels;
            c_in = s.channels;
        }
        total + embed_dim * c_in + embed_dim + embed_dim + 1
    }
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self::reference()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpertRole {
    Fullband,
    Subband,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertConfig {
    /// Frequency band `(f_lo, f_hi)` in Hz.
    pub band: (f64, f64),
    pub nyquist_hz: f64,
    pub backbone: BackboneSpec,
    pub embed_dim: usize,
    pub seed: u64,
}

impl ExpertConfig {
    pub fn fullband(seed: u64) -> Self {
        let nyq = NATIVE_SAMPLE_RATE as f64 / 2.0;
        Self::for_band(0.0, nyq, seed)
    }

    pub fn for_band(f_lo: f64, f_hi: f64, seed: u64) -> Self {
        Self {
            band: (f_lo, f_hi),
            nyquist_hz: NATIVE_SAMPLE_RATE as f64 / 2.0,
            backbone: BackboneSpec::reference(),
            embed_dim: EMBED_DIM,
            seed,
        }
    }

    pub fn with_backbone(mut self, backbone: BackboneSpec) -> Self {
        self.backbone = backbone;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.band;
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be at least 1".into()));
        }
        if !(self.nyquist_hz > 0.0) || !(lo >= 0.0 && lo < hi && hi <= self.nyquist_hz) {
            return Err(Error::Config(format!(
                "band [{lo}, {hi}] Hz must lie within [0, {}]",
                self.nyquist_hz
            )));
        }
        self.backbone.validate()
    }

    pub fn role(&self) -> ExpertRole {
        if self.band == (0.0, self.nyquist_hz) {
            ExpertRole::Fullband
        } else {
            ExpertRole::Subband
        }
    }
}

/// Affine standardization applied to every input value before the first stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: f64,
    pub std: f64,
}

impl InputNorm {
    pub const IDENTITY: Self = Self { mean: 0.0, std: 1.0 };

    /// Mean and standard deviation over every value of every slice.
    pub fn fit<'a>(slices: impl IntoIterator<Item = &'a Spectrogram>) -> Result<Self> {
        let (mut n, mut sum, mut sq) = (0usize, 0.0f64, 0.0f64);
        for s in slices {
            for &v in s.values() {
                let v = v as f64;
                n += 1;
                sum += v;
                sq += v * v;
            }
        }
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        Ok(Self {
            mean,
            std: if var > 1e-12 { var.sqrt() } else { 1.0 },
        })
    }
}

/// Embedding `h` and detection logit `z` (larger means more likely deepfake).
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertOutput {
    pub h: Vec<f64>,
    pub z: f64,
}

struct StageTrace {
    conv: Conv2dCache,
    norm: LayerNormCache,
    pre_act: Tensor,
}

/// Saved activations of one forward pass, consumed by [`ExpertModel::backward`].
pub struct ForwardTrace {
    stages: Vec<StageTrace>,
    /// Output of the last stage (the Grad-CAM target layer).
    features: Tensor,
    pooled: Tensor,
    pub output: ExpertOutput,
}

impl ForwardTrace {
    pub fn features(&self) -> &Tensor {
        &self.features
    }
}

/// Gradients of one backward pass.
pub struct Backward {
    pub params: Gradients,
    /// Gradient with respect to the last stage output.
    pub features: Tensor,
}

/// Conv backbone, projection to `h`, and a scalar logit head.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertModel {
    config: ExpertConfig,
    params: ParamStore,
    input_norm: Option<InputNorm>,
    frontend: FrontEnd,
}

#[derive(Serialize, Deserialize)]
struct ModelCard {
    role: ExpertRole,
    param_sha256: String,
    config: ExpertConfig,
    frontend: FrontEnd,
    input_norm: Option<InputNorm>,
}

fn stage_name(i: usize, part: &str) -> String {
    format!("stage{}.{part}", i + 1)
}

/// Sidecar path holding the model card for a checkpoint.
pub fn model_card_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".toml");
    PathBuf::from(s)
}

impl ExpertModel {
    /// Seeded initialization: He-normal convolutions, LeCun-normal linear layers,
    /// zero biases and unit norm gains.
    pub fn build(config: ExpertConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut normal = |n: usize, std: f64| -> Vec<f64> {
            (0..n)
                .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect()
        };
        let mut params = ParamStore::new();
        let mut c_in = 1;
        for (i, s) in config.backbone.stages.iter().enumerate() {
            let fan_in = c_in * KERNEL * KERNEL;
            let w = normal(s.channels * fan_in, (2.0 / fan_in as f64).sqrt());
            params.insert(stage_name(i, "conv.weight"), Tensor::new(vec![s.channels, c_in, KERNEL, KERNEL], w)?)?;
            params.insert(stage_name(i, "conv.bias"), Tensor::zeros(&[s.channels]))?;
            params.insert(stage_name(i, "norm.gamma"), Tensor::new(vec![s.channels], vec![1.0; s.channels])?)?;
            params.insert(stage_name(i, "norm.beta"), Tensor::zeros(&[s.channels]))?;
            c_in = s.channels;
        }
        let e = config.embed_dim;
        let w = normal(e * c_in, (1.0 / c_in as f64).sqrt());
        params.insert("proj.weight", Tensor::new(vec![e, c_in], w)?)?;
        params.insert("proj.bias", Tensor::zeros(&[e]))?;
        let w = normal(e, (1.0 / e as f64).sqrt());
        params.insert("head.weight", Tensor::new(vec![1, e], w)?)?;
        params.insert("head.bias", Tensor::zeros(&[1]))?;
        params.round_to_f32();
        Ok(Self {
            config,
            params,
            input_norm: None,
            frontend: FrontEnd::default(),
        })
    }

    /// Reassembles a model from parameters, checking every expected name and shape.
    pub fn from_parts(config: ExpertConfig, params: ParamStore) -> Result<Self> {
        let template = Self::build(ExpertConfig { seed: 0, ..config.clone() })?;
        if template.params.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                template.params.len(),
                params.len()
            )));
        }
        for (name, t) in template.params.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::ShapeMismatch(format!("{name}: {:?} vs {:?}", got.shape(), t.shape())));
            }
        }
        Ok(Self {
            config,
            params,
            input_norm: None,
            frontend: FrontEnd::default(),
        })
    }

    pub fn config(&self) -> &ExpertConfig {
        &self.config
    }

    pub fn role(&self) -> ExpertRole {
        self.config.role()
    }

    pub fn band(&self) -> (f64, f64) {
        self.config.band
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn input_norm(&self) -> Option<InputNorm> {
        self.input_norm
    }

    pub fn set_input_norm(&mut self, norm: Option<InputNorm>) {
        self.input_norm = norm;
    }

    pub fn frontend(&self) -> &FrontEnd {
        &self.frontend
    }

    pub fn set_frontend(&mut self, frontend: FrontEnd) {
        self.frontend = frontend;
    }

    pub fn has_conv_stage(&self) -> bool {
        !self.config.backbone.stages.is_empty()
    }

    /// SHA-256 of the encoded checkpoint bytes.
    pub fn param_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(encode_checkpoint(&self.params)?)))
    }

    pub fn check_band(&self, slice: &Spectrogram) -> Result<()> {
        let (lo, hi) = self.config.band;
        if slice.f_lo() != lo || slice.f_hi() != hi {
            return Err(Error::BandMismatch {
                expected_lo: lo,
                expected_hi: hi,
                got_lo: slice.f_lo(),
                got_hi: slice.f_hi(),
            });
        }
        Ok(())
    }

    fn input_tensor(&self, slice: &Spectrogram) -> Result<Tensor> {
        self.check_band(slice)?;
        let norm = self.input_norm.unwrap_or(InputNorm::IDENTITY);
        let data = slice.values().iter().map(|&v| (v as f64 - norm.mean) / norm.std).collect();
        Tensor::new(vec![1, slice.freq_bins(), slice.frames()], data)
    }

    pub fn forward(&self, slice: &Spectrogram) -> Result<ExpertOutput> {
        Ok(self.forward_trace(slice)?.output)
    }

    pub fn forward_trace(&self, slice: &Spectrogram) -> Result<ForwardTrace> {
        let x = self.input_tensor(slice)?;
        self.forward_tensor(x)
    }

    /// Forward pass from an already normalized `[1, H, W]` input.
    pub fn forward_tensor(&self, mut x: Tensor) -> Result<ForwardTrace> {
        let ln = LayerNorm::default();
        let mut stages = Vec::with_capacity(self.config.backbone.stages.len());
        for (i, s) in self.config.backbone.stages.iter().enumerate() {
            let conv = Conv2d::new(s.stride, KERNEL / 2)?;
            let (y, conv_cache) = conv.forward(
                &x,
                self.params.get(&stage_name(i, "conv.weight"))?,
                self.params.get(&stage_name(i, "conv.bias"))?,
            )?;
            let (y, norm_cache) = ln.forward(
                &y,
                self.params.get(&stage_name(i, "norm.gamma"))?,
                self.params.get(&stage_name(i, "norm.beta"))?,
            )?;
            x = relu(&y);
            stages.push(StageTrace {
                conv: conv_cache,
                norm: norm_cache,
                pre_act: y,
            });
        }
        let pooled = global_avg_pool(&x)?;
        let h = Linear::forward(&pooled, self.params.get("proj.weight")?, self.params.get("proj.bias")?)?;
        let z = Linear::forward(&h, self.params.get("head.weight")?, self.params.get("head.bias")?)?;
        let output = ExpertOutput {
            h: h.into_data(),
            z: z.data()[0],
        };
        Ok(ForwardTrace {
            stages,
            features: x,
            pooled,
            output,
        })
    }

    /// Backpropagates `dz` on the logit plus an optional gradient on `h`.
    pub fn backward(&self, trace: &ForwardTrace, dz: f64, dh: Option<&[f64]>) -> Result<Backward> {
        let mut grads = Gradients::new();
        let e = self.config.embed_dim;
        let h = Tensor::new(vec![e], trace.output.h.clone())?;
        let head = Linear::backward(&h, self.params.get("head.weight")?, &Tensor::new(vec![1], vec![dz])?)?;
        grads.insert("head.weight", head.weight);
        grads.insert("head.bias", head.bias);
        let mut gh = head.input;
        if let Some(dh) = dh {
            if dh.len() != e {
                return Err(Error::ShapeMismatch(format!("embedding gradient has {} entries, expected {e}", dh.len())));
            }
            for (g, d) in gh.data_mut().iter_mut().zip(dh) {
                *g += d;
            }
        }
        let proj = Linear::backward(&trace.pooled, self.params.get("proj.weight")?, &gh)?;
        grads.insert("proj.weight", proj.weight);
        grads.insert("proj.bias", proj.bias);
        let features = global_avg_pool_backward(trace.features.shape(), &proj.input)?;

        let ln = LayerNorm::default();
        let mut g = features.clone();
        for (i, s) in self.config.backbone.stages.iter().enumerate().rev() {
            let st = &trace.stages[i];
            let g_pre = relu_backward(&st.pre_act, &g)?;
            let norm = ln.backward(&st.norm, self.params.get(&stage_name(i, "norm.gamma"))?, &g_pre)?;
            grads.insert(stage_name(i, "norm.gamma"), norm.gamma);
            grads.insert(stage_name(i, "norm.beta"), norm.beta);
            let conv = Conv2d::new(s.stride, KERNEL / 2)?;
            let cg = conv.backward(&st.conv, self.params.get(&stage_name(i, "conv.weight"))?, &norm.input)?;
            grads.insert(stage_name(i, "conv.weight"), cg.weight);
            grads.insert(stage_name(i, "conv.bias"), cg.bias);
            g = cg.input;
        }
        grads.ensure_finite()?;
        Ok(Backward { params: grads, features })
    }

    /// Writes the checkpoint and its `<checkpoint>.toml` model card.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_checkpoint(path, &self.params)?;
        let card = ModelCard {
            role: self.role(),
            param_sha256: self.param_hash()?,
            config: self.config.clone(),
            frontend: self.frontend,
            input_norm: self.input_norm,
        };
        let text = toml::to_string(&card).map_err(|e| Error::Parse(e.to_string()))?;
        let card_path = model_card_path(path);
        fs::write(&card_path, text).map_err(|e| Error::file(&card_path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let card_path = model_card_path(path);
        let text = fs::read_to_string(&card_path).map_err(|e| Error::file(&card_path, e))?;
        let card: ModelCard = toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", card_path.display())))?;
        let mut model = Self::from_parts(card.config, read_checkpoint(path)?)?;
        if model.param_hash()? != card.param_sha256 {
            return Err(Error::ContractViolation(format!(
                "{} does not match the hash recorded in its model card",
                path.display()
            )));
        }
        model.input_norm = card.input_norm;
        model.frontend = card.frontend;
        Ok(model)
    }
}
