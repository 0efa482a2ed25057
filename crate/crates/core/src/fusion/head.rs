use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mhsa::{self, MhsaConfig, MhsaTrace};
use super::{aggregate_logits, SelectedPool};
use crate::engine::{
    adamw_step, cosine_lr, read_checkpoint, relu, relu_backward, write_checkpoint, Gradients, Linear, ParamStore,
    Precision, Tensor,
};
use crate::error::{Error, Result};
use crate::eval::{Label, ScoreEntry, ScoreSet};
use crate::expert::{model_card_path, ExpertOutput, TrainOptions, Utterance};

/// Hidden widths of the concatenation MLP.
pub const CONCAT_HIDDEN: [usize; 2] = [256, 128];
/// Hidden width of the MLP after attention pooling.
pub const INTERACT_HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Aggregation,
    Concatenation,
    Interaction,
}

impl FusionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionKind::Aggregation => "aggregation",
            FusionKind::Concatenation => "concatenation",
            FusionKind::Interaction => "interaction",
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aggregate" | "aggregation" => Ok(FusionKind::Aggregation),
            "concat" | "concatenation" => Ok(FusionKind::Concatenation),
            "interact" | "interaction" => Ok(FusionKind::Interaction),
            other => Err(Error::Parse(format!("unknown fusion kind `{other}`"))),
        }
    }
}

/// Parameters of a fusion strategy (none for aggregation).
#[derive(Debug, Clone, PartialEq)]
pub struct FusionHead {
    kind: FusionKind,
    params: ParamStore,
    embed_dim: usize,
    n_members: usize,
    mhsa: Option<MhsaConfig>,
    member_bands: Vec<(f64, f64)>,
}

/// Gradients of a head with respect to its parameters and input embeddings.
pub struct HeadGrads {
    pub params: Gradients,
    /// One gradient vector per pool member, in pool order.
    pub embeddings: Vec<Vec<f64>>,
}

struct ConcatTrace {
    x: Tensor,
    a1_pre: Tensor,
    a1: Tensor,
    a2_pre: Tensor,
    a2: Tensor,
    z: f64,
}

fn lecun(rng: &mut ChaCha8Rng, out: usize, inp: usize) -> Result<Tensor> {
    let std = (1.0 / inp as f64).sqrt();
    let data = (0..out * inp)
        .map(|_| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    Tensor::new(vec![out, inp], data)
}

fn insert_linear(p: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, out: usize, inp: usize) -> Result<()> {
    p.insert(format!("{name}.weight"), lecun(rng, out, inp)?)?;
    p.insert(format!("{name}.bias"), Tensor::zeros(&[out]))
}

#[derive(Serialize, Deserialize)]
struct HeadCard {
    kind: FusionKind,
    embed_dim: usize,
    n_members: usize,
    mhsa: Option<MhsaConfig>,
    member_bands: Vec<(f64, f64)>,
}

impl FusionHead {
    pub fn aggregation() -> Self {
        Self {
            kind: FusionKind::Aggregation,
            params: ParamStore::new(),
            embed_dim: 0,
            n_members: 0,
            mhsa: None,
            member_bands: Vec::new(),
        }
    }

    /// MLP over `n_members * embed_dim` concatenated features.
    pub fn concatenation(n_members: usize, embed_dim: usize, seed: u64) -> Result<Self> {
        if n_members == 0 || embed_dim == 0 {
            return Err(Error::Config("concatenation needs members and a positive embedding width".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let [h1, h2] = CONCAT_HIDDEN;
        insert_linear(&mut params, &mut rng, "concat.fc1", h1, n_members * embed_dim)?;
        insert_linear(&mut params, &mut rng, "concat.fc2", h2, h1)?;
        insert_linear(&mut params, &mut rng, "concat.out", 1, h2)?;
        Ok(Self {
            kind: FusionKind::Concatenation,
            params,
            embed_dim,
            n_members,
            mhsa: None,
            member_bands: Vec::new(),
        })
    }

    /// Self-attention over the member sequence; works for any pool length.
    pub fn interaction(embed_dim: usize, cfg: MhsaConfig, seed: u64) -> Result<Self> {
        cfg.validate(embed_dim)?;
        let d = embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for name in ["interact.w_q", "interact.w_k", "interact.w_v", "interact.w_o"] {
            params.insert(name, lecun(&mut rng, d, d)?)?;
        }
        insert_linear(&mut params, &mut rng, "interact.fc1", INTERACT_HIDDEN, d)?;
        insert_linear(&mut params, &mut rng, "interact.out", 1, INTERACT_HIDDEN)?;
        Ok(Self {
            kind: FusionKind::Interaction,
            params,
            embed_dim,
            n_members: 0,
            mhsa: Some(cfg),
            member_bands: Vec::new(),
        })
    }

    /// A head of `kind` sized for `pool`, remembering the pool's bands.
    pub fn for_pool(kind: FusionKind, pool: &SelectedPool, seed: u64) -> Result<Self> {
        let mut head = match kind {
            FusionKind::Aggregation => Self::aggregation(),
            FusionKind::Concatenation => Self::concatenation(pool.len(), pool.embed_dim(), seed)?,
            FusionKind::Interaction => Self::interaction(pool.embed_dim(), MhsaConfig::default(), seed)?,
        };
        head.member_bands = pool.bands();
        Ok(head)
    }

    pub fn kind(&self) -> FusionKind {
        self.kind
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn mhsa(&self) -> Option<MhsaConfig> {
        self.mhsa
    }

    pub fn member_bands(&self) -> &[(f64, f64)] {
        &self.member_bands
    }

    /// Input width of the concatenation MLP.
    pub fn concat_dim(&self) -> usize {
        self.n_members * self.embed_dim
    }

    /// Fails when the head was built for a pool with different bands.
    pub fn check_pool(&self, pool: &SelectedPool) -> Result<()> {
        if !self.member_bands.is_empty() && self.member_bands != pool.bands() {
            return Err(Error::PoolMismatch(format!(
                "head built for bands {:?}, pool has {:?}",
                self.member_bands,
                pool.bands()
            )));
        }
        Ok(())
    }

    fn concat_input(&self, outputs: &[ExpertOutput]) -> Result<Tensor> {
        if outputs.len() != self.n_members || outputs.iter().any(|o| o.h.len() != self.embed_dim) {
            return Err(Error::PoolMismatch(format!(
                "concatenation expects {} embeddings of width {}, got {}",
                self.n_members,
                self.embed_dim,
                outputs.len()
            )));
        }
        Ok(Tensor::from_vec(outputs.iter().flat_map(|o| o.h.iter().copied()).collect()))
    }

    fn concat_forward(&self, outputs: &[ExpertOutput]) -> Result<ConcatTrace> {
        let p = &self.params;
        let x = self.concat_input(outputs)?;
        let a1_pre = Linear::forward(&x, p.get("concat.fc1.weight")?, p.get("concat.fc1.bias")?)?;
        let a1 = relu(&a1_pre);
        let a2_pre = Linear::forward(&a1, p.get("concat.fc2.weight")?, p.get("concat.fc2.bias")?)?;
        let a2 = relu(&a2_pre);
        let z = Linear::forward(&a2, p.get("concat.out.weight")?, p.get("concat.out.bias")?)?.data()[0];
        Ok(ConcatTrace { x, a1_pre, a1, a2_pre, a2, z })
    }

    fn concat_backward(&self, t: &ConcatTrace, dz: f64) -> Result<HeadGrads> {
        let p = &self.params;
        let mut grads = Gradients::new();
        let out = Linear::backward(&t.a2, p.get("concat.out.weight")?, &Tensor::from_vec(vec![dz]))?;
        let g2 = relu_backward(&t.a2_pre, &out.input)?;
        let fc2 = Linear::backward(&t.a1, p.get("concat.fc2.weight")?, &g2)?;
        let g1 = relu_backward(&t.a1_pre, &fc2.input)?;
        let fc1 = Linear::backward(&t.x, p.get("concat.fc1.weight")?, &g1)?;
        for (name, g) in [("out", out), ("fc2", fc2), ("fc1", fc1.clone())] {
            grads.insert(format!("concat.{name}.weight"), g.weight);
            grads.insert(format!("concat.{name}.bias"), g.bias);
        }
        let embeddings = fc1.input.data().chunks(self.embed_dim).map(<[f64]>::to_vec).collect();
        Ok(HeadGrads { params: grads, embeddings })
    }

    fn mhsa_cfg(&self) -> Result<MhsaConfig> {
        let cfg = self.mhsa.ok_or_else(|| Error::Config("interaction head without attention config".into()))?;
        cfg.validate(self.embed_dim)?;
        Ok(cfg)
    }

    /// Full attention trace, exposing the attention weights.
    pub fn interaction_trace(&self, outputs: &[ExpertOutput]) -> Result<MhsaTrace> {
        if self.kind != FusionKind::Interaction {
            return Err(Error::Config(format!("{} head has no attention", self.kind)));
        }
        let seq: Vec<Vec<f64>> = outputs.iter().map(|o| o.h.clone()).collect();
        mhsa::forward(&self.params, self.mhsa_cfg()?, &seq)
    }

    /// Fused logit for member outputs given in pool order.
    pub fn logit(&self, outputs: &[ExpertOutput]) -> Result<f64> {
        match self.kind {
            FusionKind::Aggregation => aggregate_logits(&outputs.iter().map(|o| o.z).collect::<Vec<_>>()),
            FusionKind::Concatenation => Ok(self.concat_forward(outputs)?.z),
            FusionKind::Interaction => Ok(self.interaction_trace(outputs)?.z),
        }
    }

    /// Logit plus gradients of `dz * logit`.
    pub fn logit_and_grads(&self, outputs: &[ExpertOutput], dz: impl FnOnce(f64) -> f64) -> Result<(f64, HeadGrads)> {
        match self.kind {
            FusionKind::Aggregation => Err(Error::NotTrainable),
            FusionKind::Concatenation => {
                let t = self.concat_forward(outputs)?;
                let g = self.concat_backward(&t, dz(t.z))?;
                Ok((t.z, g))
            }
            FusionKind::Interaction => {
                let t = self.interaction_trace(outputs)?;
                let (params, dh) = mhsa::backward(&self.params, self.mhsa_cfg()?, &t, dz(t.z))?;
                let embeddings = dh.chunks(self.embed_dim).map(<[f64]>::to_vec).collect();
                Ok((t.z, HeadGrads { params, embeddings }))
            }
        }
    }

    pub fn backward(&self, outputs: &[ExpertOutput], dz: f64) -> Result<HeadGrads> {
        Ok(self.logit_and_grads(outputs, |_| dz)?.1)
    }

    /// Writes the parameters and a `<path>.toml` card.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_checkpoint(path, &self.params)?;
        let card = HeadCard {
            kind: self.kind,
            embed_dim: self.embed_dim,
            n_members: self.n_members,
            mhsa: self.mhsa,
            member_bands: self.member_bands.clone(),
        };
        let text = toml::to_string(&card).map_err(|e| Error::Parse(e.to_string()))?;
        let card_path = model_card_path(path);
        fs::write(&card_path, text).map_err(|e| Error::file(&card_path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let card_path = model_card_path(path);
        let text = fs::read_to_string(&card_path).map_err(|e| Error::file(&card_path, e))?;
        let card: HeadCard = toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
        let mut head = match card.kind {
            FusionKind::Aggregation => Self::aggregation(),
            FusionKind::Concatenation => Self::concatenation(card.n_members, card.embed_dim, 0)?,
            FusionKind::Interaction => Self::interaction(card.embed_dim, card.mhsa.unwrap_or_default(), 0)?,
        };
        let params = read_checkpoint(path)?;
        for (name, t) in head.params.iter() {
            if params.get(name)?.shape() != t.shape() {
                return Err(Error::ShapeMismatch(format!("head parameter `{name}`")));
            }
        }
        if params.len() != head.params.len() {
            return Err(Error::ShapeMismatch("unexpected head parameters".into()));
        }
        head.params = params;
        head.member_bands = card.member_bands;
        Ok(head)
    }
}

/// Concatenates member embeddings and maps them through the MLP.
pub fn concat_fuse(outputs: &[ExpertOutput], head: &FusionHead) -> Result<f64> {
    if head.kind != FusionKind::Concatenation {
        return Err(Error::Config(format!("concat_fuse needs a concatenation head, got {}", head.kind)));
    }
    head.logit(outputs)
}

/// Self-attention over the member embeddings, mean pooling, then the MLP.
pub fn mhsa_interact(outputs: &[ExpertOutput], head: &FusionHead) -> Result<f64> {
    Ok(head.interaction_trace(outputs)?.z)
}

/// Frozen pool outputs for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledFeatures {
    pub id: String,
    pub label: Label,
    pub outputs: Vec<ExpertOutput>,
}

pub fn pool_features(pool: &SelectedPool, utterances: &[Utterance]) -> Result<Vec<PooledFeatures>> {
    utterances
        .par_iter()
        .map(|u| {
            Ok(PooledFeatures {
                id: u.id.clone(),
                label: u.label,
                outputs: pool.outputs(&u.spectrogram)?,
            })
        })
        .collect()
}

/// Scores every utterance with the head; entries ordered by id.
pub fn fuse_scores(head: &FusionHead, features: &[PooledFeatures]) -> Result<ScoreSet> {
    let mut entries = features
        .iter()
        .map(|f| {
            Ok(ScoreEntry {
                id: f.id.clone(),
                label: f.label,
                score: head.logit(&f.outputs)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    ScoreSet::new(entries)
}

/// Per-utterance mean of several score sets over the same ids and labels.
pub fn aggregate_score_sets(sets: &[ScoreSet]) -> Result<ScoreSet> {
    let first = sets.first().ok_or(Error::EmptyPool)?;
    let mut entries = Vec::with_capacity(first.len());
    for e in first.entries() {
        let mut logits = Vec::with_capacity(sets.len());
        for s in sets {
            let other = s
                .get(&e.id)
                .ok_or_else(|| Error::PoolMismatch(format!("`{}` missing from a score set", e.id)))?;
            if other.label != e.label {
                return Err(Error::PoolMismatch(format!("`{}` has conflicting labels", e.id)));
            }
            logits.push(other.score);
        }
        entries.push(ScoreEntry {
            id: e.id.clone(),
            label: e.label,
            score: aggregate_logits(&logits)?,
        });
    }
    if sets.iter().any(|s| s.len() != first.len()) {
        return Err(Error::PoolMismatch("score sets cover different utterances".into()));
    }
    ScoreSet::new(entries)
}

/// Trains only the head on frozen pool features with the supervised loss.
///
/// Member checkpoints are hashed before and after; any change is a contract violation.
pub fn train_fusion_head(
    head: &mut FusionHead,
    pool: &SelectedPool,
    train: &[PooledFeatures],
    opts: &TrainOptions,
) -> Result<Vec<f64>> {
    if head.kind == FusionKind::Aggregation {
        return Err(Error::NotTrainable);
    }
    head.check_pool(pool)?;
    let before = pool.param_hashes()?;
    let bona = train.iter().filter(|f| f.label == Label::Bonafide).count();
    if bona == 0 || bona == train.len() {
        return Err(Error::DegenerateDataset(format!(
            "fusion training set has {bona} bonafide of {} examples",
            train.len()
        )));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut history = Vec::new();
    if opts.epochs > 0 {
        let schedule = opts.schedule.with_total_steps(opts.steps_for(train.len()));
        schedule.validate()?;
        head.params.reset_optimizer();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.shuffle_seed);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut step = 0;
        for _ in 0..opts.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(opts.batch_size) {
                let frozen: &FusionHead = head;
                let per: Vec<Result<(f64, Gradients)>> = batch
                    .par_iter()
                    .map(|&i| {
                        let f = &train[i];
                        let mut loss = 0.0;
                        let (_, g) = frozen.logit_and_grads(&f.outputs, |z| {
                            let (l, dz) = opts.loss.eval(z, f.label.target());
                            loss = l;
                            dz
                        })?;
                        if !loss.is_finite() {
                            return Err(Error::Numeric(format!("fusion loss for `{}`", f.id)));
                        }
                        Ok((loss, g.params))
                    })
                    .collect();
                let mut grads = Gradients::new();
                let mut total = 0.0;
                for r in per {
                    let (l, g) = r?;
                    total += l;
                    grads.accumulate(&g)?;
                }
                let scale = 1.0 / batch.len() as f64;
                grads.scale(scale);
                adamw_step(&mut head.params, &grads, cosine_lr(step, &schedule)?, &schedule)?;
                if opts.precision == Precision::F32 {
                    head.params.round_to_f32();
                }
                history.push(total * scale);
                step += 1;
            }
        }
    }
    if pool.param_hashes()? != before {
        return Err(Error::ContractViolation("pool members changed during head training".into()));
    }
    Ok(history)
}
