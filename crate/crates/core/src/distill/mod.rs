//! Cross-expert knowledge distillation from frozen subband teachers into a
//! fullband student, through temperature-softened logits and embeddings.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::Spectrogram;
use crate::engine::{sigmoid, SupervisedLoss};
use crate::error::{Error, Result};
use crate::expert::{
    band_examples, train_core, AuxObjective, AuxTerm, ExpertModel, ExpertOutput, ExpertRole, TrainOptions, Utterance,
};

const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub tau: f64,
    /// Weight of the logit term.
    pub alpha: f64,
    /// Weight of the embedding term.
    pub beta: f64,
    pub teacher_weights: Vec<f64>,
    /// Loss on the hard labels.
    pub supervised: SupervisedLoss,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            tau: 3.0,
            alpha: 0.5,
            beta: 0.2,
            teacher_weights: vec![1.0],
            supervised: SupervisedLoss::Bce,
        }
    }
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Config(format!("teacher weights must be non-negative, got {weights:?}")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("teacher weights sum to {sum}, expected 1")));
    }
    Ok(())
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.tau)));
        }
        if !(self.alpha >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::Config("alpha and beta must be non-negative".into()));
        }
        check_weights(&self.teacher_weights)
    }
}

/// Two-class distribution `(p, 1 - p)` with `p = sigmoid(z / tau)`.
pub fn soften(z: f64, tau: f64) -> (f64, f64) {
    let p = sigmoid(z / tau);
    (p, 1.0 - p)
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `tau^2 * KL(Bern(p_s) || Bern(p_t))` on softened probabilities and its
/// derivative with respect to the student logit.
pub fn logit_distill_loss(z_s: f64, z_t: f64, tau: f64) -> (f64, f64) {
    let p = clamp_prob(soften(z_s, tau).0);
    let q = clamp_prob(soften(z_t, tau).0);
    let kl = p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
    let logit_gap = (p.ln() - (1.0 - p).ln()) - (q.ln() - (1.0 - q).ln());
    let grad = tau * p * (1.0 - p) * logit_gap;
    (tau * tau * kl, grad)
}

/// Sum of squared embedding differences and its gradient `2 (h_s - h_t)`.
pub fn feature_distill_loss(h_s: &[f64], h_t: &[f64]) -> Result<(f64, Vec<f64>)> {
    if h_s.len() != h_t.len() {
        return Err(Error::ShapeMismatch(format!(
            "student embedding has {} entries, teacher {}",
            h_s.len(),
            h_t.len()
        )));
    }
    let diff: Vec<f64> = h_s.iter().zip(h_t).map(|(s, t)| s - t).collect();
    let loss = diff.iter().map(|d| d * d).sum();
    Ok((loss, diff.into_iter().map(|d| 2.0 * d).collect()))
}

/// Convex combination of teacher outputs.
pub fn aggregate_outputs(outputs: &[ExpertOutput], weights: &[f64]) -> Result<ExpertOutput> {
    if outputs.len() != weights.len() || outputs.is_empty() {
        return Err(Error::Config(format!(
            "{} teacher outputs for {} weights",
            outputs.len(),
            weights.len()
        )));
    }
    let d = outputs[0].h.len();
    if outputs.iter().any(|o| o.h.len() != d) {
        return Err(Error::ShapeMismatch("teacher embeddings differ in width".into()));
    }
    let mut h = vec![0.0; d];
    let mut z = 0.0;
    for (o, &w) in outputs.iter().zip(weights) {
        for (acc, v) in h.iter_mut().zip(&o.h) {
            *acc += w * v;
        }
        z += w * o.z;
    }
    Ok(ExpertOutput { h, z })
}

/// One or two frozen teachers with their aggregation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherEnsemble {
    teachers: Vec<ExpertModel>,
    weights: Vec<f64>,
}

impl TeacherEnsemble {
    pub fn new(teachers: Vec<ExpertModel>, weights: Vec<f64>) -> Result<Self> {
        if teachers.len() != weights.len() {
            return Err(Error::Config(format!(
                "{} teachers but {} weights",
                teachers.len(),
                weights.len()
            )));
        }
        if !(1..=2).contains(&teachers.len()) {
            return Err(Error::Config(format!("1 or 2 teachers supported, got {}", teachers.len())));
        }
        check_weights(&weights)?;
        if let [a, b] = teachers.as_slice() {
            let (a, b) = (a.band(), b.band());
            if a.0 < b.1 && b.0 < a.1 {
                return Err(Error::Config(format!("teacher bands {a:?} and {b:?} overlap")));
            }
        }
        Ok(Self { teachers, weights })
    }

    pub fn single(teacher: ExpertModel) -> Result<Self> {
        Self::new(vec![teacher], vec![1.0])
    }

    pub fn teachers(&self) -> &[ExpertModel] {
        &self.teachers
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn param_hashes(&self) -> Result<Vec<String>> {
        self.teachers.iter().map(ExpertModel::param_hash).collect()
    }

    /// Aggregated teacher output from per-teacher band slices (inference only).
    pub fn aggregate(&self, slices: &[Spectrogram]) -> Result<ExpertOutput> {
        if slices.len() != self.teachers.len() {
            return Err(Error::Config(format!(
                "{} slices for {} teachers",
                slices.len(),
                self.teachers.len()
            )));
        }
        let outputs = self
            .teachers
            .iter()
            .zip(slices)
            .map(|(t, s)| t.forward(s))
            .collect::<Result<Vec<_>>>()?;
        aggregate_outputs(&outputs, &self.weights)
    }

    /// Aggregated teacher output, cutting each teacher's band from a fullband spectrogram.
    pub fn aggregate_fullband(&self, fullband: &Spectrogram) -> Result<ExpertOutput> {
        let slices = self
            .teachers
            .iter()
            .map(|t| crate::dsp::slice_band(fullband, t.band().0, t.band().1))
            .collect::<Result<Vec<_>>>()?;
        self.aggregate(&slices)
    }
}

/// `h_t = Σ w_m h_m`, `z_t = Σ w_m z_m` over each teacher fed its own slice.
pub fn teacher_aggregate(ensemble: &TeacherEnsemble, slices: &[Spectrogram]) -> Result<ExpertOutput> {
    ensemble.aggregate(slices)
}

struct DistillTerms<'a> {
    targets: &'a [ExpertOutput],
    cfg: &'a DistillConfig,
}

impl AuxObjective for DistillTerms<'_> {
    fn term(&self, index: usize, out: &ExpertOutput) -> Result<Option<AuxTerm>> {
        let t = &self.targets[index];
        let mut term = AuxTerm {
            loss: 0.0,
            dz: 0.0,
            dh: None,
        };
        if self.cfg.alpha != 0.0 {
            let (l, g) = logit_distill_loss(out.z, t.z, self.cfg.tau);
            term.loss += self.cfg.alpha * l;
            term.dz += self.cfg.alpha * g;
        }
        if self.cfg.beta != 0.0 {
            let (l, g) = feature_distill_loss(&out.h, &t.h)?;
            term.loss += self.cfg.beta * l;
            term.dh = Some(g.into_iter().map(|v| self.cfg.beta * v).collect());
        }
        Ok((self.cfg.alpha != 0.0 || self.cfg.beta != 0.0).then_some(term))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DistillReport {
    pub loss_history: Vec<f64>,
    pub valid_eer: Option<f64>,
    pub teacher_hashes: Vec<String>,
}

/// Trains the fullband student on `L_sup + alpha * L_logit + beta * L_feat`.
///
/// Teacher outputs are computed once up front since the teachers are frozen.
/// `opts.loss` is replaced by `cfg.supervised`.
pub fn distill_train(
    student: &mut ExpertModel,
    ensemble: &TeacherEnsemble,
    cfg: &DistillConfig,
    train: &[Utterance],
    valid: &[Utterance],
    opts: &TrainOptions,
) -> Result<DistillReport> {
    cfg.validate()?;
    if student.role() != ExpertRole::Fullband {
        return Err(Error::Config("the distillation student must be a fullband model".into()));
    }
    if cfg.teacher_weights != ensemble.weights {
        return Err(Error::Config(format!(
            "config weights {:?} differ from ensemble weights {:?}",
            cfg.teacher_weights, ensemble.weights
        )));
    }
    let before = ensemble.param_hashes()?;
    let targets = {
        use rayon::prelude::*;
        train
            .par_iter()
            .map(|u| ensemble.aggregate_fullband(&u.spectrogram))
            .collect::<Result<Vec<_>>>()?
    };
    let examples = band_examples(train, student.band())?;
    let valid = band_examples(valid, student.band())?;
    let opts = TrainOptions {
        loss: cfg.supervised,
        ..opts.clone()
    };
    let terms = DistillTerms { targets: &targets, cfg };
    let loss_history = train_core(student, &examples, &opts, Some(&terms))?;
    let after = ensemble.param_hashes()?;
    if after != before {
        return Err(Error::ContractViolation("a teacher changed during distillation".into()));
    }
    Ok(DistillReport {
        loss_history,
        valid_eer: crate::expert::validation_eer(student, &valid)?,
        teacher_hashes: after,
    })
}

/// Provenance record written next to a distilled student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillRunManifest {
    pub tau: f64,
    pub alpha: f64,
    pub beta: f64,
    pub teacher_weights: Vec<f64>,
    pub supervised: SupervisedLoss,
    pub teacher_bands: Vec<(f64, f64)>,
    pub teacher_sha256: Vec<String>,
    pub student_sha256: String,
    pub seed: u64,
    pub shuffle_seed: u64,
}

impl DistillRunManifest {
    pub fn new(
        cfg: &DistillConfig,
        ensemble: &TeacherEnsemble,
        student: &ExpertModel,
        opts: &TrainOptions,
    ) -> Result<Self> {
        Ok(Self {
            tau: cfg.tau,
            alpha: cfg.alpha,
            beta: cfg.beta,
            teacher_weights: cfg.teacher_weights.clone(),
            supervised: cfg.supervised,
            teacher_bands: ensemble.teachers.iter().map(ExpertModel::band).collect(),
            teacher_sha256: ensemble.param_hashes()?,
            student_sha256: student.param_hash()?,
            seed: student.config().seed,
            shuffle_seed: opts.shuffle_seed,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::file(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))
    }
}
