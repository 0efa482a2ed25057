use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, Split};
use super::model::{ExpertModel, ExpertOutput, InputNorm};
use super::score::{band_examples, load_utterances, score_examples, Example, SkipReport};
use crate::engine::{adamw_step, cosine_lr, Gradients, Precision, SupervisedLoss, TrainSchedule};
use crate::error::{Error, Result};
use crate::eval::{pooled_eer, Label};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    /// `total_steps` is derived from epochs and batch size when training starts.
    pub schedule: TrainSchedule,
    pub loss: SupervisedLoss,
    pub precision: Precision,
    /// Seeds the per-epoch shuffle of the training examples.
    pub shuffle_seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            schedule: TrainSchedule::default(),
            loss: SupervisedLoss::default(),
            precision: Precision::F64,
            shuffle_seed: 0,
        }
    }
}

impl TrainOptions {
    pub fn steps_for(&self, n_examples: usize) -> usize {
        self.epochs * n_examples.div_ceil(self.batch_size.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean batch loss at every optimizer step.
    pub loss_history: Vec<f64>,
    pub steps: usize,
    /// Pooled EER on the validation examples, when both labels are present.
    pub valid_eer: Option<f64>,
    pub skipped: SkipReport,
}

/// Additional per-example objective added to the supervised loss.
pub(crate) struct AuxTerm {
    pub loss: f64,
    pub dz: f64,
    pub dh: Option<Vec<f64>>,
}

pub(crate) trait AuxObjective: Sync {
    /// `index` is the position of the example in the training slice.
    fn term(&self, index: usize, output: &ExpertOutput) -> Result<Option<AuxTerm>>;
}

fn check_labels(examples: &[Example]) -> Result<()> {
    let bona = examples.iter().filter(|e| e.label == Label::Bonafide).count();
    if bona == 0 || bona == examples.len() {
        return Err(Error::DegenerateDataset(format!(
            "training set has {bona} bonafide and {} deepfake examples",
            examples.len() - bona
        )));
    }
    Ok(())
}

/// Shared optimization loop for supervised and distillation training.
pub(crate) fn train_core(
    model: &mut ExpertModel,
    train: &[Example],
    opts: &TrainOptions,
    aux: Option<&dyn AuxObjective>,
) -> Result<Vec<f64>> {
    check_labels(train)?;
    if opts.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if opts.epochs == 0 {
        return Ok(Vec::new());
    }
    for e in train {
        model.check_band(&e.input)?;
    }
    if model.input_norm().is_none() {
        model.set_input_norm(Some(InputNorm::fit(train.iter().map(|e| &e.input))?));
    }
    let total = opts.steps_for(train.len());
    let schedule = opts.schedule.with_total_steps(total);
    schedule.validate()?;
    model.params_mut().reset_optimizer();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.shuffle_seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(total);
    let mut step = 0;
    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(opts.batch_size) {
            let frozen: &ExpertModel = model;
            let per_example: Vec<Result<(f64, Gradients)>> = batch
                .par_iter()
                .map(|&i| {
                    let ex = &train[i];
                    let trace = frozen.forward_trace(&ex.input)?;
                    let (mut loss, mut dz) = opts.loss.eval(trace.output.z, ex.label.target());
                    let mut dh = None;
                    if let Some(aux) = aux {
                        if let Some(term) = aux.term(i, &trace.output)? {
                            loss += term.loss;
                            dz += term.dz;
                            dh = term.dh;
                        }
                    }
                    if !loss.is_finite() {
                        return Err(Error::Numeric(format!("training loss for `{}`", ex.id)));
                    }
                    let back = frozen.backward(&trace, dz, dh.as_deref())?;
                    Ok((loss, back.params))
                })
                .collect();
            let mut grads = Gradients::new();
            let mut loss_sum = 0.0;
            for r in per_example {
                let (loss, g) = r?;
                loss_sum += loss;
                grads.accumulate(&g)?;
            }
            let scale = 1.0 / batch.len() as f64;
            grads.scale(scale);
            let lr = cosine_lr(step, &schedule)?;
            adamw_step(model.params_mut(), &grads, lr, &schedule)?;
            if opts.precision == Precision::F32 {
                model.params_mut().round_to_f32();
            }
            history.push(loss_sum * scale);
            step += 1;
        }
    }
    Ok(history)
}

/// Trains on pre-sliced examples and reports the validation EER.
pub fn train_expert_on(
    model: &mut ExpertModel,
    train: &[Example],
    valid: &[Example],
    opts: &TrainOptions,
) -> Result<TrainReport> {
    let loss_history = train_core(model, train, opts, None)?;
    Ok(TrainReport {
        steps: loss_history.len(),
        loss_history,
        valid_eer: validation_eer(model, valid)?,
        skipped: SkipReport::default(),
    })
}

pub fn validation_eer(model: &ExpertModel, valid: &[Example]) -> Result<Option<f64>> {
    let scores = score_examples(model, valid)?;
    if scores.count(Label::Bonafide) == 0 || scores.count(Label::Deepfake) == 0 {
        return Ok(None);
    }
    Ok(Some(pooled_eer(&scores)?.eer))
}

/// Trains on the manifest's `train` split and validates on its `valid` split.
pub fn train_expert(model: &mut ExpertModel, manifest: &DatasetManifest, opts: &TrainOptions) -> Result<TrainReport> {
    let (train_utts, mut skipped) = load_utterances(&manifest.split(Split::Train), model.frontend())?;
    let (valid_utts, skipped_valid) = load_utterances(&manifest.split(Split::Valid), model.frontend())?;
    skipped.skipped.extend(skipped_valid.skipped);
    let train = band_examples(&train_utts, model.band())?;
    let valid = band_examples(&valid_utts, model.band())?;
    let mut report = train_expert_on(model, &train, &valid, opts)?;
    report.skipped = skipped;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Spectrogram;
    use crate::expert::{BackboneSpec, ExpertConfig};

    /// Toy set: deepfakes carry a bright upper half.
    fn toy_examples(n: usize) -> Vec<Example> {
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Bonafide } else { Label::Deepfake };
                let (bins, frames) = (8, 8);
                let values = (0..bins * frames)
                    .map(|k| {
                        let bin = k / frames;
                        let jitter = ((i * 31 + k * 7) % 13) as f32 * 0.05;
                        let lift = if label == Label::Deepfake && bin >= 4 { 2.0 } else { 0.0 };
                        jitter + lift
                    })
                    .collect();
                Example {
                    id: format!("toy{i:02}"),
                    label,
                    input: Spectrogram::new(values, bins, frames, 0.0, 22050.0, 44100.0, 22050.0 / 8.0).unwrap(),
                }
            })
            .collect()
    }

    fn toy_model(seed: u64) -> ExpertModel {
        let cfg = ExpertConfig::fullband(seed).with_backbone(BackboneSpec::stride2(&[4, 8]));
        ExpertModel::build(cfg).unwrap()
    }

    fn toy_options() -> TrainOptions {
        TrainOptions {
            epochs: 40,
            batch_size: 4,
            schedule: TrainSchedule {
                lr_max: 1e-2,
                ..TrainSchedule::default()
            },
            ..TrainOptions::default()
        }
    }

    #[test]
    fn separable_toy_loss_drops_ninety_percent() {
        let data = toy_examples(20);
        let mut model = toy_model(1);
        let report = train_expert_on(&mut model, &data, &data, &toy_options()).unwrap();
        assert_eq!(report.steps, 200);
        let first = report.loss_history[0];
        let last = *report.loss_history.last().unwrap();
        assert!(last <= 0.1 * first, "loss {first} -> {last}");
        assert_eq!(report.valid_eer, Some(0.0));
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let data = toy_examples(6);
        let mut model = toy_model(2);
        let before = model.clone();
        let opts = TrainOptions { epochs: 0, ..toy_options() };
        let report = train_expert_on(&mut model, &data, &[], &opts).unwrap();
        assert!(report.loss_history.is_empty());
        assert_eq!(model, before);
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_examples(10);
        let opts = TrainOptions { epochs: 3, ..toy_options() };
        let mut a = toy_model(3);
        let mut b = toy_model(3);
        let ra = train_expert_on(&mut a, &data, &[], &opts).unwrap();
        let rb = train_expert_on(&mut b, &data, &[], &opts).unwrap();
        assert_eq!(ra.loss_history, rb.loss_history);
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn single_class_rejected() {
        let data: Vec<_> = toy_examples(6).into_iter().filter(|e| e.label == Label::Bonafide).collect();
        let mut model = toy_model(0);
        let r = train_expert_on(&mut model, &data, &[], &toy_options());
        assert!(matches!(r, Err(Error::DegenerateDataset(_))));
    }

    #[test]
    fn f32_precision_keeps_parameters_representable() {
        let data = toy_examples(8);
        let mut model = toy_model(4);
        let opts = TrainOptions {
            epochs: 2,
            precision: Precision::F32,
            ..toy_options()
        };
        train_expert_on(&mut model, &data, &[], &opts).unwrap();
        for (_, t) in model.params().iter() {
            assert!(t.data().iter().all(|&v| v as f32 as f64 == v));
        }
    }
}
