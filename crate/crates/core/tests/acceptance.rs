//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test --test acceptance`. Passing criterion numbers after
//! `--` runs only those (`cargo test --test acceptance -- 6 8`).

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subband::attribution::{band_energy_fraction, gradcam};
use subband::distill::{
    aggregate_outputs, distill_train, feature_distill_loss, logit_distill_loss, DistillConfig, TeacherEnsemble,
};
use subband::dsp::{
    band_boundaries, decode_spectrogram, encode_spectrogram, partition_spectrogram, read_spectrogram_cache,
    stack_subbands, write_spectrogram_cache, Spectrogram, StftConfig, SubbandPartition,
};
use subband::engine::{
    bce_with_logits, decode_checkpoint, encode_checkpoint, global_avg_pool, global_avg_pool_backward, grad_check,
    read_checkpoint, relu, relu_backward, sigmoid_focal_loss, write_checkpoint, Conv2d, FocalParams, LayerNorm, Linear,
    MaxPool2d, SupervisedLoss, Tensor, TrainSchedule,
};
use subband::eval::{format_eer_cell, pooled_eer, pooled_eer_pairs, read_scores, write_scores, Label, ScoreSet};
use subband::expert::{
    band_examples, load_utterances, score_examples, train_expert_on, BackboneSpec, DatasetManifest, ExpertConfig,
    ExpertModel, ExpertOutput, FrontEnd, Split, TrainOptions, Utterance,
};
use subband::fusion::{aggregate_logits, aggregate_score_sets, mhsa_interact, FusionHead, MhsaConfig};
use subband::synth::{build_corpus, SynthConfig};

type Outcome = Result<String, String>;

struct Gate {
    failures: usize,
    only: Vec<usize>,
}

impl Gate {
    fn run(&mut self, id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) {
        if !self.only.is_empty() && !self.only.contains(&id) {
            return;
        }
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if elapsed <= budget => (true, d),
            Ok(d) => (false, format!("{d}; runtime {elapsed:.1?} exceeds {budget:?}")),
            Err(d) => (false, d),
        };
        if !ok {
            self.failures += 1;
        }
        let status = if ok { "PASS" } else { "FAIL" };
        println!("criterion {id} [{status}] {name}: {detail} ({elapsed:.1?})");
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<T>(r: subband::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), normal_vec(rng, n)).unwrap()
}

fn dot(a: &Tensor, b: &[f64]) -> f64 {
    a.data().iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------- criterion 1

const SEEDS: u64 = 100;

/// Worst relative error over every seed for one op.
fn worst_over_seeds(f: impl Fn(&mut ChaCha8Rng) -> subband::Result<f64>) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        worst = worst.max(e2s(f(&mut rng))?);
    }
    Ok(worst)
}

fn criterion_gradients() -> Outcome {
    // Linear maps in the probed variable: central differences are exact up to
    // rounding, so a wide step keeps rounding small.
    const H_LINEAR: f64 = 1e-2;
    const H: f64 = 1e-5;
    let mut report = Vec::new();
    let mut check = |name: &str, tol: f64, worst: f64| -> Result<(), String> {
        report.push(format!("{name} {worst:.1e}"));
        ensure(worst < tol, || format!("{name}: max relative error {worst:e} >= {tol:e}"))
    };

    let conv = |rng: &mut ChaCha8Rng| {
        let c_in = rng.random_range(1..4);
        let c_out = rng.random_range(1..4);
        let (h, w) = (rng.random_range(3..8), rng.random_range(3..8));
        let layer = Conv2d::new(rng.random_range(1..3), rng.random_range(0..2))?;
        let x = tensor(rng, &[c_in, h, w]);
        let wt = tensor(rng, &[c_out, c_in, 3, 3]);
        let b = tensor(rng, &[c_out]);
        let (y, _) = layer.forward(&x, &wt, &b)?;
        let r = normal_vec(rng, y.len());
        Ok::<_, subband::Error>((layer, x, wt, b, r))
    };
    check(
        "conv2d",
        1e-6,
        worst_over_seeds(|rng| {
            let (layer, x, wt, b, r) = conv(rng)?;
            let ex = grad_check(
                |x| {
                    let (y, cache) = layer.forward(x, &wt, &b)?;
                    let g = layer.backward(&cache, &wt, &Tensor::new(y.shape().to_vec(), r.clone())?)?;
                    Ok((dot(&y, &r), g.input))
                },
                &x,
                H_LINEAR,
            )?;
            let ew = grad_check(
                |wt| {
                    let (y, cache) = layer.forward(&x, wt, &b)?;
                    let g = layer.backward(&cache, wt, &Tensor::new(y.shape().to_vec(), r.clone())?)?;
                    Ok((dot(&y, &r), g.weight))
                },
                &wt,
                H_LINEAR,
            )?;
            let eb = grad_check(
                |b| {
                    let (y, cache) = layer.forward(&x, &wt, b)?;
                    let g = layer.backward(&cache, &wt, &Tensor::new(y.shape().to_vec(), r.clone())?)?;
                    Ok((dot(&y, &r), g.bias))
                },
                &b,
                H_LINEAR,
            )?;
            Ok(ex.max(ew).max(eb))
        })?,
    )?;

    check(
        "linear",
        1e-6,
        worst_over_seeds(|rng| {
            let (o, i) = (rng.random_range(1..9), rng.random_range(1..9));
            let x = tensor(rng, &[i]);
            let wt = tensor(rng, &[o, i]);
            let b = tensor(rng, &[o]);
            let r = normal_vec(rng, o);
            let gout = Tensor::new(vec![o], r.clone())?;
            let f = |x: &Tensor, wt: &Tensor, b: &Tensor| Linear::forward(x, wt, b).map(|y| dot(&y, &r));
            let ex = grad_check(|x| Ok((f(x, &wt, &b)?, Linear::backward(x, &wt, &gout)?.input)), &x, H_LINEAR)?;
            let ew = grad_check(|wt| Ok((f(&x, wt, &b)?, Linear::backward(&x, wt, &gout)?.weight)), &wt, H_LINEAR)?;
            let eb = grad_check(|b| Ok((f(&x, &wt, b)?, Linear::backward(&x, &wt, &gout)?.bias)), &b, H_LINEAR)?;
            Ok(ex.max(ew).max(eb))
        })?,
    )?;

    check(
        "layernorm",
        1e-4,
        worst_over_seeds(|rng| {
            let shape = [rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..5)];
            let c = shape[0];
            let ln = LayerNorm::default();
            let x = tensor(rng, &shape);
            let gamma = tensor(rng, &[c]);
            let beta = tensor(rng, &[c]);
            let r = normal_vec(rng, x.len());
            let gout = Tensor::new(shape.to_vec(), r.clone())?;
            let ex = grad_check(
                |x| {
                    let (y, cache) = ln.forward(x, &gamma, &beta)?;
                    Ok((dot(&y, &r), ln.backward(&cache, &gamma, &gout)?.input))
                },
                &x,
                H,
            )?;
            let eg = grad_check(
                |g| {
                    let (y, cache) = ln.forward(&x, g, &beta)?;
                    Ok((dot(&y, &r), ln.backward(&cache, g, &gout)?.gamma))
                },
                &gamma,
                H,
            )?;
            let eb = grad_check(
                |b| {
                    let (y, cache) = ln.forward(&x, &gamma, b)?;
                    Ok((dot(&y, &r), ln.backward(&cache, &gamma, &gout)?.beta))
                },
                &beta,
                H,
            )?;
            Ok(ex.max(eg).max(eb))
        })?,
    )?;

    check(
        "relu",
        1e-4,
        worst_over_seeds(|rng| {
            let n = rng.random_range(1..20);
            let mut x = tensor(rng, &[n]);
            // Keep inputs away from the kink.
            x.data_mut().iter_mut().for_each(|v| *v += 0.1f64.copysign(*v));
            let r = normal_vec(rng, x.len());
            grad_check(
                |x| {
                    let g = relu_backward(x, &Tensor::new(x.shape().to_vec(), r.clone())?)?;
                    Ok((dot(&relu(x), &r), g))
                },
                &x,
                H,
            )
        })?,
    )?;

    check(
        "maxpool",
        1e-4,
        worst_over_seeds(|rng| {
            let pool = MaxPool2d { kernel: 2, stride: 2 };
            let shape = [rng.random_range(1..3), 2 * rng.random_range(1..4), 2 * rng.random_range(1..4)];
            // Distinct values spaced well above the step so the argmax never flips.
            let n: usize = shape.iter().product();
            let mut values: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
            for i in (1..n).rev() {
                values.swap(i, rng.random_range(0..=i));
            }
            let x = Tensor::new(shape.to_vec(), values)?;
            let (y, _) = pool.forward(&x)?;
            let r = normal_vec(rng, y.len());
            grad_check(
                |x| {
                    let (y, cache) = pool.forward(x)?;
                    let g = pool.backward(&cache, &Tensor::new(y.shape().to_vec(), r.clone())?)?;
                    Ok((dot(&y, &r), g))
                },
                &x,
                H,
            )
        })?,
    )?;

    check(
        "global_avg_pool",
        1e-6,
        worst_over_seeds(|rng| {
            let shape = [rng.random_range(1..4), rng.random_range(1..5), rng.random_range(1..5)];
            let x = tensor(rng, &shape);
            let r = normal_vec(rng, shape[0]);
            grad_check(
                |x| {
                    let g = global_avg_pool_backward(x.shape(), &Tensor::new(vec![shape[0]], r.clone())?)?;
                    Ok((dot(&global_avg_pool(x)?, &r), g))
                },
                &x,
                H_LINEAR,
            )
        })?,
    )?;

    let scalar_loss = |rng: &mut ChaCha8Rng, f: &dyn Fn(f64, f64) -> (f64, f64)| {
        let z = Tensor::scalar(rng.random::<f64>() * 12.0 - 6.0);
        let label = f64::from(rng.random::<bool>());
        grad_check(
            |z| {
                let (l, g) = f(z.data()[0], label);
                Ok((l, Tensor::new(z.shape().to_vec(), vec![g])?))
            },
            &z,
            H,
        )
    };
    check(
        "focal_loss",
        1e-4,
        worst_over_seeds(|rng| {
            let p = FocalParams { gamma: rng.random::<f64>() * 3.0, alpha: 0.05 + 0.9 * rng.random::<f64>() };
            scalar_loss(rng, &|z, y| sigmoid_focal_loss(z, y, p))
        })?,
    )?;
    check("bce_loss", 1e-4, worst_over_seeds(|rng| scalar_loss(rng, &bce_with_logits))?)?;

    check(
        "logit_distill",
        1e-4,
        worst_over_seeds(|rng| {
            let tau = 0.5 + rng.random::<f64>() * 5.0;
            let zt = rng.random::<f64>() * 16.0 - 8.0;
            let z = Tensor::scalar(rng.random::<f64>() * 16.0 - 8.0);
            grad_check(
                |z| {
                    let (l, g) = logit_distill_loss(z.data()[0], zt, tau);
                    Ok((l, Tensor::scalar(g)))
                },
                &z,
                H,
            )
        })?,
    )?;
    check(
        "feature_distill",
        1e-4,
        worst_over_seeds(|rng| {
            let d = rng.random_range(1..40);
            let ht = normal_vec(rng, d);
            let hs = tensor(rng, &[d]);
            grad_check(
                |h| {
                    let (l, g) = feature_distill_loss(h.data(), &ht)?;
                    Ok((l, Tensor::new(vec![d], g)?))
                },
                &hs,
                H,
            )
        })?,
    )?;
    Ok(format!("{SEEDS} seeds per op; {}", report.join(", ")))
}

// ---------------------------------------------------------------- criterion 2

fn random_spec(rng: &mut ChaCha8Rng) -> Spectrogram {
    let window = 2 * rng.random_range(8..300);
    let bins = window / 2 + 1;
    let frames = rng.random_range(1..30);
    let values = (0..bins * frames).map(|_| rng.random::<f32>() * 60.0 - 40.0).collect();
    Spectrogram::new(values, bins, frames, 0.0, 22_050.0, 44_100.0, 44_100.0 / window as f64).unwrap()
}

fn criterion_partition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..50 {
        let spec = random_spec(&mut rng);
        for n in [1, 2, 4, 8] {
            let part = e2s(SubbandPartition::for_spectrogram(n, &spec))?;
            let slices = e2s(partition_spectrogram(&spec, &part))?;
            let back = e2s(stack_subbands(&slices))?;
            let same = back.values().iter().zip(spec.values()).all(|(a, b)| a.to_bits() == b.to_bits());
            ensure(same && back.freq_bins() == spec.freq_bins(), || {
                format!("spectrogram {i}, N={n}: concatenation differs from the input")
            })?;
        }
    }
    let b = e2s(band_boundaries(2, 22_050.0))?;
    ensure(b == vec![(0.0, 11_025.0), (11_025.0, 22_050.0)], || format!("N=2 boundaries {b:?}"))?;
    Ok("50 spectrograms x N in {1,2,4,8} bitwise; N=2 edges (0, 11025, 22050) Hz".into())
}

// ---------------------------------------------------------------- criterion 3

/// Quadratic sweep: FAR/FRR recomputed from scratch at every candidate
/// threshold, then linear interpolation at the first crossing.
fn brute_force_eer(pairs: &[(Label, f64)]) -> f64 {
    let mut thresholds: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);
    let nb = pairs.iter().filter(|p| p.0 == Label::Bonafide).count() as f64;
    let nf = pairs.len() as f64 - nb;
    let mut prev = None;
    for t in thresholds {
        let fa = pairs.iter().filter(|p| p.0 == Label::Bonafide && p.1 >= t).count() as f64 / nb;
        let fr = pairs.iter().filter(|p| p.0 == Label::Deepfake && p.1 < t).count() as f64 / nf;
        if fr >= fa {
            let Some((fa0, fr0)) = prev else { return fa };
            if fr == fa {
                return fa;
            }
            let (d0, d1): (f64, f64) = (fa0 - fr0, fa - fr);
            return fa0 + d0 / (d0 - d1) * (fa - fa0);
        }
        prev = Some((fa, fr));
    }
    unreachable!()
}

fn random_pairs(rng: &mut ChaCha8Rng, n: usize, shift: f64, grid: bool) -> Vec<(Label, f64)> {
    let mut pairs: Vec<(Label, f64)> = (0..n)
        .map(|_| {
            let label = if rng.random::<bool>() { Label::Deepfake } else { Label::Bonafide };
            let mut s = rng.random::<f64>() * 4.0;
            if grid {
                s = (s * 4.0).floor() / 4.0;
            }
            (label, s + if label == Label::Deepfake { shift } else { 0.0 })
        })
        .collect();
    pairs[0].0 = Label::Bonafide;
    pairs[1].0 = Label::Deepfake;
    pairs
}

fn criterion_eer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let n = rng.random_range(2..=200);
        let shift = rng.random::<f64>() * 3.0 - 1.0;
        let pairs = random_pairs(&mut rng, n, shift, i % 2 == 0);
        let got = e2s(pooled_eer_pairs(&pairs))?.eer;
        worst = worst.max((got - brute_force_eer(&pairs)).abs());
    }
    ensure(worst <= 1e-9, || format!("max deviation from brute force {worst:e}"))?;
    for n in [2, 10, 200] {
        let pairs: Vec<(Label, f64)> = (0..n)
            .map(|i| if i % 2 == 0 { (Label::Bonafide, -(i as f64)) } else { (Label::Deepfake, 1.0 + i as f64) })
            .collect();
        let eer = e2s(pooled_eer_pairs(&pairs))?.eer;
        ensure(eer == 0.0, || format!("perfect separation gave {eer}"))?;
    }
    let mut total = 0.0;
    for _ in 0..100 {
        let pairs = random_pairs(&mut rng, 200, 0.0, false);
        total += e2s(pooled_eer_pairs(&pairs))?.eer;
    }
    let mean = total / 100.0;
    ensure((0.45..=0.55).contains(&mean), || format!("label-independent mean EER {mean}"))?;
    Ok(format!("max |dEER| {worst:.1e} over 1000 sets; separated sets 0; random-score mean {mean:.4}"))
}

// ---------------------------------------------------------------- criterion 4

fn random_outputs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<ExpertOutput> {
    (0..n).map(|_| ExpertOutput { h: normal_vec(rng, d), z: rng.random::<f64>() * 4.0 - 2.0 }).collect()
}

fn criterion_fusion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_mean: f64 = 0.0;
    let mut worst_perm: f64 = 0.0;
    let mut worst_rows: f64 = 0.0;
    let head = e2s(FusionHead::interaction(32, MhsaConfig::default(), 11))?;
    for _ in 0..200 {
        let n = rng.random_range(1..10);
        let mut logits = normal_vec(&mut rng, n);
        let mean = logits.iter().sum::<f64>() / n as f64;
        let agg = e2s(aggregate_logits(&logits))?;
        worst_mean = worst_mean.max((agg - mean).abs() / mean.abs().max(1.0));
        logits.reverse();
        logits.rotate_left(n / 2);
        ensure(e2s(aggregate_logits(&logits))? == agg, || "aggregation depends on order".into())?;

        let members = rng.random_range(1..6);
        let mut outputs = random_outputs(&mut rng, members, 32);
        let z = e2s(mhsa_interact(&outputs, &head))?;
        let trace = e2s(head.interaction_trace(&outputs))?;
        for a in &trace.attention {
            let l = outputs.len();
            for row in a.chunks(l) {
                worst_rows = worst_rows.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
        for i in (1..outputs.len()).rev() {
            outputs.swap(i, rng.random_range(0..=i));
        }
        worst_perm = worst_perm.max((e2s(mhsa_interact(&outputs, &head))? - z).abs());
    }
    ensure(worst_mean <= 4.0 * f64::EPSILON, || format!("aggregation off the mean by {worst_mean:e}"))?;
    ensure(worst_perm <= 1e-12, || format!("interaction changes by {worst_perm:e} under permutation"))?;
    ensure(worst_rows <= 1e-12, || format!("attention rows deviate from 1 by {worst_rows:e}"))?;
    for k in 1..=8 {
        let h = e2s(FusionHead::concatenation(k + 1, 32, 0))?;
        ensure(h.concat_dim() == 32 * (k + 1), || format!("K={k}: concat width {}", h.concat_dim()))?;
    }
    Ok(format!(
        "mean err {worst_mean:.1e}; permutation {worst_perm:.1e}; row sums {worst_rows:.1e}; concat 32(K+1) for K=1..8"
    ))
}

// ---------------------------------------------------------------- criterion 5

fn toy_utterances(n: usize, seed: u64) -> Vec<Utterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (bins, frames) = (33, 12);
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Bonafide } else { Label::Deepfake };
            let values = (0..bins * frames)
                .map(|k| {
                    let upper = k / frames >= 16 && label == Label::Deepfake;
                    rng.random::<f32>() + if upper { 1.5 } else { 0.0 }
                })
                .collect();
            Utterance {
                id: format!("u{i:03}"),
                label,
                spectrogram: Spectrogram::new(values, bins, frames, 0.0, 22_050.0, 44_100.0, 44_100.0 / 64.0).unwrap(),
            }
        })
        .collect()
}

fn criterion_distill_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..1000 {
        let z = rng.random::<f64>() * 40.0 - 20.0;
        let tau = 0.1 + rng.random::<f64>() * 10.0;
        let (l, _) = logit_distill_loss(z, z, tau);
        ensure(l == 0.0, || format!("L_logit({z}, {z}, {tau}) = {l}"))?;
        let h = normal_vec(&mut rng, 32);
        let (lf, _) = e2s(feature_distill_loss(&h, &h))?;
        ensure(lf == 0.0, || format!("L_feat(h, h) = {lf}"))?;
    }

    let small = BackboneSpec::stride2(&[4, 4]);
    let train = toy_utterances(16, 1);
    let valid = toy_utterances(8, 2);
    let mut teacher = ExpertModel::build(ExpertConfig::for_band(11_025.0, 22_050.0, 3).with_backbone(small.clone()))
        .map_err(|e| e.to_string())?;
    let t_opts = TrainOptions { epochs: 2, batch_size: 4, ..TrainOptions::default() };
    let teacher_train = e2s(band_examples(&train, teacher.band()))?;
    e2s(train_expert_on(&mut teacher, &teacher_train, &[], &t_opts))?;

    let opts = TrainOptions {
        epochs: 3,
        batch_size: 4,
        loss: SupervisedLoss::Bce,
        shuffle_seed: 9,
        ..TrainOptions::default()
    };
    let student_cfg = ExpertConfig::fullband(7).with_backbone(small.clone());
    let mut plain = e2s(ExpertModel::build(student_cfg.clone()))?;
    let (plain_train, plain_valid) = (e2s(band_examples(&train, plain.band()))?, e2s(band_examples(&valid, plain.band()))?);
    let reference = e2s(train_expert_on(&mut plain, &plain_train, &plain_valid, &opts))?;
    let ensemble = e2s(TeacherEnsemble::single(teacher.clone()))?;
    let before = e2s(teacher.param_hash())?;
    let mut distilled = e2s(ExpertModel::build(student_cfg))?;
    let cfg = DistillConfig { alpha: 0.0, beta: 0.0, ..DistillConfig::default() };
    let report = e2s(distill_train(&mut distilled, &ensemble, &cfg, &train, &valid, &opts))?;
    let same_losses = report.loss_history.len() == reference.loss_history.len()
        && report.loss_history.iter().zip(&reference.loss_history).all(|(a, b)| a.to_bits() == b.to_bits());
    ensure(same_losses, || "(alpha, beta) = (0, 0) loss trajectory differs from supervised training".into())?;
    ensure(e2s(distilled.param_hash())? == e2s(plain.param_hash())?, || {
        "(alpha, beta) = (0, 0) final parameters differ from supervised training".into()
    })?;

    let mut active = e2s(ExpertModel::build(ExpertConfig::fullband(8).with_backbone(small.clone())))?;
    e2s(distill_train(&mut active, &ensemble, &DistillConfig::default(), &train, &valid, &opts))?;
    ensure(e2s(teacher.param_hash())? == before && report.teacher_hashes == vec![before.clone()], || {
        "teacher checkpoint changed during distillation".into()
    })?;
    let saved_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = saved_dir.path().join("teacher.sbck");
    e2s(teacher.save(&path))?;
    ensure(e2s(ExpertModel::load(&path))?.param_hash().map_err(|e| e.to_string())? == before, || {
        "reloaded teacher hash differs".into()
    })?;

    let t_low = e2s(ExpertModel::build(ExpertConfig::for_band(0.0, 11_025.0, 4).with_backbone(small.clone())))?;
    let dual = e2s(TeacherEnsemble::new(vec![t_low.clone(), teacher.clone()], vec![0.6, 0.4]))?;
    let mut worst: f64 = 0.0;
    for u in &valid {
        let got = e2s(dual.aggregate_fullband(&u.spectrogram))?;
        let a = e2s(t_low.forward(&e2s(u.example(t_low.band()))?.input))?;
        let b = e2s(teacher.forward(&e2s(u.example(teacher.band()))?.input))?;
        for (k, v) in got.h.iter().enumerate() {
            worst = worst.max((v - (0.6 * a.h[k] + 0.4 * b.h[k])).abs());
        }
        worst = worst.max((got.z - (0.6 * a.z + 0.4 * b.z)).abs());
        let direct = e2s(aggregate_outputs(&[a, b], &[0.6, 0.4]))?;
        ensure(direct == got, || "aggregate_outputs disagrees with the ensemble".into())?;
    }
    ensure(worst <= 1e-12, || format!("dual-teacher aggregate off the oracle by {worst:e}"))?;
    Ok(format!(
        "zero losses exact; {} steps bitwise equal; teacher hash stable; dual-teacher max err {worst:.1e}",
        reference.loss_history.len()
    ))
}

// ---------------------------------------------------------- criteria 6, 7, 8

const ARTIFACT_BAND: usize = 2;

struct Experiment {
    train: Vec<Utterance>,
    test: Vec<Utterance>,
    partition: Vec<(f64, f64)>,
    fullband: ExpertModel,
    experts: Vec<ExpertModel>,
    fullband_eer: f64,
    expert_eers: Vec<f64>,
    fullband_scores: ScoreSet,
    expert_scores: Vec<ScoreSet>,
    setup_time: Duration,
}

fn backbone() -> BackboneSpec {
    BackboneSpec::stride2(&[8, 16, 16, 16])
}

fn train_opts() -> TrainOptions {
    TrainOptions {
        epochs: 10,
        batch_size: 16,
        schedule: TrainSchedule { lr_max: 3e-3, ..TrainSchedule::default() },
        shuffle_seed: 42,
        ..TrainOptions::default()
    }
}

fn frontend() -> FrontEnd {
    FrontEnd { stft: StftConfig::new(512, 512).unwrap(), duration_secs: 4.0 }
}

fn run_experiment() -> Result<Experiment, String> {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = SynthConfig { seed: 42, split_fractions: (0.8, 0.0), ..SynthConfig::default() };
    let manifest: DatasetManifest = e2s(build_corpus(&cfg, dir.path()))?;
    let fe = frontend();
    let (train, skipped) = e2s(load_utterances(&manifest.split(Split::Train), &fe))?;
    let (test, skipped_test) = e2s(load_utterances(&manifest.split(Split::TestA), &fe))?;
    ensure(skipped.is_empty() && skipped_test.is_empty(), || "corpus clips were skipped".into())?;
    ensure(train.len() == 160 && test.len() == 40, || format!("split {} / {}", train.len(), test.len()))?;

    let fit = |config: ExpertConfig| -> Result<(ExpertModel, ScoreSet, f64), String> {
        let mut model = e2s(ExpertModel::build(config.with_backbone(backbone())))?;
        model.set_frontend(fe);
        let examples = e2s(band_examples(&train, model.band()))?;
        e2s(train_expert_on(&mut model, &examples, &[], &train_opts()))?;
        let scores = e2s(score_examples(&model, &e2s(band_examples(&test, model.band()))?))?;
        let eer = e2s(pooled_eer(&scores))?.eer;
        Ok((model, scores, eer))
    };
    let partition = e2s(band_boundaries(4, 22_050.0))?;
    let (fullband, fullband_scores, fullband_eer) = fit(ExpertConfig::fullband(42))?;
    let mut experts = Vec::new();
    let mut expert_scores = Vec::new();
    let mut expert_eers = Vec::new();
    for (m, &(lo, hi)) in partition.iter().enumerate() {
        let (model, scores, eer) = fit(ExpertConfig::for_band(lo, hi, 42 + m as u64 + 1))?;
        experts.push(model);
        expert_scores.push(scores);
        expert_eers.push(eer);
    }
    Ok(Experiment {
        train,
        test,
        partition,
        fullband,
        experts,
        fullband_eer,
        expert_eers,
        fullband_scores,
        expert_scores,
        setup_time: start.elapsed(),
    })
}

fn criterion_localization(exp: &Experiment) -> Outcome {
    let in_band = exp.expert_eers[ARTIFACT_BAND];
    let off: Vec<f64> = exp.expert_eers.iter().enumerate().filter(|(m, _)| *m != ARTIFACT_BAND).map(|(_, e)| *e).collect();
    let worst_off = off.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let detail = format!(
        "N=4 test EERs {:?}; fullband {:.4}; setup {:.1?}",
        exp.expert_eers.iter().map(|e| (e * 1e4).round() / 1e4).collect::<Vec<_>>(),
        exp.fullband_eer,
        exp.setup_time
    );
    ensure(in_band <= 0.5 * worst_off, || format!("in-band EER {in_band} > half of worst off-band {worst_off}; {detail}"))?;
    ensure(in_band <= exp.fullband_eer && exp.fullband_eer <= worst_off, || {
        format!("fullband EER outside [{in_band}, {worst_off}]; {detail}")
    })?;
    Ok(detail)
}

fn criterion_fusion_direction(exp: &Experiment) -> Outcome {
    let fused = e2s(aggregate_score_sets(&[exp.fullband_scores.clone(), exp.expert_scores[ARTIFACT_BAND].clone()]))?;
    let eer = e2s(pooled_eer(&fused))?.eer;
    ensure(eer <= exp.fullband_eer, || format!("fused EER {eer} > fullband {}", exp.fullband_eer))?;
    Ok(format!("aggregate(fullband, in-band) EER {eer:.4} <= fullband {:.4}", exp.fullband_eer))
}

fn mean_teacher_band_fraction(model: &ExpertModel, utts: &[Utterance], band: usize) -> Result<Vec<f64>, String> {
    utts.iter()
        .map(|u| {
            let map = e2s(gradcam(model, &u.spectrogram))?;
            let part = e2s(SubbandPartition::for_spectrogram(4, &u.spectrogram))?;
            Ok(e2s(band_energy_fraction(&map, &part))?[band])
        })
        .collect()
}

fn criterion_transfer(exp: &Experiment) -> Outcome {
    let teacher = exp.experts[ARTIFACT_BAND].clone();
    let ensemble = e2s(TeacherEnsemble::single(teacher))?;
    let mut student = e2s(ExpertModel::build(ExpertConfig::fullband(42).with_backbone(backbone())))?;
    student.set_frontend(frontend());
    let before = mean_teacher_band_fraction(&student, &exp.test, ARTIFACT_BAND)?;
    e2s(distill_train(&mut student, &ensemble, &DistillConfig::default(), &exp.train, &[], &train_opts()))?;
    let after = mean_teacher_band_fraction(&student, &exp.test, ARTIFACT_BAND)?;
    let supervised = mean_teacher_band_fraction(&exp.fullband, &exp.test, ARTIFACT_BAND)?;
    let up = before.iter().zip(&after).filter(|(b, a)| a > b).count();
    let share = up as f64 / before.len() as f64;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let detail = format!(
        "teacher-band fraction rose on {up}/{} clips; mean {:.3} -> {:.3} (supervised-only fullband {:.3}); band {:?}",
        before.len(),
        mean(&before),
        mean(&after),
        mean(&supervised),
        exp.partition[ARTIFACT_BAND]
    );
    ensure(share >= 0.7, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- criterion 9

fn criterion_formats() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name);
    let read = |path: &std::path::Path| std::fs::read(path).map_err(|e| e.to_string());

    let model = e2s(ExpertModel::build(ExpertConfig::for_band(0.0, 11_025.0, 5).with_backbone(backbone())))?;
    e2s(write_checkpoint(p("a.sbck"), model.params()))?;
    let store = e2s(read_checkpoint(p("a.sbck")))?;
    e2s(write_checkpoint(p("b.sbck"), &store))?;
    ensure(read(&p("a.sbck"))? == read(&p("b.sbck"))?, || "checkpoint bytes differ".into())?;
    ensure(e2s(encode_checkpoint(&e2s(decode_checkpoint(&read(&p("a.sbck"))?))?))? == read(&p("a.sbck"))?, || {
        "checkpoint encode/decode differs".into()
    })?;

    let corpus_cfg = SynthConfig { n_bonafide: 3, n_deepfake: 3, duration_secs: 0.1, ..SynthConfig::default() };
    let manifest = e2s(build_corpus(&corpus_cfg, p("corpus")))?;
    let m1 = read(&p("corpus/manifest.tsv"))?;
    e2s(e2s(DatasetManifest::read(p("corpus/manifest.tsv")))?.write(p("m2.tsv")))?;
    ensure(m1 == read(&p("m2.tsv"))?, || "manifest bytes differ".into())?;
    ensure(manifest.len() == 6, || "manifest row count".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let scores = e2s(ScoreSet::from_triples((0..50).map(|i| {
        let label = if i % 3 == 0 { Label::Deepfake } else { Label::Bonafide };
        (format!("utt{i:02}"), label, rng.random::<f64>() * 1e3 - 5e2)
    })))?;
    e2s(write_scores(p("s1.tsv"), &scores))?;
    let back = e2s(read_scores(p("s1.tsv")))?;
    e2s(write_scores(p("s2.tsv"), &back))?;
    ensure(read(&p("s1.tsv"))? == read(&p("s2.tsv"))? && back == scores, || "score file differs".into())?;

    let spec = random_spec(&mut rng);
    e2s(write_spectrogram_cache(p("c1.sbsp"), &spec))?;
    let cached = e2s(read_spectrogram_cache(p("c1.sbsp")))?;
    e2s(write_spectrogram_cache(p("c2.sbsp"), &cached))?;
    ensure(read(&p("c1.sbsp"))? == read(&p("c2.sbsp"))?, || "spectrogram cache bytes differ".into())?;
    ensure(encode_spectrogram(&e2s(decode_spectrogram(&encode_spectrogram(&spec)))?) == encode_spectrogram(&spec), || {
        "spectrogram encode/decode differs".into()
    })?;

    let cell = format_eer_cell(0.0158, Some((0.0126, 0.0194)));
    ensure(cell == "1.58 (1.26--1.94)", || format!("report cell {cell:?}"))?;
    Ok(format!("checkpoint, manifest, scores, spectrogram cache byte-identical; cell {cell:?}"))
}

fn main() -> ExitCode {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut gate = Gate { failures: 0, only };
    let mins = |m: u64| Duration::from_secs(60 * m);

    gate.run(1, "gradient fidelity", mins(2), criterion_gradients);
    gate.run(2, "partition identity", mins(1), criterion_partition);
    gate.run(3, "EER oracle equivalence", mins(1), criterion_eer);
    gate.run(4, "fusion identities", mins(1), criterion_fusion);
    gate.run(5, "distillation identities", mins(2), criterion_distill_identities);

    let wants = |id: usize| gate.only.is_empty() || gate.only.contains(&id);
    if wants(6) || wants(7) || wants(8) {
        match run_experiment() {
            Ok(exp) => {
                let setup = exp.setup_time;
                // Budgets include the shared corpus and expert training time.
                gate.run(6, "non-uniform artifact localization", mins(10).saturating_sub(setup), || {
                    criterion_localization(&exp)
                });
                gate.run(7, "knowledge-transfer shift", mins(10).saturating_sub(setup), || {
                    criterion_transfer(&exp)
                });
                gate.run(8, "fusion benefit direction", mins(10).saturating_sub(setup), || {
                    criterion_fusion_direction(&exp)
                });
            }
            Err(e) => {
                for (id, name) in [(6, "non-uniform artifact localization"), (7, "knowledge-transfer shift"), (8, "fusion benefit direction")] {
                    gate.run(id, name, mins(10), || Err(format!("experiment setup failed: {e}")));
                }
            }
        }
    }
    gate.run(9, "format round-trips", mins(1), criterion_formats);

    if gate.failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", gate.failures);
        ExitCode::FAILURE
    }
}
