//! Central finite differences against the analytic gradients of the engine
//! layers and of a whole expert model.
//!
//! `cargo run --example gradient_check`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subband::dsp::Spectrogram;
use subband::engine::{grad_check, Conv2d, LayerNorm, SupervisedLoss, Tensor};
use subband::expert::{BackboneSpec, ExpertConfig, ExpertModel};

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
}

fn main() -> subband::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let conv = Conv2d::new(2, 1)?;
    let w = random(&mut rng, &[3, 2, 3, 3]);
    let b = random(&mut rng, &[3]);
    let x = random(&mut rng, &[2, 7, 6]);
    let err = grad_check(
        |x| {
            let (y, cache) = conv.forward(x, &w, &b)?;
            let ones = Tensor::new(y.shape().to_vec(), vec![1.0; y.len()])?;
            Ok((y.data().iter().sum(), conv.backward(&cache, &w, &ones)?.input))
        },
        &x,
        1e-2,
    )?;
    println!("conv2d input gradient      max rel err {err:.2e}");

    let ln = LayerNorm::default();
    let gamma = random(&mut rng, &[2]);
    let beta = random(&mut rng, &[2]);
    let r = random(&mut rng, &[2, 7, 6]);
    let err = grad_check(
        |x| {
            let (y, cache) = ln.forward(x, &gamma, &beta)?;
            let v = y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
            Ok((v, ln.backward(&cache, &gamma, &r)?.input))
        },
        &x,
        1e-5,
    )?;
    println!("layernorm input gradient   max rel err {err:.2e}");

    // Whole model: focal loss of the logit with respect to the head weights.
    let model = ExpertModel::build(ExpertConfig::fullband(3).with_backbone(BackboneSpec::stride2(&[4, 4])))?;
    let values = (0..33 * 10).map(|_| rng.random::<f32>()).collect();
    let spec = Spectrogram::new(values, 33, 10, 0.0, 22_050.0, 44_100.0, 44_100.0 / 64.0)?;
    let loss = SupervisedLoss::default();
    let name = "proj.weight";
    let err = grad_check(
        |w| {
            let mut m = model.clone();
            *m.params_mut().get_mut(name)? = w.clone();
            let trace = m.forward_trace(&spec)?;
            let (l, dz) = loss.eval(trace.output.z, 1.0);
            let back = m.backward(&trace, dz, None)?;
            Ok((l, back.params.get(name).cloned().unwrap()))
        },
        model.params().get(name)?,
        1e-6,
    )?;
    println!("expert {name} gradient max rel err {err:.2e}");
    Ok(())
}
