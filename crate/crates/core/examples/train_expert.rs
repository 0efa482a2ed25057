//! Trains the fullband expert and the four N=4 subband experts on a small
//! synthetic corpus and compares their test EERs.
//!
//! The deepfakes differ from their bonafide sources only inside
//! 11.025-16.5375 kHz, so only the expert covering that band (and the
//! fullband model, which sees it too) should separate them.
//!
//! `cargo run --example train_expert`

use subband::dsp::{band_boundaries, StftConfig};
use subband::eval::pooled_eer;
use subband::expert::{
    band_examples, load_utterances, score_examples, train_expert_on, BackboneSpec, ExpertConfig, ExpertModel, FrontEnd,
    Split, TrainOptions,
};
use subband::synth::{build_corpus, SynthConfig};

fn main() -> subband::Result<()> {
    let dir = std::env::temp_dir().join("subband_train_expert");
    let cfg = SynthConfig { n_bonafide: 40, n_deepfake: 40, duration_secs: 2.0, split_fractions: (0.7, 0.0), ..SynthConfig::default() };
    let manifest = build_corpus(&cfg, &dir)?;
    let fe = FrontEnd { stft: StftConfig::new(512, 512)?, duration_secs: 2.0 };
    let (train, _) = load_utterances(&manifest.split(Split::Train), &fe)?;
    let (test, _) = load_utterances(&manifest.split(Split::TestA), &fe)?;
    println!("{} train / {} test utterances", train.len(), test.len());

    let opts = TrainOptions { epochs: 8, batch_size: 8, ..TrainOptions::default() };
    let mut bands = vec![(0.0, 22_050.0)];
    bands.extend(band_boundaries(4, 22_050.0)?);
    for (i, band) in bands.into_iter().enumerate() {
        let config = ExpertConfig::for_band(band.0, band.1, i as u64).with_backbone(BackboneSpec::stride2(&[8, 16, 16]));
        let mut model = ExpertModel::build(config)?;
        model.set_frontend(fe);
        let report = train_expert_on(&mut model, &band_examples(&train, band)?, &[], &opts)?;
        let scores = score_examples(&model, &band_examples(&test, band)?)?;
        println!(
            "[{:>7.1}, {:>7.1}] Hz  loss {:.4} -> {:.4}  test EER {:>6.2}%",
            band.0,
            band.1,
            report.loss_history[0],
            report.loss_history.last().unwrap(),
            pooled_eer(&scores)?.eer * 100.0
        );
        model.save(dir.join(format!("expert_{i}.sbck")))?;
    }
    println!("checkpoints in {}", dir.display());
    Ok(())
}
