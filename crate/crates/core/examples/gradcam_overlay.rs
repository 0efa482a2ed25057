//! Grad-CAM of a trained fullband expert, exported as a PNG overlay with the
//! N=4 band edges marked.
//!
//! `cargo run --example gradcam_overlay -- [out.png]`

use subband::attribution::{band_energy_fraction, export_overlay, gradcam};
use subband::dsp::{StftConfig, SubbandPartition};
use subband::eval::Label;
use subband::expert::{
    band_examples, load_utterances, train_expert_on, BackboneSpec, ExpertConfig, ExpertModel, FrontEnd, Split,
    TrainOptions,
};
use subband::synth::{build_corpus, SynthConfig};

fn main() -> subband::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("subband_gradcam.png"), Into::into);
    let dir = std::env::temp_dir().join("subband_gradcam");
    let cfg = SynthConfig { n_bonafide: 24, n_deepfake: 24, duration_secs: 2.0, split_fractions: (0.75, 0.0), ..SynthConfig::default() };
    let manifest = build_corpus(&cfg, &dir)?;
    let fe = FrontEnd { stft: StftConfig::new(512, 256)?, duration_secs: 2.0 };
    let (train, _) = load_utterances(&manifest.split(Split::Train), &fe)?;
    let (test, _) = load_utterances(&manifest.split(Split::TestA), &fe)?;

    let mut model = ExpertModel::build(ExpertConfig::fullband(0).with_backbone(BackboneSpec::stride2(&[8, 16, 16])))?;
    let opts = TrainOptions { epochs: 8, batch_size: 8, ..TrainOptions::default() };
    let examples = band_examples(&train, model.band())?;
    train_expert_on(&mut model, &examples, &[], &opts)?;

    let clip = test.iter().find(|u| u.label == Label::Deepfake).expect("test split has deepfakes");
    let map = gradcam(&model, &clip.spectrogram)?;
    let part = SubbandPartition::for_spectrogram(4, &clip.spectrogram)?;
    export_overlay(&map, &clip.spectrogram, Some(&part), &out)?;
    println!("{} -> {}", clip.id, out.display());
    for ((lo, hi), f) in part.boundaries().iter().zip(band_energy_fraction(&map, &part)?) {
        println!("  [{lo:>8.1}, {hi:>8.1}] Hz  {:.3}", f);
    }
    Ok(())
}
