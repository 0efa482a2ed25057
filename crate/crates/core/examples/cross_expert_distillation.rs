//! Distills the artifact-band subband expert into a fullband student and
//! shows where the student's Grad-CAM mass sits before and after.
//!
//! `cargo run --example cross_expert_distillation`

use subband::attribution::{band_energy_fraction, gradcam};
use subband::distill::{distill_train, DistillConfig, TeacherEnsemble};
use subband::dsp::{StftConfig, SubbandPartition};
use subband::eval::pooled_eer;
use subband::expert::{
    band_examples, load_utterances, score_examples, train_expert_on, BackboneSpec, ExpertConfig, ExpertModel, FrontEnd,
    Split, TrainOptions, Utterance,
};
use subband::synth::{build_corpus, SynthConfig};

fn mean_fractions(model: &ExpertModel, utts: &[Utterance]) -> subband::Result<Vec<f64>> {
    let mut acc = vec![0.0; 4];
    for u in utts {
        let map = gradcam(model, &u.spectrogram)?;
        let part = SubbandPartition::for_spectrogram(4, &u.spectrogram)?;
        for (a, f) in acc.iter_mut().zip(band_energy_fraction(&map, &part)?) {
            *a += f / utts.len() as f64;
        }
    }
    Ok(acc)
}

fn main() -> subband::Result<()> {
    let dir = std::env::temp_dir().join("subband_distill");
    let cfg = SynthConfig { n_bonafide: 40, n_deepfake: 40, duration_secs: 2.0, split_fractions: (0.7, 0.0), ..SynthConfig::default() };
    let manifest = build_corpus(&cfg, &dir)?;
    let fe = FrontEnd { stft: StftConfig::new(512, 512)?, duration_secs: 2.0 };
    let (train, _) = load_utterances(&manifest.split(Split::Train), &fe)?;
    let (test, _) = load_utterances(&manifest.split(Split::TestA), &fe)?;
    let backbone = BackboneSpec::stride2(&[8, 16, 16]);
    let opts = TrainOptions { epochs: 8, batch_size: 8, ..TrainOptions::default() };

    let band = cfg.artifact.band;
    let mut teacher = ExpertModel::build(ExpertConfig::for_band(band.0, band.1, 1).with_backbone(backbone.clone()))?;
    train_expert_on(&mut teacher, &band_examples(&train, band)?, &[], &opts)?;
    let teacher_eer = pooled_eer(&score_examples(&teacher, &band_examples(&test, band)?)?)?.eer;
    println!("teacher [{}, {}] Hz test EER {:.2}%", band.0, band.1, teacher_eer * 100.0);

    let mut student = ExpertModel::build(ExpertConfig::fullband(2).with_backbone(backbone))?;
    let before = mean_fractions(&student, &test)?;
    let ensemble = TeacherEnsemble::single(teacher)?;
    let report = distill_train(&mut student, &ensemble, &DistillConfig::default(), &train, &test, &opts)?;
    let after = mean_fractions(&student, &test)?;
    println!("student test EER {:.2}%", report.valid_eer.unwrap_or(f64::NAN) * 100.0);
    println!("teacher hash unchanged: {}", ensemble.param_hashes()? == report.teacher_hashes);
    println!("mean Grad-CAM fraction per N=4 band (before -> after):");
    for (m, (b, a)) in before.iter().zip(&after).enumerate() {
        println!("  band {m}: {b:.3} -> {a:.3}");
    }
    Ok(())
}
