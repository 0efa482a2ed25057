//! Generates the synthetic corpus and prints its split/label counts.
//!
//! `cargo run --example synth_corpus -- [out_dir]`

use subband::eval::Label;
use subband::expert::Split;
use subband::synth::{build_corpus, SynthConfig, TestBSpec};

fn main() -> subband::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("subband_corpus"), Into::into);
    let cfg = SynthConfig {
        n_bonafide: 20,
        n_deepfake: 20,
        duration_secs: 2.0,
        test_b: Some(TestBSpec { per_class: 5, f0_range: (600.0, 900.0) }),
        ..SynthConfig::default()
    };
    let manifest = build_corpus(&cfg, &out)?;
    println!("corpus at {}", out.display());
    println!("artifact {:?} in {:?} Hz", cfg.artifact.kind, cfg.artifact.band);
    for split in [Split::Train, Split::Valid, Split::TestA, Split::TestB] {
        let part = manifest.split(split);
        println!(
            "{:<6} bonafide {:>3}  deepfake {:>3}",
            split.as_str(),
            part.count(Label::Bonafide),
            part.count(Label::Deepfake)
        );
    }
    println!("manifest sha256 {}", manifest.hash()?);
    Ok(())
}
