//! Pooled EER with a percentile-bootstrap interval, rendered as a report table.
//!
//! `cargo run --example pooled_eer_bootstrap`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use subband::eval::{evaluate, report_table, Label, ScoreSet, DEFAULT_LEVEL, DEFAULT_N_BOOT};

/// Gaussian detector scores with deepfakes shifted up by `separation`.
fn scores(separation: f64, n: usize, seed: u64) -> subband::Result<ScoreSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    ScoreSet::from_triples((0..n).map(|i| {
        let (label, shift) = if i % 2 == 0 { (Label::Bonafide, 0.0) } else { (Label::Deepfake, separation) };
        (format!("utt{i:04}"), label, noise.sample(&mut rng) + shift)
    }))
}

fn main() -> subband::Result<()> {
    let mut rows = Vec::new();
    for (name, sep) in [("strong", 4.3), ("moderate", 2.9), ("chance", 0.0)] {
        let set = scores(sep, 400, 7)?;
        rows.push((name, evaluate(&set, DEFAULT_N_BOOT, DEFAULT_LEVEL, 42)?));
    }
    let report = report_table(&rows)?;
    print!("{}", report.to_text());
    println!();
    print!("{}", report.to_csv()?);
    Ok(())
}
