//! Aggregation, concatenation and interaction fusion over a pool of one
//! fullband and two subband experts.
//!
//! `cargo run --example fusion_strategies`

use subband::dsp::StftConfig;
use subband::eval::pooled_eer;
use subband::expert::{
    band_examples, load_utterances, train_expert_on, BackboneSpec, ExpertConfig, ExpertModel, FrontEnd, Split,
    TrainOptions,
};
use subband::fusion::{fuse_scores, pool_features, train_fusion_head, FusionHead, FusionKind, MhsaConfig, SelectedPool};
use subband::synth::{build_corpus, SynthConfig};

fn main() -> subband::Result<()> {
    let dir = std::env::temp_dir().join("subband_fusion");
    let cfg = SynthConfig { n_bonafide: 30, n_deepfake: 30, duration_secs: 2.0, split_fractions: (0.7, 0.0), ..SynthConfig::default() };
    let manifest = build_corpus(&cfg, &dir)?;
    let fe = FrontEnd { stft: StftConfig::new(512, 512)?, duration_secs: 2.0 };
    let (train, _) = load_utterances(&manifest.split(Split::Train), &fe)?;
    let (test, _) = load_utterances(&manifest.split(Split::TestA), &fe)?;

    let opts = TrainOptions { epochs: 6, batch_size: 8, ..TrainOptions::default() };
    let mut members = Vec::new();
    for (seed, band) in [(0.0, 22_050.0), (0.0, 11_025.0), (11_025.0, 22_050.0)].into_iter().enumerate() {
        let config = ExpertConfig::for_band(band.0, band.1, seed as u64).with_backbone(BackboneSpec::stride2(&[8, 16, 16]));
        let mut m = ExpertModel::build(config)?;
        m.set_frontend(fe);
        train_expert_on(&mut m, &band_examples(&train, band)?, &[], &opts)?;
        members.push(m);
    }
    // Members are frozen from here on; only the heads train.
    let pool = SelectedPool::new(members)?;
    println!("pool bands {:?} (K = {} subband experts)", pool.bands(), pool.k());
    let train_feats = pool_features(&pool, &train)?;
    let test_feats = pool_features(&pool, &test)?;

    let head_opts = TrainOptions { epochs: 30, batch_size: 8, ..TrainOptions::default() };
    for kind in [FusionKind::Aggregation, FusionKind::Concatenation, FusionKind::Interaction] {
        let mut head = match kind {
            FusionKind::Aggregation => FusionHead::aggregation(),
            FusionKind::Concatenation => FusionHead::concatenation(pool.len(), pool.embed_dim(), 1)?,
            FusionKind::Interaction => FusionHead::interaction(pool.embed_dim(), MhsaConfig::default(), 1)?,
        };
        if kind != FusionKind::Aggregation {
            train_fusion_head(&mut head, &pool, &train_feats, &head_opts)?;
        }
        let eer = pooled_eer(&fuse_scores(&head, &test_feats)?)?.eer;
        println!("{:<14} test EER {:>6.2}%", kind.as_str(), eer * 100.0);
    }

    let interact = FusionHead::interaction(pool.embed_dim(), MhsaConfig::default(), 1)?;
    let trace = interact.interaction_trace(&test_feats[0].outputs)?;
    println!("head-0 attention for {} (rows: queries fullband, low, high):", test_feats[0].id);
    for row in trace.attention[0].chunks(pool.len()) {
        println!("  {}", row.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join("  "));
    }
    Ok(())
}
