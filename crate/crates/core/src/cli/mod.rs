//! Command implementations behind the `subband` binary.
//!
//! Every command except `synth` and `eval` writes into a run directory with a
//! fixed layout:
//!
//! ```text
//! <run>/config.toml        resolved settings (file values, then flags)
//! <run>/provenance.toml    SHA-256 of every checkpoint and manifest involved
//! <run>/checkpoints/
//! <run>/scores/
//! <run>/reports/
//! <run>/overlays/
//! ```
//!
//! Settings come from an optional flat TOML file (`--config`); any flag given
//! on the command line wins over the file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::{band_energy_fraction, export_overlay, fractions_csv, gradcam, FractionRow};
use crate::distill::{distill_train, DistillConfig, DistillRunManifest, TeacherEnsemble};
use crate::dsp::{band_boundaries, StftConfig, SubbandPartition, NATIVE_SAMPLE_RATE};
use crate::engine::{FocalParams, Precision, SupervisedLoss, TrainSchedule};
use crate::error::{Error, Result};
use crate::eval::{evaluate, read_scores, report_table, write_scores, ScoreSet};
use crate::expert::{
    band_examples, load_utterances, score_examples, train_expert_on, BackboneSpec, DatasetManifest, ExpertConfig,
    ExpertModel, FrontEnd, SkipReport, Split, TrainOptions, Utterance, EMBED_DIM,
};
use crate::fusion::{
    aggregate_score_sets, fuse_scores, pool_features, train_fusion_head, FusionHead, FusionKind, MhsaConfig,
    PoolDescriptor,
};
use crate::synth::{build_corpus, SynthConfig};

/// Exit code when every output was written but some inputs were skipped.
pub const EXIT_PARTIAL: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "subband", version, about = "Fullband-subband singing-voice deepfake detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic corpus (audio/*.wav plus manifest.tsv).
    Synth(SynthArgs),
    /// Train one fullband or subband expert on the manifest's train split.
    TrainExpert(TrainExpertArgs),
    /// Score a split with a trained expert.
    Score(ScoreArgs),
    /// Fuse a pool of experts, or average existing score files.
    Fuse(FuseArgs),
    /// Distill one or two subband teachers into a fullband student.
    Distill(DistillArgs),
    /// Pooled EER with bootstrap intervals for one or more score files.
    Eval(EvalArgs),
    /// Grad-CAM overlays and per-band energy fractions.
    Gradcam(GradcamArgs),
}

/// Settings shared by the training and scoring commands. Each can be set in
/// the `--config` file under the same name (with underscores) or as a flag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Model initialization seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// STFT window length in samples.
    #[arg(long)]
    pub window_size: Option<usize>,
    /// STFT hop in samples.
    #[arg(long)]
    pub hop_size: Option<usize>,
    /// Clips are cropped or repeat-padded to this length.
    #[arg(long)]
    pub duration_secs: Option<f64>,
    /// Channels of each stride-2 backbone stage, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<usize>>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_max: Option<f64>,
    #[arg(long)]
    pub lr_min: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// `focal` or `bce`.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub focal_gamma: Option<f64>,
    #[arg(long)]
    pub focal_alpha: Option<f64>,
    /// `f64` or `f32`.
    #[arg(long)]
    pub precision: Option<String>,
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
    /// Distillation temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Weight of the logit distillation term.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight of the embedding distillation term.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub n_heads: Option<usize>,
    #[arg(long)]
    pub d_k: Option<usize>,
}

macro_rules! overlay_fields {
    ($base:ident, $over:ident; $($field:ident),*) => {
        RunConfig { $($field: $over.$field.clone().or_else(|| $base.$field.clone())),* }
    };
}

impl RunConfig {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Values of `over` where set, otherwise those of `self`.
    pub fn overlay(&self, over: &RunConfig) -> RunConfig {
        let base = self;
        overlay_fields!(base, over; seed, window_size, hop_size, duration_secs, channels, embed_dim, epochs,
            batch_size, lr_max, lr_min, weight_decay, loss, focal_gamma, focal_alpha, precision, shuffle_seed,
            tau, alpha, beta, n_heads, d_k)
    }

    /// File values (if any) overridden by flags.
    pub fn resolve(file: Option<&Path>, flags: &RunConfig) -> Result<RunConfig> {
        let base = match file {
            Some(p) => RunConfig::read(p)?,
            None => RunConfig::default(),
        };
        Ok(base.overlay(flags))
    }

    /// Every field filled in, unset ones from the library defaults.
    pub fn complete(&self) -> RunConfig {
        let fe = FrontEnd::default();
        let opts = TrainOptions::default();
        let focal = FocalParams::default();
        let d = DistillConfig::default();
        let m = MhsaConfig::default();
        let defaults = RunConfig {
            seed: Some(0),
            window_size: Some(fe.stft.window_size),
            hop_size: Some(fe.stft.hop_size),
            duration_secs: Some(fe.duration_secs),
            channels: Some(BackboneSpec::reference().stages.iter().map(|s| s.channels).collect()),
            embed_dim: Some(EMBED_DIM),
            epochs: Some(opts.epochs),
            batch_size: Some(opts.batch_size),
            lr_max: Some(opts.schedule.lr_max),
            lr_min: Some(opts.schedule.lr_min),
            weight_decay: Some(opts.schedule.weight_decay),
            loss: Some("focal".into()),
            focal_gamma: Some(focal.gamma),
            focal_alpha: Some(focal.alpha),
            precision: Some("f64".into()),
            shuffle_seed: Some(opts.shuffle_seed),
            tau: Some(d.tau),
            alpha: Some(d.alpha),
            beta: Some(d.beta),
            n_heads: Some(m.n_heads),
            d_k: Some(m.d_k),
        };
        defaults.overlay(self)
    }

    fn get<T: Clone>(v: &Option<T>, name: &str) -> Result<T> {
        v.clone().ok_or_else(|| Error::Config(format!("`{name}` is not set")))
    }

    pub fn frontend(&self) -> Result<FrontEnd> {
        let c = self.complete();
        let stft = StftConfig::new(Self::get(&c.window_size, "window_size")?, Self::get(&c.hop_size, "hop_size")?)?;
        let duration_secs = Self::get(&c.duration_secs, "duration_secs")?;
        if !(duration_secs > 0.0) {
            return Err(Error::Config(format!("duration_secs must be positive, got {duration_secs}")));
        }
        Ok(FrontEnd { stft, duration_secs })
    }

    pub fn expert_config(&self, band: (f64, f64)) -> Result<ExpertConfig> {
        let c = self.complete();
        let mut cfg = ExpertConfig::for_band(band.0, band.1, Self::get(&c.seed, "seed")?)
            .with_backbone(BackboneSpec::stride2(&Self::get(&c.channels, "channels")?));
        cfg.embed_dim = Self::get(&c.embed_dim, "embed_dim")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn supervised_loss(&self) -> Result<SupervisedLoss> {
        let c = self.complete();
        match Self::get(&c.loss, "loss")?.as_str() {
            "focal" => Ok(SupervisedLoss::Focal(FocalParams {
                gamma: Self::get(&c.focal_gamma, "focal_gamma")?,
                alpha: Self::get(&c.focal_alpha, "focal_alpha")?,
            })),
            "bce" => Ok(SupervisedLoss::Bce),
            other => Err(Error::Config(format!("loss must be `focal` or `bce`, got `{other}`"))),
        }
    }

    pub fn train_options(&self) -> Result<TrainOptions> {
        let c = self.complete();
        let precision = match Self::get(&c.precision, "precision")?.as_str() {
            "f64" => Precision::F64,
            "f32" => Precision::F32,
            other => return Err(Error::Config(format!("precision must be `f64` or `f32`, got `{other}`"))),
        };
        let opts = TrainOptions {
            epochs: Self::get(&c.epochs, "epochs")?,
            batch_size: Self::get(&c.batch_size, "batch_size")?,
            schedule: TrainSchedule {
                lr_max: Self::get(&c.lr_max, "lr_max")?,
                lr_min: Self::get(&c.lr_min, "lr_min")?,
                weight_decay: Self::get(&c.weight_decay, "weight_decay")?,
                ..TrainSchedule::default()
            },
            loss: self.supervised_loss()?,
            precision,
            shuffle_seed: Self::get(&c.shuffle_seed, "shuffle_seed")?,
        };
        if opts.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        opts.schedule.validate()?;
        Ok(opts)
    }

    pub fn distill_config(&self, teacher_weights: Vec<f64>) -> Result<DistillConfig> {
        let c = self.complete();
        let cfg = DistillConfig {
            tau: Self::get(&c.tau, "tau")?,
            alpha: Self::get(&c.alpha, "alpha")?,
            beta: Self::get(&c.beta, "beta")?,
            teacher_weights,
            supervised: self.supervised_loss()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn mhsa(&self) -> Result<MhsaConfig> {
        let c = self.complete();
        Ok(MhsaConfig { n_heads: Self::get(&c.n_heads, "n_heads")?, d_k: Self::get(&c.d_k, "d_k")? })
    }
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Flat TOML file with default settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory for checkpoints, scores, reports and overlays.
    #[arg(long)]
    pub run: PathBuf,
    #[command(flatten)]
    pub settings: RunConfig,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// TOML file with corpus settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output corpus directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_bonafide: Option<usize>,
    #[arg(long)]
    pub n_deepfake: Option<usize>,
    #[arg(long)]
    pub duration_secs: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainExpertArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Band as `lo:hi` in Hz, e.g. `0:11025`. Omit for the fullband expert.
    #[arg(long, conflicts_with_all = ["partition", "index"])]
    pub band: Option<String>,
    /// Number of uniform bands (1, 2, 4 or 8); use with `--index`.
    #[arg(long, requires = "index")]
    pub partition: Option<usize>,
    /// Zero-based band index within `--partition`.
    #[arg(long, requires = "partition")]
    pub index: Option<usize>,
    /// Checkpoint file name; derived from the band when omitted.
    #[arg(long)]
    pub name: Option<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// train, valid, testA or testB.
    #[arg(long, default_value = "testA")]
    pub split: String,
    /// Run directory; scores go to `<run>/scores/<checkpoint>_<split>.tsv`.
    #[arg(long)]
    pub run: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct FuseArgs {
    /// aggregate, concat or interact (defaults to the descriptor's kind).
    #[arg(long)]
    pub kind: Option<String>,
    /// Pool descriptor TOML; relative checkpoint paths resolve against its directory.
    #[arg(long, conflicts_with = "scores")]
    pub pool: Option<PathBuf>,
    #[arg(long, requires = "pool")]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "testA")]
    pub split: String,
    /// Score files to average (aggregation without a pool).
    #[arg(long, num_args = 1..)]
    pub scores: Vec<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct DistillArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Teacher checkpoint; repeat for two teachers.
    #[arg(long = "teacher", required = true, num_args = 1)]
    pub teachers: Vec<PathBuf>,
    /// Teacher weights, comma separated; equal weights when omitted.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Score files; each becomes one report row named after the file.
    #[arg(long, required = true, num_args = 1..)]
    pub scores: Vec<PathBuf>,
    /// Bootstrap resamples; 0 disables the interval.
    #[arg(long, default_value_t = crate::eval::DEFAULT_N_BOOT)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = crate::eval::DEFAULT_LEVEL)]
    pub level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write `<run>/reports/eer.csv`.
    #[arg(long)]
    pub run: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcamArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "testA")]
    pub split: String,
    /// Bands for the energy fractions and the dashed overlay lines.
    #[arg(long, default_value_t = 4)]
    pub partition: usize,
    /// Number of utterances (in id order) to explain.
    #[arg(long, default_value_t = 8)]
    pub limit: usize,
    #[arg(long)]
    pub run: PathBuf,
}

/// Fixed run-directory layout.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for sub in ["checkpoints", "scores", "reports", "overlays"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn scores(&self) -> PathBuf {
        self.root.join("scores")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn overlays(&self) -> PathBuf {
        self.root.join("overlays")
    }

    pub fn write_config<T: Serialize>(&self, value: &T) -> Result<()> {
        let text = toml::to_string(value).map_err(|e| Error::Parse(e.to_string()))?;
        write_text(self.root.join("config.toml"), &text)
    }

    /// Merges `entries` into `provenance.toml` (keys sorted).
    pub fn record_provenance(&self, entries: &[(String, String)]) -> Result<()> {
        let path = self.root.join("provenance.toml");
        let mut table: BTreeMap<String, String> = match fs::read_to_string(&path) {
            Ok(text) => toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?,
            Err(_) => BTreeMap::new(),
        };
        table.extend(entries.iter().cloned());
        let text = toml::to_string(&table).map_err(|e| Error::Parse(e.to_string()))?;
        write_text(path, &text)
    }

    fn write_skips(&self, command: &str, skips: &SkipReport) -> Result<()> {
        if !skips.is_empty() {
            write_text(self.reports().join(format!("skipped_{command}.tsv")), &skips.to_tsv())?;
        }
        Ok(())
    }
}

fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Parses `lo:hi` in Hz.
pub fn parse_band(text: &str) -> Result<(f64, f64)> {
    let (lo, hi) = text
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("band `{text}` must look like lo:hi")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("band edge `{s}` is not a number")))
    };
    let band = (parse(lo)?, parse(hi)?);
    if !(0.0 <= band.0 && band.0 < band.1) {
        return Err(Error::Config(format!("band `{text}` needs 0 <= lo < hi")));
    }
    Ok(band)
}

fn parse_split(text: &str) -> Result<Split> {
    match text {
        "train" => Ok(Split::Train),
        "valid" => Ok(Split::Valid),
        "testA" => Ok(Split::TestA),
        "testB" => Ok(Split::TestB),
        other => Err(Error::Config(format!("unknown split `{other}`"))),
    }
}

/// Band chosen by `--band`, by `--partition/--index`, or the full band.
pub fn resolve_band(band: Option<&str>, partition: Option<usize>, index: Option<usize>) -> Result<(f64, f64)> {
    let nyq = NATIVE_SAMPLE_RATE as f64 / 2.0;
    match (band, partition, index) {
        (Some(b), None, None) => parse_band(b),
        (None, Some(n), Some(i)) => {
            if ![1, 2, 4, 8].contains(&n) {
                return Err(Error::InvalidPartition(format!("number of bands must be one of 1, 2, 4, 8; got {n}")));
            }
            band_boundaries(n, nyq)?
                .get(i)
                .copied()
                .ok_or_else(|| Error::Config(format!("band index {i} out of range for {n} bands")))
        }
        (None, None, None) => Ok((0.0, nyq)),
        _ => Err(Error::Config("use either --band or --partition with --index".into())),
    }
}

/// `fullband` or `sb_<lo>_<hi>` with edges in Hz.
pub fn band_name(band: (f64, f64)) -> String {
    if band == (0.0, NATIVE_SAMPLE_RATE as f64 / 2.0) {
        "fullband".into()
    } else {
        format!("sb_{}_{}", band.0, band.1)
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "scores".into(), |s| s.to_string_lossy().into_owned())
}

fn warn_rates(utts: &[Utterance]) {
    let odd = utts
        .iter()
        .filter(|u| u.spectrogram.sample_rate() != NATIVE_SAMPLE_RATE as f64)
        .count();
    if odd > 0 {
        eprintln!("warning: {odd} clip(s) are not at {NATIVE_SAMPLE_RATE} Hz; bands are taken relative to their own Nyquist");
    }
}

fn load_split(manifest: &DatasetManifest, split: Split, fe: &FrontEnd) -> Result<(Vec<Utterance>, SkipReport)> {
    let (utts, skips) = load_utterances(&manifest.split(split), fe)?;
    warn_rates(&utts);
    Ok((utts, skips))
}

fn loss_history_tsv(history: &[f64]) -> String {
    let mut out = String::from("step\tloss\n");
    for (i, l) in history.iter().enumerate() {
        out.push_str(&format!("{}\t{}\n", i + 1, crate::eval::format_score(*l)));
    }
    out
}

/// Outcome of a command: whether any inputs were skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Complete,
    Partial,
}

fn status(skips: &SkipReport) -> Status {
    if skips.is_empty() {
        Status::Complete
    } else {
        for (id, reason) in &skips.skipped {
            eprintln!("skipped {id}: {reason}");
        }
        Status::Partial
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Status> {
    let mut cfg: SynthConfig = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::file(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SynthConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.n_bonafide {
        cfg.n_bonafide = n;
    }
    if let Some(n) = args.n_deepfake {
        cfg.n_deepfake = n;
    }
    if let Some(d) = args.duration_secs {
        cfg.duration_secs = d;
    }
    let manifest = build_corpus(&cfg, &args.out)?;
    let text = toml::to_string(&cfg).map_err(|e| Error::Parse(e.to_string()))?;
    write_text(args.out.join("synth_config.toml"), &text)?;
    println!("{} clips, manifest sha256 {}", manifest.len(), manifest.hash()?);
    Ok(Status::Complete)
}

pub fn cmd_train_expert(args: &TrainExpertArgs) -> Result<Status> {
    let settings = RunConfig::resolve(args.common.config.as_deref(), &args.common.settings)?;
    let band = resolve_band(args.band.as_deref(), args.partition, args.index)?;
    let fe = settings.frontend()?;
    let opts = settings.train_options()?;
    let mut model = ExpertModel::build(settings.expert_config(band)?)?;
    model.set_frontend(fe);

    let manifest = DatasetManifest::read(&args.manifest)?;
    let run = RunDir::create(&args.common.run)?;
    run.write_config(&settings.complete())?;
    let (train, mut skips) = load_split(&manifest, Split::Train, &fe)?;
    let (valid, valid_skips) = load_split(&manifest, Split::Valid, &fe)?;
    skips.skipped.extend(valid_skips.skipped);
    let report = train_expert_on(&mut model, &band_examples(&train, band)?, &band_examples(&valid, band)?, &opts)?;

    let name = args.name.clone().unwrap_or_else(|| band_name(band));
    let ckpt = run.checkpoints().join(format!("{name}.sbck"));
    model.save(&ckpt)?;
    write_text(run.reports().join(format!("train_{name}.tsv")), &loss_history_tsv(&report.loss_history))?;
    run.write_skips("train_expert", &skips)?;
    run.record_provenance(&[
        (format!("checkpoint.{name}"), model.param_hash()?),
        ("manifest".into(), manifest.hash()?),
    ])?;
    match report.valid_eer {
        Some(eer) => println!("{}: {} steps, valid EER {:.2}%", ckpt.display(), report.steps, eer * 100.0),
        None => println!("{}: {} steps", ckpt.display(), report.steps),
    }
    Ok(status(&skips))
}

pub fn cmd_score(args: &ScoreArgs) -> Result<Status> {
    let model = ExpertModel::load(&args.checkpoint)?;
    let manifest = DatasetManifest::read(&args.manifest)?;
    let split = parse_split(&args.split)?;
    let run = RunDir::create(&args.run)?;
    let (utts, skips) = load_split(&manifest, split, model.frontend())?;
    let scores = score_examples(&model, &band_examples(&utts, model.band())?)?;
    let out = run.scores().join(format!("{}_{}.tsv", stem(&args.checkpoint), args.split));
    write_scores(&out, &scores)?;
    run.write_skips("score", &skips)?;
    run.record_provenance(&[
        (format!("checkpoint.{}", stem(&args.checkpoint)), model.param_hash()?),
        ("manifest".into(), manifest.hash()?),
    ])?;
    println!("{} scores -> {}", scores.len(), out.display());
    Ok(status(&skips))
}

pub fn cmd_fuse(args: &FuseArgs) -> Result<Status> {
    let settings = RunConfig::resolve(args.common.config.as_deref(), &args.common.settings)?;
    let run = RunDir::create(&args.common.run)?;
    run.write_config(&settings.complete())?;

    if !args.scores.is_empty() {
        let kind = match &args.kind {
            Some(k) => k.parse()?,
            None => FusionKind::Aggregation,
        };
        if kind != FusionKind::Aggregation {
            return Err(Error::Config("score files can only be fused by aggregation".into()));
        }
        let sets = args.scores.iter().map(read_scores).collect::<Result<Vec<_>>>()?;
        let fused = aggregate_score_sets(&sets)?;
        let out = run.scores().join("fused_aggregation.tsv");
        write_scores(&out, &fused)?;
        let mut prov = Vec::new();
        for p in &args.scores {
            prov.push((format!("scores.{}", stem(p)), file_sha256(p)?));
        }
        run.record_provenance(&prov)?;
        println!("{} fused scores -> {}", fused.len(), out.display());
        return Ok(Status::Complete);
    }

    let pool_path = args
        .pool
        .as_ref()
        .ok_or_else(|| Error::Config("give either --scores or --pool with --manifest".into()))?;
    let manifest_path = args
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("--pool needs --manifest".into()))?;
    let descriptor = PoolDescriptor::read(pool_path)?;
    let kind = match &args.kind {
        Some(k) => k.parse()?,
        None => descriptor.kind,
    };
    let pool = descriptor.load_pool(pool_path.parent())?;
    let fe = *pool.members()[0].frontend();
    if pool.members().iter().any(|m| *m.frontend() != fe) {
        return Err(Error::PoolMismatch("members were trained with different front ends".into()));
    }
    let manifest = DatasetManifest::read(manifest_path)?;
    let split = parse_split(&args.split)?;
    let (eval_utts, mut skips) = load_split(&manifest, split, &fe)?;

    let seed = settings.complete().seed.unwrap_or(0);
    let mut head = match kind {
        FusionKind::Aggregation => FusionHead::aggregation(),
        FusionKind::Concatenation => FusionHead::concatenation(pool.len(), pool.embed_dim(), seed)?,
        FusionKind::Interaction => FusionHead::interaction(pool.embed_dim(), settings.mhsa()?, seed)?,
    };
    let mut prov = vec![("pool".to_string(), descriptor.hash()?), ("manifest".to_string(), manifest.hash()?)];
    for (m, h) in pool.members().iter().zip(pool.param_hashes()?) {
        prov.push((format!("checkpoint.{}", band_name(m.band())), h));
    }
    if kind != FusionKind::Aggregation {
        let (train_utts, train_skips) = load_split(&manifest, Split::Train, &fe)?;
        skips.skipped.extend(train_skips.skipped);
        let train = pool_features(&pool, &train_utts)?;
        let history = train_fusion_head(&mut head, &pool, &train, &settings.train_options()?)?;
        let ckpt = run.checkpoints().join(format!("fusion_{}.sbck", kind.as_str()));
        head.save(&ckpt)?;
        write_text(run.reports().join(format!("train_fusion_{}.tsv", kind.as_str())), &loss_history_tsv(&history))?;
        prov.push((format!("checkpoint.fusion_{}", kind.as_str()), file_sha256(&ckpt)?));
    }
    let fused = fuse_scores(&head, &pool_features(&pool, &eval_utts)?)?;
    let out = run.scores().join(format!("fused_{}_{}.tsv", kind.as_str(), args.split));
    write_scores(&out, &fused)?;
    run.write_skips("fuse", &skips)?;
    run.record_provenance(&prov)?;
    println!("{} fused scores -> {}", fused.len(), out.display());
    Ok(status(&skips))
}

pub fn cmd_distill(args: &DistillArgs) -> Result<Status> {
    let settings = RunConfig::resolve(args.common.config.as_deref(), &args.common.settings)?;
    let teachers = args.teachers.iter().map(ExpertModel::load).collect::<Result<Vec<_>>>()?;
    let weights = args
        .weights
        .clone()
        .unwrap_or_else(|| vec![1.0 / teachers.len() as f64; teachers.len()]);
    // The student sees the same spectrogram as its teachers unless told otherwise.
    let teacher_fe = *teachers[0].frontend();
    let fe_settings = RunConfig {
        window_size: Some(teacher_fe.stft.window_size),
        hop_size: Some(teacher_fe.stft.hop_size),
        duration_secs: Some(teacher_fe.duration_secs),
        ..RunConfig::default()
    }
    .overlay(&settings);
    let fe = fe_settings.frontend()?;
    if teachers.iter().any(|t| *t.frontend() != fe) {
        return Err(Error::Config("teachers and student must share one front end".into()));
    }
    let cfg = fe_settings.distill_config(weights.clone())?;
    let opts = fe_settings.train_options()?;
    let ensemble = TeacherEnsemble::new(teachers, weights)?;
    let mut student = ExpertModel::build(fe_settings.expert_config((0.0, NATIVE_SAMPLE_RATE as f64 / 2.0))?)?;
    student.set_frontend(fe);

    let manifest = DatasetManifest::read(&args.manifest)?;
    let run = RunDir::create(&args.common.run)?;
    run.write_config(&fe_settings.complete())?;
    let (train, mut skips) = load_split(&manifest, Split::Train, &fe)?;
    let (valid, valid_skips) = load_split(&manifest, Split::Valid, &fe)?;
    skips.skipped.extend(valid_skips.skipped);
    let report = distill_train(&mut student, &ensemble, &cfg, &train, &valid, &opts)?;

    let ckpt = run.checkpoints().join("student_distilled.sbck");
    student.save(&ckpt)?;
    DistillRunManifest::new(&cfg, &ensemble, &student, &opts)?.write(run.reports().join("distill_manifest.toml"))?;
    write_text(run.reports().join("train_distill.tsv"), &loss_history_tsv(&report.loss_history))?;
    run.write_skips("distill", &skips)?;
    let mut prov = vec![
        ("checkpoint.student_distilled".to_string(), student.param_hash()?),
        ("manifest".to_string(), manifest.hash()?),
    ];
    for (i, h) in report.teacher_hashes.iter().enumerate() {
        prov.push((format!("teacher.{i}"), h.clone()));
    }
    run.record_provenance(&prov)?;
    match report.valid_eer {
        Some(eer) => println!("{}: valid EER {:.2}%", ckpt.display(), eer * 100.0),
        None => println!("{}", ckpt.display()),
    }
    Ok(status(&skips))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<Status> {
    let mut results = Vec::new();
    for path in &args.scores {
        let scores: ScoreSet = read_scores(path)?;
        results.push((stem(path), evaluate(&scores, args.bootstrap, args.level, args.seed)?));
    }
    let report = report_table(&results)?;
    print!("{}", report.to_text());
    if let Some(run) = &args.run {
        let run = RunDir::create(run)?;
        write_text(run.reports().join("eer.csv"), &report.to_csv()?)?;
    }
    Ok(Status::Complete)
}

pub fn cmd_gradcam(args: &GradcamArgs) -> Result<Status> {
    let model = ExpertModel::load(&args.checkpoint)?;
    let manifest = DatasetManifest::read(&args.manifest)?;
    let split = parse_split(&args.split)?;
    let mut subset = manifest.split(split);
    subset.rows.sort_by(|a, b| a.id.cmp(&b.id));
    subset.rows.truncate(args.limit);
    let run = RunDir::create(&args.run)?;
    let (utts, skips) = load_utterances(&subset, model.frontend())?;
    warn_rates(&utts);
    let name = stem(&args.checkpoint);
    let mut rows = Vec::new();
    for u in &utts {
        let input = crate::dsp::slice_band(&u.spectrogram, model.band().0, model.band().1)?;
        let map = gradcam(&model, &input)?;
        let part = SubbandPartition::new(args.partition, input.freq_bins(), input.nyquist_hz());
        // Band lines and fractions only make sense on the full axis.
        let part = if model.role() == crate::expert::ExpertRole::Fullband { Some(part?) } else { None };
        export_overlay(&map, &input, part.as_ref(), run.overlays().join(format!("{name}_{}.png", u.id)))?;
        if let Some(p) = &part {
            rows.push(FractionRow { id: u.id.clone(), model: name.clone(), fractions: band_energy_fraction(&map, p)? });
        }
    }
    if !rows.is_empty() {
        write_text(run.reports().join(format!("gradcam_fractions_{name}.csv")), &fractions_csv(&rows)?)?;
    }
    run.write_skips("gradcam", &skips)?;
    run.record_provenance(&[(format!("checkpoint.{name}"), model.param_hash()?)])?;
    println!("{} overlays -> {}", utts.len(), run.overlays().display());
    Ok(status(&skips))
}

pub fn run(cli: &Cli) -> Result<Status> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::TrainExpert(a) => cmd_train_expert(a),
        Command::Score(a) => cmd_score(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Distill(a) => cmd_distill(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcam(a) => cmd_gradcam(a),
    }
}

/// Parses the process arguments and runs the command: exit 0 on success,
/// 2 when inputs were skipped, 1 on error.
pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Status::Complete) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(EXIT_PARTIAL),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
