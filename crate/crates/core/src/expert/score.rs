use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::DatasetManifest;
use super::model::ExpertModel;
use crate::dsp::{load_wav, logpower_spectrogram, slice_band, standardize_duration, AudioClip, Spectrogram, StftConfig};
use crate::error::{Error, Result};
use crate::eval::{Label, ScoreEntry, ScoreSet};

/// Duration standardization followed by the log-power STFT.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontEnd {
    pub stft: StftConfig,
    pub duration_secs: f64,
}

impl Default for FrontEnd {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            duration_secs: 4.0,
        }
    }
}

impl FrontEnd {
    pub fn spectrogram(&self, clip: &AudioClip) -> Result<Spectrogram> {
        logpower_spectrogram(&standardize_duration(clip, self.duration_secs)?, &self.stft)
    }
}

/// A labelled model input.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub label: Label,
    pub input: Spectrogram,
}

/// A labelled fullband spectrogram, from which band slices are cut per expert.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub label: Label,
    pub spectrogram: Spectrogram,
}

impl Utterance {
    pub fn example(&self, band: (f64, f64)) -> Result<Example> {
        Ok(Example {
            id: self.id.clone(),
            label: self.label,
            input: slice_band(&self.spectrogram, band.0, band.1)?,
        })
    }
}

pub fn band_examples(utterances: &[Utterance], band: (f64, f64)) -> Result<Vec<Example>> {
    utterances.iter().map(|u| u.example(band)).collect()
}

/// Utterances that could not be read, with the reason.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SkipReport {
    pub skipped: Vec<(String, String)>,
}

impl SkipReport {
    pub fn is_empty(&self) -> bool {
        self.skipped.is_empty()
    }

    pub fn len(&self) -> usize {
        self.skipped.len()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\treason\n");
        for (id, reason) in &self.skipped {
            out.push_str(&format!("{id}\t{}\n", reason.replace(['\t', '\n'], " ")));
        }
        out
    }
}

/// Loads every row's audio through the front end, in manifest order.
pub fn load_utterances(manifest: &DatasetManifest, frontend: &FrontEnd) -> Result<(Vec<Utterance>, SkipReport)> {
    manifest.ensure_unique_ids()?;
    let loaded: Vec<Result<Utterance>> = manifest
        .rows
        .par_iter()
        .map(|row| {
            let clip = load_wav(manifest.resolve(row))?;
            Ok(Utterance {
                id: row.id.clone(),
                label: row.label,
                spectrogram: frontend.spectrogram(&clip)?,
            })
        })
        .collect();
    let mut utterances = Vec::with_capacity(loaded.len());
    let mut report = SkipReport::default();
    for (row, r) in manifest.rows.iter().zip(loaded) {
        match r {
            Ok(u) => utterances.push(u),
            Err(e) => report.skipped.push((row.id.clone(), e.to_string())),
        }
    }
    Ok((utterances, report))
}

/// Scores pre-sliced examples. Output entries are ordered by id.
pub fn score_examples(model: &ExpertModel, examples: &[Example]) -> Result<ScoreSet> {
    let logits: Vec<Result<f64>> = examples.par_iter().map(|e| model.forward(&e.input).map(|o| o.z)).collect();
    let mut entries = Vec::with_capacity(examples.len());
    for (e, z) in examples.iter().zip(logits) {
        entries.push(ScoreEntry {
            id: e.id.clone(),
            label: e.label,
            score: z?,
        });
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    ScoreSet::new(entries)
}

/// Load, standardize, transform, slice and forward every utterance; the score is the logit.
pub fn score_dataset(model: &ExpertModel, manifest: &DatasetManifest) -> Result<(ScoreSet, SkipReport)> {
    let (utterances, mut report) = load_utterances(manifest, model.frontend())?;
    let mut examples = Vec::with_capacity(utterances.len());
    for u in &utterances {
        match u.example(model.band()) {
            Ok(e) => examples.push(e),
            Err(err @ Error::ShapeMismatch(_)) => report.skipped.push((u.id.clone(), err.to_string())),
            Err(err) => return Err(err),
        }
    }
    Ok((score_examples(model, &examples)?, report))
}
