use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground-truth class. Deepfake is the positive class: larger scores mean "more likely fake".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bonafide,
    Deepfake,
}

impl Label {
    /// 1.0 for deepfake, 0.0 for bonafide.
    pub fn target(self) -> f64 {
        match self {
            Label::Bonafide => 0.0,
            Label::Deepfake => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Bonafide => "bonafide",
            Label::Deepfake => "deepfake",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bonafide" => Ok(Label::Bonafide),
            "deepfake" => Ok(Label::Deepfake),
            other => Err(Error::Parse(format!("unknown label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEntry {
    pub id: String,
    pub label: Label,
    pub score: f64,
}

/// Detection scores keyed by unique utterance id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    entries: Vec<ScoreEntry>,
}

impl ScoreSet {
    pub fn new(entries: Vec<ScoreEntry>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !e.score.is_finite() {
                return Err(Error::Numeric(format!("score of `{}`", e.id)));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(Error::DuplicateId(e.id.clone()));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_triples<I, S>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Label, f64)>,
        S: Into<String>,
    {
        Self::new(
            items
                .into_iter()
                .map(|(id, label, score)| ScoreEntry {
                    id: id.into(),
                    label,
                    score,
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[ScoreEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ScoreEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }

    /// Copy with entries ordered by id.
    pub fn sorted_by_id(&self) -> Self {
        let mut entries = self.entries.clone();
        entries.sort_by(|a, b| a.id.cmp(&b.id));
        Self { entries }
    }

    pub fn pairs(&self) -> Vec<(Label, f64)> {
        self.entries.iter().map(|e| (e.label, e.score)).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\tlabel\tscore\n");
        for e in &self.entries {
            out.push_str(&e.id);
            out.push('\t');
            out.push_str(e.label.as_str());
            out.push('\t');
            out.push_str(&format_score(e.score));
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some("id\tlabel\tscore") => {}
            other => return Err(Error::Parse(format!("bad score header {other:?}"))),
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::Parse(format!("score line {} has {} columns", n + 2, cols.len())));
            }
            let score = cols[2]
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("score line {}: {e}", n + 2)))?;
            entries.push(ScoreEntry {
                id: cols[0].to_string(),
                label: cols[1].parse()?,
                score,
            });
        }
        Self::new(entries)
    }
}

/// Positional decimal text with 17 significant digits.
pub fn format_score(x: f64) -> String {
    if x == 0.0 {
        return format!("{:.16}", 0.0);
    }
    let sci = format!("{:.16e}", x);
    let exp: i32 = sci.rsplit('e').next().and_then(|e| e.parse().ok()).unwrap_or(0);
    let decimals = (16 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

pub fn write_scores(path: impl AsRef<Path>, scores: &ScoreSet) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, scores.to_tsv()).map_err(|e| Error::file(path, e))
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreSet> {
    let path = path.as_ref();
    ScoreSet::from_tsv(&fs::read_to_string(path).map_err(|e| Error::file(path, e))?)
}
