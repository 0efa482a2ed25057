use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "valid")]
    Valid,
    #[serde(rename = "testA")]
    TestA,
    #[serde(rename = "testB")]
    TestB,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Valid, Split::TestA, Split::TestB];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::TestA => "testA",
            Split::TestB => "testB",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.as_str() == s)
            .ok_or_else(|| Error::Parse(format!("unknown split `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    /// Audio path, relative paths being resolved against the manifest directory.
    pub path: PathBuf,
    pub label: Label,
    pub split: Split,
    pub singer: String,
}

/// Tab-separated list of utterances with labels and split assignment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub rows: Vec<ManifestRow>,
    base_dir: Option<PathBuf>,
}

const HEADER: [&str; 5] = ["id", "path", "label", "split", "singer"];

impl DatasetManifest {
    pub fn new(rows: Vec<ManifestRow>) -> Self {
        Self { rows, base_dir: None }
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = Some(dir.into());
        self
    }

    pub fn base_dir(&self) -> Option<&Path> {
        self.base_dir.as_deref()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        match &self.base_dir {
            Some(base) if row.path.is_relative() => base.join(&row.path),
            _ => row.path.clone(),
        }
    }

    /// Rows of one split, keeping the base directory.
    pub fn split(&self, split: Split) -> Self {
        Self {
            rows: self.rows.iter().filter(|r| r.split == split).cloned().collect(),
            base_dir: self.base_dir.clone(),
        }
    }

    pub fn count(&self, label: Label) -> usize {
        self.rows.iter().filter(|r| r.label == label).count()
    }

    pub fn has_both_labels(&self) -> bool {
        self.count(Label::Bonafide) > 0 && self.count(Label::Deepfake) > 0
    }

    pub fn ensure_unique_ids(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.rows {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(b'\t')
            .quote_style(csv::QuoteStyle::Never)
            .from_writer(Vec::new());
        w.write_record(HEADER)?;
        for r in &self.rows {
            let path = r
                .path
                .to_str()
                .ok_or_else(|| Error::InvalidValue(format!("non UTF-8 path for `{}`", r.id)))?;
            for field in [r.id.as_str(), path, r.singer.as_str()] {
                if field.contains(['\t', '\n', '\r']) {
                    return Err(Error::InvalidValue(format!("field {field:?} contains a separator")));
                }
            }
            w.write_record([r.id.as_str(), path, r.label.as_str(), r.split.as_str(), r.singer.as_str()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .quoting(false)
            .from_reader(text.as_bytes());
        if r.headers()?.iter().collect::<Vec<_>>() != HEADER {
            return Err(Error::Parse(format!("manifest header must be {}", HEADER.join("\\t"))));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            rows.push(ManifestRow {
                id: rec[0].to_string(),
                path: PathBuf::from(&rec[1]),
                label: rec[2].parse()?,
                split: rec[3].parse()?,
                singer: rec[4].to_string(),
            });
        }
        Ok(Self::new(rows))
    }

    /// Reads a manifest; relative audio paths resolve against its directory.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        let m = Self::from_tsv(&text)?;
        Ok(match path.parent() {
            Some(dir) => m.with_base_dir(dir),
            None => m,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()?).map_err(|e| Error::file(path, e))
    }

    /// SHA-256 of the TSV serialization.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_tsv()?.as_bytes())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DatasetManifest {
        DatasetManifest::new(vec![
            ManifestRow {
                id: "b0".into(),
                path: "audio/b0.wav".into(),
                label: Label::Bonafide,
                split: Split::Train,
                singer: "s1".into(),
            },
            ManifestRow {
                id: "d0".into(),
                path: "audio/d0.wav".into(),
                label: Label::Deepfake,
                split: Split::TestA,
                singer: "s2".into(),
            },
        ])
    }

    #[test]
    fn tsv_round_trip() {
        let m = sample();
        let text = m.to_tsv().unwrap();
        assert!(text.starts_with("id\tpath\tlabel\tsplit\tsinger\n"));
        assert!(text.contains("d0\taudio/d0.wav\tdeepfake\ttestA\ts2\n"));
        let back = DatasetManifest::from_tsv(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_tsv().unwrap(), text);
    }

    #[test]
    fn read_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.tsv");
        sample().write(&p).unwrap();
        let m = DatasetManifest::read(&p).unwrap();
        assert_eq!(m.resolve(&m.rows[0]), dir.path().join("audio/b0.wav"));
    }

    #[test]
    fn bad_rows_rejected() {
        assert!(DatasetManifest::from_tsv("id\tpath\n").is_err());
        assert!(DatasetManifest::from_tsv("id\tpath\tlabel\tsplit\tsinger\na\tp\tfake\ttrain\ts\n").is_err());
        assert!(DatasetManifest::from_tsv("id\tpath\tlabel\tsplit\tsinger\na\tp\tbonafide\ttest\ts\n").is_err());
    }

    #[test]
    fn duplicate_ids_detected() {
        let mut m = sample();
        m.rows[1].id = "b0".into();
        assert!(matches!(m.ensure_unique_ids(), Err(Error::DuplicateId(_))));
    }
}
