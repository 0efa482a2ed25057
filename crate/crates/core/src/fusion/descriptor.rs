use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{FusionKind, SelectedPool};
use crate::error::{Error, Result};
use crate::expert::ExpertModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolMember {
    pub checkpoint: PathBuf,
    pub band: (f64, f64),
}

/// Text description of a pool: member checkpoints with their bands and the fusion kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolDescriptor {
    pub kind: FusionKind,
    pub members: Vec<PoolMember>,
}

impl PoolDescriptor {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&fs::read_to_string(path).map_err(|e| Error::file(path, e))?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml()?).map_err(|e| Error::file(path, e))
    }

    /// SHA-256 of the canonical TOML text.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    /// Loads every member, resolving relative checkpoint paths against `base`,
    /// and checks each recorded band against the loaded model.
    pub fn load_pool(&self, base: Option<&Path>) -> Result<SelectedPool> {
        let mut models = Vec::with_capacity(self.members.len());
        for m in &self.members {
            let path = match base {
                Some(b) if m.checkpoint.is_relative() => b.join(&m.checkpoint),
                _ => m.checkpoint.clone(),
            };
            let model = ExpertModel::load(&path)?;
            if model.band() != m.band {
                return Err(Error::PoolMismatch(format!(
                    "{} holds band {:?}, descriptor says {:?}",
                    path.display(),
                    model.band(),
                    m.band
                )));
            }
            models.push(model);
        }
        SelectedPool::new(models)
    }
}
