//! Fusion of a selected expert pool: logit aggregation, embedding
//! concatenation, and cross-expert multi-head self-attention.

mod descriptor;
mod head;
mod mhsa;

pub use descriptor::{PoolDescriptor, PoolMember};
pub use head::{
    aggregate_score_sets, concat_fuse, fuse_scores, mhsa_interact, pool_features, train_fusion_head, FusionHead,
    FusionKind, HeadGrads, PooledFeatures, CONCAT_HIDDEN, INTERACT_HIDDEN,
};
pub use mhsa::{MhsaConfig, MhsaTrace};

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::expert::{ExpertModel, ExpertOutput, ExpertRole};

/// Mean of the member logits, each model casting an equal vote.
pub fn aggregate_logits(logits: &[f64]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::EmptyPool);
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::Numeric("pooled logit".into()));
    }
    // Summing in sorted order makes the result bitwise independent of pool order.
    let mut sorted = logits.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted.iter().sum::<f64>() / sorted.len() as f64)
}

/// Fullband model (when present) followed by subband experts in ascending band order.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedPool {
    members: Vec<ExpertModel>,
}

impl SelectedPool {
    /// Orders `models` canonically. At most one fullband member is allowed.
    pub fn new(mut models: Vec<ExpertModel>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::EmptyPool);
        }
        let n_full = models.iter().filter(|m| m.role() == ExpertRole::Fullband).count();
        if n_full > 1 {
            return Err(Error::PoolMismatch(format!("{n_full} fullband members, at most one allowed")));
        }
        models.sort_by(|a, b| {
            let key = |m: &ExpertModel| (m.role() != ExpertRole::Fullband, m.band().0, m.band().1);
            let (ka, kb) = (key(a), key(b));
            ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ka.2.total_cmp(&kb.2))
        });
        let dim = models[0].config().embed_dim;
        if models.iter().any(|m| m.config().embed_dim != dim) {
            return Err(Error::PoolMismatch("members disagree on embedding width".into()));
        }
        Ok(Self { members: models })
    }

    pub fn members(&self) -> &[ExpertModel] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Number of subband members.
    pub fn k(&self) -> usize {
        self.members.iter().filter(|m| m.role() == ExpertRole::Subband).count()
    }

    pub fn has_fullband(&self) -> bool {
        self.members.first().is_some_and(|m| m.role() == ExpertRole::Fullband)
    }

    pub fn embed_dim(&self) -> usize {
        self.members[0].config().embed_dim
    }

    pub fn bands(&self) -> Vec<(f64, f64)> {
        self.members.iter().map(ExpertModel::band).collect()
    }

    /// Runs every member on its own band of a fullband spectrogram.
    pub fn outputs(&self, fullband: &Spectrogram) -> Result<Vec<ExpertOutput>> {
        self.members
            .iter()
            .map(|m| m.forward(&crate::dsp::slice_band(fullband, m.band().0, m.band().1)?))
            .collect()
    }

    /// SHA-256 of every member checkpoint, in pool order.
    pub fn param_hashes(&self) -> Result<Vec<String>> {
        self.members.iter().map(ExpertModel::param_hash).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expert::{BackboneSpec, ExpertConfig};

    #[test]
    fn aggregation_examples() {
        assert_eq!(aggregate_logits(&[2.0, 4.0]).unwrap(), 3.0);
        assert_eq!(aggregate_logits(&[-7.25]).unwrap(), -7.25);
        assert_eq!(aggregate_logits(&[1.0, -2.0, 4.0]).unwrap(), 1.0);
        assert!(matches!(aggregate_logits(&[]), Err(Error::EmptyPool)));
    }

    #[test]
    fn pool_is_canonically_ordered() {
        let small = BackboneSpec::stride2(&[2]);
        let mk = |lo: f64, hi: f64| ExpertModel::build(ExpertConfig::for_band(lo, hi, 0).with_backbone(small.clone())).unwrap();
        let pool = SelectedPool::new(vec![mk(11025.0, 16537.5), mk(0.0, 22050.0), mk(0.0, 11025.0)]).unwrap();
        assert_eq!(pool.bands(), vec![(0.0, 22050.0), (0.0, 11025.0), (11025.0, 16537.5)]);
        assert_eq!(pool.k(), 2);
        assert!(pool.has_fullband());
        assert!(matches!(SelectedPool::new(vec![]), Err(Error::EmptyPool)));
        assert!(SelectedPool::new(vec![mk(0.0, 22050.0), mk(0.0, 22050.0)]).is_err());
    }
}
