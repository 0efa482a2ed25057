use serde::{Deserialize, Serialize};

use super::scores::{Label, ScoreSet};
use crate::error::{Error, Result};

/// Operating point where the false-acceptance and false-rejection curves cross.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerPoint {
    pub eer: f64,
    pub threshold: f64,
}

/// Pooled EER over every entry of `scores` in a single threshold sweep.
///
/// Deepfake is the positive class and a score `>= θ` flags an utterance.
/// Thresholds are the distinct scores in ascending order followed by `+∞`;
/// the crossing is interpolated linearly between the two sweep points that
/// bracket it, taking the first (lowest) bracket.
pub fn pooled_eer(scores: &ScoreSet) -> Result<EerPoint> {
    pooled_eer_pairs(&scores.pairs())
}

pub fn pooled_eer_pairs(pairs: &[(Label, f64)]) -> Result<EerPoint> {
    let n_bona = pairs.iter().filter(|(l, _)| *l == Label::Bonafide).count();
    let n_fake = pairs.len() - n_bona;
    if n_bona == 0 || n_fake == 0 {
        return Err(Error::DegenerateLabels);
    }
    if let Some((_, s)) = pairs.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::Numeric(format!("non-finite score {s}")));
    }

    let mut sorted: Vec<(f64, Label)> = pairs.iter().map(|&(l, s)| (s, l)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Counts strictly below the current threshold.
    let (nb, nf) = (n_bona as f64, n_fake as f64);
    let mut bona_below = 0usize;
    let mut fake_below = 0usize;
    let mut prev: Option<(f64, f64, f64)> = None; // (threshold, far, frr)
    let mut i = 0;
    loop {
        let theta = if i < sorted.len() { sorted[i].0 } else { f64::INFINITY };
        let far = (n_bona - bona_below) as f64 / nb;
        let frr = fake_below as f64 / nf;
        if frr >= far {
            let Some((t_prev, far_prev, frr_prev)) = prev else {
                // Unreachable: at the lowest threshold every bonafide is flagged.
                return Ok(EerPoint { eer: far, threshold: theta });
            };
            if frr == far {
                return Ok(EerPoint { eer: far, threshold: theta });
            }
            let d_prev = far_prev - frr_prev;
            let d_cur = far - frr;
            let t = d_prev / (d_prev - d_cur);
            let eer = far_prev + t * (far - far_prev);
            let threshold = if theta.is_finite() {
                t_prev + t * (theta - t_prev)
            } else {
                t_prev
            };
            return Ok(EerPoint { eer, threshold });
        }
        if i >= sorted.len() {
            unreachable!("sweep always crosses at +inf");
        }
        prev = Some((theta, far, frr));
        while i < sorted.len() && sorted[i].0 == theta {
            match sorted[i].1 {
                Label::Bonafide => bona_below += 1,
                Label::Deepfake => fake_below += 1,
            }
            i += 1;
        }
    }
}
