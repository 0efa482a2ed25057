use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::eer::{pooled_eer, pooled_eer_pairs};
use super::scores::{Label, ScoreSet};
use super::EerResult;
use crate::error::{Error, Result};

pub const DEFAULT_N_BOOT: usize = 1000;
pub const DEFAULT_LEVEL: f64 = 0.95;
const MAX_REDRAWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapCi {
    pub lo: f64,
    pub hi: f64,
    /// Resamples that still held a single class after every redraw.
    pub n_skipped: usize,
}

/// Percentile bootstrap interval of the pooled EER.
///
/// Resample `i` draws from its own ChaCha8 stream so the result does not
/// depend on how the resamples are scheduled across threads.
pub fn bootstrap_ci(scores: &ScoreSet, n_boot: usize, level: f64, seed: u64) -> Result<BootstrapCi> {
    if n_boot < 100 {
        return Err(Error::Config(format!("n_boot must be at least 100, got {n_boot}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("confidence level {level} outside (0, 1)")));
    }
    let pairs = scores.pairs();
    pooled_eer_pairs(&pairs)?;
    let n = pairs.len();

    let draws: Vec<Option<f64>> = (0..n_boot)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut sample = Vec::with_capacity(n);
            for _ in 0..=MAX_REDRAWS {
                sample.clear();
                sample.extend((0..n).map(|_| pairs[rng.random_range(0..n)]));
                let has_bona = sample.iter().any(|p| p.0 == Label::Bonafide);
                let has_fake = sample.iter().any(|p| p.0 == Label::Deepfake);
                if has_bona && has_fake {
                    return pooled_eer_pairs(&sample).ok().map(|p| p.eer);
                }
            }
            None
        })
        .collect();

    let mut eers: Vec<f64> = draws.iter().flatten().copied().collect();
    let n_skipped = n_boot - eers.len();
    if eers.is_empty() {
        return Err(Error::DegenerateLabels);
    }
    eers.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(BootstrapCi {
        lo: quantile(&eers, tail),
        hi: quantile(&eers, 1.0 - tail),
        n_skipped,
    })
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Point EER plus bootstrap interval. `n_boot = 0` skips the bootstrap and
/// reports the point estimate as both interval ends.
pub fn evaluate(scores: &ScoreSet, n_boot: usize, level: f64, seed: u64) -> Result<EerResult> {
    let point = pooled_eer(scores)?;
    let (ci_lo, ci_hi, n_skipped) = if n_boot == 0 {
        (point.eer, point.eer, 0)
    } else {
        let ci = bootstrap_ci(scores, n_boot, level, seed)?;
        (ci.lo, ci.hi, ci.n_skipped)
    };
    Ok(EerResult {
        eer: point.eer,
        threshold: point.threshold,
        ci_lo,
        ci_hi,
        n: scores.len(),
        n_boot,
        seed,
        n_skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_set(n: usize, seed: u64) -> ScoreSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScoreSet::from_triples((0..n).map(|i| {
            let label = if i % 2 == 0 { Label::Bonafide } else { Label::Deepfake };
            let noise: f64 = StandardNormal.sample(&mut rng);
            (format!("u{i}"), label, noise + label.target())
        }))
        .unwrap()
    }

    #[test]
    fn zero_variance_set() {
        let set = ScoreSet::from_triples((0..10).map(|i| {
            let label = if i < 5 { Label::Bonafide } else { Label::Deepfake };
            (format!("u{i}"), label, label.target())
        }))
        .unwrap();
        let r = evaluate(&set, 200, 0.95, 1).unwrap();
        assert_eq!((r.ci_lo, r.ci_hi, r.eer), (0.0, 0.0, 0.0));
    }

    #[test]
    fn seeded_and_brackets_point_estimate() {
        let set = gaussian_set(40, 11);
        let a = evaluate(&set, 1000, 0.95, 5).unwrap();
        let b = evaluate(&set, 1000, 0.95, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.ci_lo <= a.eer && a.eer <= a.ci_hi, "{a:?}");
        assert!(a.ci_lo < a.ci_hi);
    }

    #[test]
    fn tiny_sets_report_skips() {
        let set = ScoreSet::from_triples([("a", Label::Bonafide, 0.0), ("b", Label::Deepfake, 1.0)]).unwrap();
        let ci = bootstrap_ci(&set, 100, 0.95, 0).unwrap();
        // Each draw is single-class with probability 1/2, so 11 straight failures are rare but possible.
        assert!(ci.n_skipped < 5);
    }

    #[test]
    fn rejects_small_n_boot() {
        let set = gaussian_set(10, 0);
        assert!(matches!(bootstrap_ci(&set, 99, 0.95, 0), Err(Error::Config(_))));
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[0.0, 1.0, 2.0, 3.0], 0.5), 1.5);
        assert_eq!(quantile(&[4.0], 0.9), 4.0);
    }
}
