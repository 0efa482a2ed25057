//! Pooled equal error rate, bootstrap confidence intervals and report tables.

mod bootstrap;
mod eer;
mod report;
mod scores;

pub use bootstrap::{bootstrap_ci, evaluate, BootstrapCi, DEFAULT_LEVEL, DEFAULT_N_BOOT};
pub use eer::{pooled_eer, pooled_eer_pairs, EerPoint};
pub use report::{format_eer_cell, parse_report_csv, report_table, Report, ReportRow};
pub use scores::{
    format_score, read_scores, write_scores, Label, ScoreEntry, ScoreSet,
};

use serde::{Deserialize, Serialize};

/// Pooled EER with its bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: usize,
    pub n_boot: usize,
    pub seed: u64,
    pub n_skipped: usize,
}
