use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::EerResult;
use crate::error::{Error, Result};

/// One CSV row of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub name: String,
    pub eer: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: usize,
    pub n_boot: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

/// EER as a percentage with two decimals and the interval as `(lo--hi)`.
pub fn format_eer_cell(eer: f64, ci: Option<(f64, f64)>) -> String {
    match ci {
        Some((lo, hi)) => format!("{:.2} ({:.2}--{:.2})", eer * 100.0, lo * 100.0, hi * 100.0),
        None => format!("{:.2}", eer * 100.0),
    }
}

/// Build a report; rows with an empty name are labelled by their position.
pub fn report_table<S: AsRef<str>>(results: &[(S, EerResult)]) -> Result<Report> {
    if results.is_empty() {
        return Err(Error::EmptyInput);
    }
    let rows = results
        .iter()
        .enumerate()
        .map(|(i, (name, r))| ReportRow {
            name: match name.as_ref() {
                "" => format!("row{}", i + 1),
                s => s.to_string(),
            },
            eer: r.eer,
            ci_lo: r.ci_lo,
            ci_hi: r.ci_hi,
            n: r.n,
            n_boot: r.n_boot,
            seed: r.seed,
        })
        .collect();
    Ok(Report { rows })
}

impl Report {
    pub fn to_text(&self) -> String {
        let cells: Vec<String> = self
            .rows
            .iter()
            .map(|r| format_eer_cell(r.eer, (r.n_boot > 0).then_some((r.ci_lo, r.ci_hi))))
            .collect();
        let name_w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(4);
        let cell_w = cells.iter().map(String::len).max().unwrap_or(0).max(7);
        let mut out = String::new();
        let _ = writeln!(out, "{:<name_w$}  {:<cell_w$}  n", "name", "EER (%)");
        for (r, cell) in self.rows.iter().zip(&cells) {
            let _ = writeln!(out, "{:<name_w$}  {:<cell_w$}  {}", r.name, cell, r.n);
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["name", "eer", "ci_lo", "ci_hi", "n", "n_boot", "seed"] {
        return Err(Error::Parse(format!("unexpected report header {headers:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(eer: f64, lo: f64, hi: f64) -> EerResult {
        EerResult { eer, threshold: 0.0, ci_lo: lo, ci_hi: hi, n: 40, n_boot: 1000, seed: 42, n_skipped: 0 }
    }

    #[test]
    fn table_four_display() {
        assert_eq!(format_eer_cell(0.0158, Some((0.0126, 0.0194))), "1.58 (1.26--1.94)");
        assert_eq!(format_eer_cell(0.0, None), "0.00");
    }

    #[test]
    fn empty_name_gets_row_id() {
        let rep = report_table(&[("fullband", result(0.1, 0.05, 0.2)), ("", result(0.2, 0.1, 0.3))]).unwrap();
        assert_eq!(rep.rows[1].name, "row2");
        assert!(rep.to_text().contains("20.00 (10.00--30.00)"));
    }

    #[test]
    fn empty_report_rejected() {
        let none: [(&str, EerResult); 0] = [];
        assert!(report_table(&none).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let rep = report_table(&[("a,b", result(1.0 / 3.0, 0.1, 0.7)), ("c", result(0.0158, 0.0126, 0.0194))]).unwrap();
        let csv = rep.to_csv().unwrap();
        assert!(csv.starts_with("name,eer,ci_lo,ci_hi,n,n_boot,seed\n"));
        let back = parse_report_csv(&csv).unwrap();
        assert_eq!(back, rep.rows);
        assert_eq!(Report { rows: back }.to_csv().unwrap(), csv);
    }
}
