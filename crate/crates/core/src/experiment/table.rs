use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const CSV_HEADER: [&str; 12] =
    ["sweep_var", "sweep_value", "detector", "trial", "seed", "iters", "converged", "nmse", "pfa", "pmd", "runtime_ms", "status"];

/// One CSV row: a single trial, or an aggregate over trials (`trial = -1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub sweep_var: String,
    pub sweep_value: f64,
    pub detector: String,
    pub trial: i64,
    pub seed: u64,
    pub iters: usize,
    pub converged: bool,
    pub nmse: f64,
    pub pfa: f64,
    pub pmd: f64,
    pub runtime_ms: f64,
    pub status: String,
}

impl TrialRecord {
    pub fn is_aggregate(&self) -> bool {
        self.trial < 0
    }
}

pub fn write_table<W: Write>(rows: &[TrialRecord], w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_table(rows: &[TrialRecord], path: impl AsRef<Path>) -> Result<()> {
    write_table(rows, std::fs::File::create(path)?)
}

pub fn read_table<R: Read>(r: R) -> Result<Vec<TrialRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut rows = Vec::new();
    for rec in rd.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

pub fn load_table(path: impl AsRef<Path>) -> Result<Vec<TrialRecord>> {
    read_table(std::fs::File::open(path)?)
}

/// One iteration of a paired AMP / state-evolution trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeRecord {
    pub sweep_var: String,
    pub sweep_value: f64,
    pub detector: String,
    pub trial: i64,
    pub iteration: usize,
    pub trace_theta: f64,
    pub predicted_nmse: f64,
    pub empirical_nmse: f64,
}

/// One ROC point of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocRecord {
    pub sweep_var: String,
    pub sweep_value: f64,
    pub detector: String,
    pub trial: i64,
    pub threshold: f64,
    pub pfa: f64,
    pub pmd: f64,
}

/// Writes any serializable rows with a header derived from the field names.
pub fn save_rows<T: Serialize>(rows: &[T], path: impl AsRef<Path>) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(trial: i64) -> TrialRecord {
        TrialRecord {
            sweep_var: "M".into(),
            sweep_value: 32.0,
            detector: "gst".into(),
            trial,
            seed: 17,
            iters: 12,
            converged: true,
            nmse: 0.048_123_456_789,
            pfa: 0.001,
            pmd: 0.0,
            runtime_ms: 0.0,
            status: if trial < 0 { "aggregate;n=1;nmse_std=0;converged_frac=1".into() } else { "ok".into() },
        }
    }

    #[test]
    fn empty_table_is_header_only() {
        let mut buf = Vec::new();
        write_table(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", CSV_HEADER.join(",")));
    }

    #[test]
    fn one_row_two_lines_and_round_trip() {
        let rows = vec![row(0)];
        let mut buf = Vec::new();
        write_table(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(read_table(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn aggregate_rows_round_trip() {
        let rows = vec![row(0), row(1), row(-1)];
        let mut buf = Vec::new();
        write_table(&rows, &mut buf).unwrap();
        let back = read_table(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        assert!(back[2].is_aggregate());
    }
}
