//! Metrics CSV files and the summaries computed from them.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::flsim::RoundMetrics;

/// Column order of every metrics file.
pub const CSV_COLUMNS: [&str; 7] = [
    "round",
    "train_loss",
    "test_accuracy",
    "uplink_payload_bits",
    "uplink_total_bits",
    "cumulative_payload_bits",
    "wall_ms",
];

pub fn write_metrics<W: Write>(writer: W, metrics: &[RoundMetrics]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(CSV_COLUMNS)?;
    for m in metrics {
        out.write_record([
            m.round.to_string(),
            m.train_loss.to_string(),
            m.test_accuracy.to_string(),
            m.uplink_payload_bits.to_string(),
            m.uplink_total_bits.to_string(),
            m.cumulative_payload_bits.to_string(),
            m.wall_ms.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_metrics(path: &Path, metrics: &[RoundMetrics]) -> Result<()> {
    write_metrics(File::create(path)?, metrics)
}

/// Parses a metrics file, insisting on the exact header.
pub fn read_metrics<R: Read>(reader: R) -> Result<Vec<RoundMetrics>> {
    let mut input = csv::Reader::from_reader(reader);
    let header = input.headers()?.clone();
    if header.iter().ne(CSV_COLUMNS) {
        return Err(Error::Metrics(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut metrics = Vec::new();
    for (i, record) in input.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let field = |k: usize| -> &str { record.get(k).unwrap_or("") };
        fn parse<T: std::str::FromStr>(v: &str, row: usize, col: &str) -> Result<T> {
            v.trim().parse().map_err(|_| Error::Metrics(format!("row {row}: bad {col} {v:?}")))
        }
        let m = RoundMetrics {
            round: parse(field(0), row, CSV_COLUMNS[0])?,
            train_loss: parse(field(1), row, CSV_COLUMNS[1])?,
            test_accuracy: parse(field(2), row, CSV_COLUMNS[2])?,
            uplink_payload_bits: parse(field(3), row, CSV_COLUMNS[3])?,
            uplink_total_bits: parse(field(4), row, CSV_COLUMNS[4])?,
            cumulative_payload_bits: parse(field(5), row, CSV_COLUMNS[5])?,
            wall_ms: parse(field(6), row, CSV_COLUMNS[6])?,
        };
        if let Some(prev) = metrics.last() {
            let prev: &RoundMetrics = prev;
            if m.round <= prev.round || m.cumulative_payload_bits < prev.cumulative_payload_bits {
                return Err(Error::Metrics(format!("row {row}: rounds or cumulative bits go backwards")));
            }
        }
        metrics.push(m);
    }
    Ok(metrics)
}

pub fn load_metrics(path: &Path) -> Result<Vec<RoundMetrics>> {
    read_metrics(File::open(path)?)
}

/// Cumulative payload bits at the first evaluation reaching `target`
/// accuracy, or `None` if no evaluation does.
pub fn bits_to_target(metrics: &[RoundMetrics], target: f64) -> Option<u64> {
    metrics
        .iter()
        .find(|m| m.test_accuracy >= target)
        .map(|m| m.cumulative_payload_bits)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
