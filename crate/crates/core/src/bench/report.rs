//! CSV and JSON reports.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{sort_records, BenchError, BenchRecord};

/// Column set of the CSV report.
#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    target: String,
    model: String,
    tiles: usize,
    mini: usize,
    micro: usize,
    valid: bool,
    mean_latency_ms: Option<f64>,
    latency_ci95_ms: Option<f64>,
    throughput_sps: Option<f64>,
    throughput_ci95_sps: Option<f64>,
    replicates: usize,
    n_batches: usize,
}

pub const CSV_HEADER: &str = "target,model,tiles,mini,micro,valid,mean_latency_ms,latency_ci95_ms,throughput_sps,throughput_ci95_sps,replicates,n_batches";

fn sorted(records: &[BenchRecord]) -> Vec<BenchRecord> {
    let mut v = records.to_vec();
    sort_records(&mut v);
    v
}

pub fn records_to_csv(records: &[BenchRecord]) -> Result<String, BenchError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in sorted(records) {
        w.serialize(CsvRow {
            target: r.target,
            model: r.model,
            tiles: r.tiles,
            mini: r.mini,
            micro: r.micro,
            valid: r.valid,
            mean_latency_ms: r.mean_latency_ms,
            latency_ci95_ms: r.latency_ci95_ms,
            throughput_sps: r.throughput_sps,
            throughput_ci95_sps: r.throughput_ci95_sps,
            replicates: r.replicates,
            n_batches: r.n_batches,
        })?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv writes utf-8");
    Ok(format!("{CSV_HEADER}\n{body}"))
}

/// Parse a CSV report. Replicate values are not part of the CSV and come
/// back empty.
pub fn read_csv(path: &Path) -> Result<Vec<BenchRecord>, BenchError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize::<CsvRow>() {
        let row = row?;
        out.push(BenchRecord {
            target: row.target,
            model: row.model,
            tiles: row.tiles,
            mini: row.mini,
            micro: row.micro,
            valid: row.valid,
            mean_latency_ms: row.mean_latency_ms,
            latency_ci95_ms: row.latency_ci95_ms,
            throughput_sps: row.throughput_sps,
            throughput_ci95_sps: row.throughput_ci95_sps,
            replicates: row.replicates,
            n_batches: row.n_batches,
            replicate_latency_ms: Vec::new(),
            replicate_throughput_sps: Vec::new(),
            min_span_s: None,
        });
    }
    Ok(out)
}

pub fn write_csv(records: &[BenchRecord], path: &Path) -> Result<(), BenchError> {
    fs::write(path, records_to_csv(records)?)?;
    Ok(())
}

pub fn records_to_json(records: &[BenchRecord]) -> Result<String, BenchError> {
    Ok(serde_json::to_string_pretty(&sorted(records))?)
}

pub fn read_json(path: &Path) -> Result<Vec<BenchRecord>, BenchError> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_json(records: &[BenchRecord], path: &Path) -> Result<(), BenchError> {
    fs::write(path, records_to_json(records)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_header_only() {
        assert_eq!(records_to_csv(&[]).unwrap(), format!("{CSV_HEADER}\n"));
    }
}
