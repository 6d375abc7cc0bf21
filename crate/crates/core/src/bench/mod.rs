//! Latency/throughput sweeps with warm-up, duration control, replicates and
//! Student-t confidence intervals.

mod report;
pub mod stats;
mod target;

pub use report::{CSV_HEADER, read_csv, read_json, records_to_csv, records_to_json, write_csv, write_json};
pub use target::{BenchTarget, LocalTarget, Mode, RemoteTarget, SimulatedLinkTarget, SimulatedTarget};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{plan_microbatches, ExecError};
use crate::net::ClientError;

/// Mini-batch sizes swept by default.
pub const DEFAULT_MINI_BATCHES: [usize; 11] = [1, 4, 16, 64, 256, 1024, 2048, 4096, 8192, 16384, 32768];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("mini {mini} micro {micro}: {source}")]
    Point {
        mini: usize,
        micro: usize,
        #[source]
        source: Box<BenchError>,
    },
    #[error("mini-batch grids differ: missing from a {missing_in_a:?}, missing from b {missing_in_b:?}")]
    GridMismatch {
        missing_in_a: Vec<usize>,
        missing_in_b: Vec<usize>,
    },
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPlan {
    pub mini_batch_sizes: Vec<usize>,
    /// Heatmap mode when present.
    pub micro_batch_sizes: Option<Vec<usize>>,
    pub replicates: usize,
    pub warmup_batches: usize,
    pub min_wall_clock_s: f64,
    /// Also sweep the nearest multiple of 6 below each size.
    pub preferred_mb: bool,
}

impl Default for BenchPlan {
    fn default() -> Self {
        BenchPlan {
            mini_batch_sizes: DEFAULT_MINI_BATCHES.to_vec(),
            micro_batch_sizes: None,
            replicates: 5,
            warmup_batches: 10,
            min_wall_clock_s: 10.0,
            preferred_mb: false,
        }
    }
}

fn with_preferred(sizes: &[usize], preferred: bool) -> Vec<usize> {
    let mut set: BTreeSet<usize> = sizes.iter().copied().collect();
    if preferred {
        set.extend(sizes.iter().map(|&m| 6 * (m / 6)).filter(|&m| m > 0));
    }
    set.into_iter().collect()
}

impl BenchPlan {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::InvalidPlan(m));
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if !(self.min_wall_clock_s > 0.0) {
            return bad(format!("min_wall_clock_s must be positive, got {}", self.min_wall_clock_s));
        }
        if self.mini_batch_sizes.is_empty() {
            return bad("no mini-batch sizes".into());
        }
        let micros = self.micro_batch_sizes.as_deref().unwrap_or(&[]);
        if self.mini_batch_sizes.iter().chain(micros).any(|&m| m == 0) {
            return bad("batch sizes must be at least 1".into());
        }
        if micros.is_empty() && self.micro_batch_sizes.is_some() {
            return bad("empty micro-batch list".into());
        }
        Ok(())
    }

    /// Mini-batch sizes actually swept, ascending and deduplicated.
    pub fn minis(&self) -> Vec<usize> {
        with_preferred(&self.mini_batch_sizes, self.preferred_mb)
    }

    /// Micro-batch sizes for heatmap mode.
    pub fn micros(&self) -> Option<Vec<usize>> {
        self.micro_batch_sizes
            .as_ref()
            .map(|m| with_preferred(m, self.preferred_mb))
    }
}

/// One benchmarked configuration. Statistics are `None` exactly when the
/// configuration is invalid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub target: String,
    pub model: String,
    pub tiles: usize,
    pub mini: usize,
    pub micro: usize,
    pub valid: bool,
    pub mean_latency_ms: Option<f64>,
    pub latency_ci95_ms: Option<f64>,
    pub throughput_sps: Option<f64>,
    pub throughput_ci95_sps: Option<f64>,
    pub replicates: usize,
    pub n_batches: usize,
    /// Per-replicate mean latency.
    #[serde(default)]
    pub replicate_latency_ms: Vec<f64>,
    /// Per-replicate throughput.
    #[serde(default)]
    pub replicate_throughput_sps: Vec<f64>,
    /// Shortest measured span of any replicate pass.
    #[serde(default)]
    pub min_span_s: Option<f64>,
}

impl BenchRecord {
    fn invalid(target: &dyn BenchTarget, mini: usize, micro: usize, replicates: usize) -> Self {
        BenchRecord {
            target: target.label(),
            model: target.model(),
            tiles: target.tiles(),
            mini,
            micro,
            valid: false,
            mean_latency_ms: None,
            latency_ci95_ms: None,
            throughput_sps: None,
            throughput_ci95_sps: None,
            replicates,
            n_batches: 0,
            replicate_latency_ms: Vec::new(),
            replicate_throughput_sps: Vec::new(),
            min_span_s: None,
        }
    }
}

/// Run batches until the measured span reaches `min_ms`, starting with a
/// projected count. Returns (batches, span).
fn measure_span(
    target: &mut dyn BenchTarget,
    mini: usize,
    micro: usize,
    mode: Mode,
    projected: usize,
    min_ms: f64,
) -> Result<(usize, f64), BenchError> {
    let mut n = projected.max(1);
    let mut span = target.run(mini, micro, n, mode)?;
    while span < min_ms {
        let per = span / n as f64;
        let extra = if per > 0.0 {
            (((min_ms - span) / per).ceil() as usize).max(1)
        } else {
            n
        };
        span += target.run(mini, micro, extra, mode)?;
        n += extra;
    }
    Ok((n, span))
}

/// Benchmark one (mini, micro) configuration.
pub fn run_point(
    plan: &BenchPlan,
    target: &mut dyn BenchTarget,
    mini: usize,
    micro: usize,
) -> Result<BenchRecord, BenchError> {
    plan.validate()?;
    if plan_microbatches(mini, micro).is_err() {
        return Ok(BenchRecord::invalid(target, mini, micro, plan.replicates));
    }
    let wrap = |e: BenchError| BenchError::Point {
        mini,
        micro,
        source: Box::new(e),
    };
    let min_ms = plan.min_wall_clock_s * 1e3;

    let mut warm_ms = 0.0;
    for _ in 0..plan.warmup_batches {
        warm_ms += target.run(mini, micro, 1, Mode::Latency).map_err(wrap)?;
    }
    let projected = if plan.warmup_batches > 0 && warm_ms > 0.0 {
        (min_ms / (warm_ms / plan.warmup_batches as f64)).ceil() as usize
    } else {
        1
    };

    let mut latencies = Vec::with_capacity(plan.replicates);
    let mut throughputs = Vec::with_capacity(plan.replicates);
    let (mut total_samples, mut total_ms) = (0.0, 0.0);
    let mut n_batches = 0;
    let mut min_span = f64::INFINITY;
    for _ in 0..plan.replicates {
        let (n, span) = measure_span(target, mini, micro, Mode::Latency, projected, min_ms).map_err(wrap)?;
        latencies.push(span / n as f64);
        n_batches += n;
        min_span = min_span.min(span);
        let (n, span) = if target.separate_throughput() {
            let (tn, tspan) = measure_span(target, mini, micro, Mode::Throughput, n, min_ms).map_err(wrap)?;
            n_batches += tn;
            min_span = min_span.min(tspan);
            (tn, tspan)
        } else {
            (n, span)
        };
        let samples = (mini * n) as f64;
        throughputs.push(samples / (span / 1e3));
        total_samples += samples;
        total_ms += span;
    }

    Ok(BenchRecord {
        target: target.label(),
        model: target.model(),
        tiles: target.tiles(),
        mini,
        micro,
        valid: true,
        mean_latency_ms: Some(stats::mean(&latencies)),
        latency_ci95_ms: Some(stats::ci95_half_width(&latencies)),
        throughput_sps: Some(total_samples / (total_ms / 1e3)),
        throughput_ci95_sps: Some(stats::ci95_half_width(&throughputs)),
        replicates: plan.replicates,
        n_batches,
        replicate_latency_ms: latencies,
        replicate_throughput_sps: throughputs,
        min_span_s: Some(min_span / 1e3),
    })
}

/// Lowest-latency micro-batch for one mini-batch row of a heatmap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Highlight {
    pub mini: usize,
    pub micro: usize,
    pub mean_latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<BenchRecord>,
    /// Empty unless the plan has micro-batch sizes.
    pub highlights: Vec<Highlight>,
}

/// Per-mini argmin of mean latency over valid records. Ties go to the
/// smaller micro-batch.
pub fn highlights(records: &[BenchRecord]) -> Vec<Highlight> {
    let mut best: BTreeMap<usize, Highlight> = BTreeMap::new();
    for r in records.iter().filter(|r| r.valid) {
        let Some(lat) = r.mean_latency_ms else { continue };
        let h = Highlight {
            mini: r.mini,
            micro: r.micro,
            mean_latency_ms: lat,
        };
        best.entry(r.mini)
            .and_modify(|b| {
                if lat < b.mean_latency_ms || (lat == b.mean_latency_ms && r.micro < b.micro) {
                    *b = h;
                }
            })
            .or_insert(h);
    }
    best.into_values().collect()
}

/// Every mini (× micro in heatmap mode) configuration of `plan`, sorted by
/// mini then micro.
pub fn run_sweep(plan: &BenchPlan, target: &mut dyn BenchTarget) -> Result<SweepResult, BenchError> {
    plan.validate()?;
    let micros = plan.micros();
    let mut records = Vec::new();
    for mini in plan.minis() {
        match &micros {
            None => records.push(run_point(plan, target, mini, mini)?),
            Some(ms) => {
                for &micro in ms {
                    records.push(run_point(plan, target, mini, micro)?);
                }
            }
        }
    }
    sort_records(&mut records);
    let highlights = if micros.is_some() { highlights(&records) } else { Vec::new() };
    Ok(SweepResult { records, highlights })
}

pub fn sort_records(records: &mut [BenchRecord]) {
    records.sort_by_key(|r| (r.mini, r.micro));
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub mini: usize,
    pub throughput_a_sps: f64,
    pub throughput_b_sps: f64,
    /// `throughput_a / throughput_b × normalization`.
    pub speedup: f64,
}

fn best_by_mini(records: &[BenchRecord]) -> BTreeMap<usize, f64> {
    let mut best = BTreeMap::new();
    for r in records.iter().filter(|r| r.valid) {
        if let Some(t) = r.throughput_sps {
            let e = best.entry(r.mini).or_insert(t);
            if t > *e {
                *e = t;
            }
        }
    }
    best
}

/// Per-mini speedup of `a` over `b`, using the best valid throughput at each
/// mini-batch size.
pub fn compare(a: &[BenchRecord], b: &[BenchRecord], normalization: f64) -> Result<Vec<SpeedupRow>, BenchError> {
    let (ba, bb) = (best_by_mini(a), best_by_mini(b));
    let missing_in_a: Vec<usize> = bb.keys().filter(|k| !ba.contains_key(k)).copied().collect();
    let missing_in_b: Vec<usize> = ba.keys().filter(|k| !bb.contains_key(k)).copied().collect();
    if !missing_in_a.is_empty() || !missing_in_b.is_empty() {
        return Err(BenchError::GridMismatch {
            missing_in_a,
            missing_in_b,
        });
    }
    Ok(ba
        .iter()
        .map(|(&mini, &ta)| {
            let tb = bb[&mini];
            SpeedupRow {
                mini,
                throughput_a_sps: ta,
                throughput_b_sps: tb,
                speedup: ta / tb * normalization,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::AccelProfile;

    fn quick() -> BenchPlan {
        BenchPlan {
            mini_batch_sizes: vec![1, 4, 16],
            replicates: 3,
            warmup_batches: 2,
            min_wall_clock_s: 0.05,
            ..BenchPlan::default()
        }
    }

    #[test]
    fn profile_passthrough() {
        let mut t = SimulatedTarget::new(AccelProfile::affine("one", 1.0, 0.0), "m", 1);
        let r = run_point(&quick(), &mut t, 1, 1).unwrap();
        assert!((r.mean_latency_ms.unwrap() - 1.0).abs() < 1e-9);
        assert!((r.throughput_sps.unwrap() - 1000.0).abs() < 1e-6);
        assert_eq!(r.latency_ci95_ms, Some(0.0));
        assert_eq!(r.throughput_ci95_sps, Some(0.0));
    }

    #[test]
    fn micro_over_mini_is_invalid() {
        let mut t = SimulatedTarget::new(AccelProfile::affine("one", 1.0, 0.0), "m", 1);
        let r = run_point(&quick(), &mut t, 4, 16).unwrap();
        assert!(!r.valid);
        assert!(r.mean_latency_ms.is_none() && r.throughput_sps.is_none());
        assert_eq!(r.n_batches, 0);
    }

    #[test]
    fn plan_validation() {
        let mut p = quick();
        p.replicates = 0;
        assert!(p.validate().is_err());
        let mut p = quick();
        p.min_wall_clock_s = 0.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn preferred_sizes_added() {
        let p = BenchPlan {
            mini_batch_sizes: vec![4, 16, 64],
            preferred_mb: true,
            ..quick()
        };
        assert_eq!(p.minis(), vec![4, 12, 16, 60, 64]);
    }

    #[test]
    fn default_sweep_has_eleven_records() {
        let plan = BenchPlan {
            min_wall_clock_s: 0.01,
            ..BenchPlan::default()
        };
        let mut t = SimulatedTarget::new(AccelProfile::affine("p", 0.5, 1e-4), "m", 1);
        let s = run_sweep(&plan, &mut t).unwrap();
        assert_eq!(s.records.len(), 11);
        assert!(s.highlights.is_empty());
    }

    #[test]
    fn compare_identity_and_normalization() {
        let plan = quick();
        let mut t = SimulatedTarget::new(AccelProfile::affine("p", 0.5, 1e-3), "m", 1);
        let a = run_sweep(&plan, &mut t).unwrap().records;
        for row in compare(&a, &a, 1.0).unwrap() {
            assert_eq!(row.speedup, 1.0);
        }
        for row in compare(&a, &a, 1.3).unwrap() {
            assert!((row.speedup - 1.3).abs() < 1e-12);
        }
        let err = compare(&a, &a[..2], 1.0).unwrap_err();
        match err {
            BenchError::GridMismatch { missing_in_a, missing_in_b } => {
                assert!(missing_in_a.is_empty());
                assert_eq!(missing_in_b, vec![16]);
            }
            e => panic!("{e}"),
        }
    }
}
