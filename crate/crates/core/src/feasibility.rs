//! Analytic feasibility of remote inference: bytes per flop, link capacity,
//! workload demand and the local-versus-remote crossover.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::DEFAULT_MINI_BATCHES;
use crate::exec::AccelProfile;
use crate::model::ModelAccounting;
use crate::net::frame_overhead_bytes;

#[derive(Debug, Error, PartialEq)]
pub enum FeasibilityError {
    #[error("model has zero flops per sample")]
    ZeroFlops,
    #[error("workload needs a timestep budget or a per-rank target rate")]
    NoDemandBasis,
    #[error("invalid {what}: {message}")]
    Invalid { what: &'static str, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub bandwidth_bits_per_s: f64,
    pub one_way_latency_s: f64,
    /// Non-payload bytes for one request/response exchange.
    pub protocol_overhead_bytes_per_msg: f64,
}

impl LinkSpec {
    pub fn new(bandwidth_bits_per_s: f64, one_way_latency_s: f64) -> Self {
        LinkSpec {
            bandwidth_bits_per_s,
            one_way_latency_s,
            protocol_overhead_bytes_per_msg: 0.0,
        }
    }

    /// Overhead of one request frame plus one response frame for a model id
    /// of `model_id_len` bytes and the given tensor ranks.
    pub fn with_frame_overhead(mut self, model_id_len: usize, in_rank: usize, out_rank: usize) -> Self {
        self.protocol_overhead_bytes_per_msg =
            (frame_overhead_bytes(model_id_len, in_rank) + frame_overhead_bytes(model_id_len, out_rank)) as f64;
        self
    }

    pub fn check(&self) -> Result<(), FeasibilityError> {
        let bad = |m: String| Err(FeasibilityError::Invalid { what: "link", message: m });
        if !(self.bandwidth_bits_per_s > 0.0) {
            return bad(format!("bandwidth must be positive, got {}", self.bandwidth_bits_per_s));
        }
        if !(self.one_way_latency_s >= 0.0) || !(self.protocol_overhead_bytes_per_msg >= 0.0) {
            return bad("latency and overhead must be non-negative".into());
        }
        Ok(())
    }

    /// Milliseconds to move one batch's request and response payloads.
    pub fn wire_time_ms(&self, per_sample_wire_bytes: f64, batch: usize) -> f64 {
        let bytes = per_sample_wire_bytes * batch as f64 + self.protocol_overhead_bytes_per_msg;
        bytes * 8.0 / self.bandwidth_bits_per_s * 1e3
    }
}

/// Parses `bw=100e9,lat=1e-6[,overhead=84]`.
impl FromStr for LinkSpec {
    type Err = FeasibilityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut link = LinkSpec::new(0.0, 0.0);
        for (k, v) in key_values(s, "link")? {
            match k {
                "bw" | "bandwidth" => link.bandwidth_bits_per_s = v,
                "lat" | "latency" => link.one_way_latency_s = v,
                "overhead" => link.protocol_overhead_bytes_per_msg = v,
                _ => return Err(invalid("link", format!("unknown key `{k}`"))),
            }
        }
        link.check()?;
        Ok(link)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub ranks: usize,
    pub zones_per_rank: usize,
    pub inferences_per_zone: f64,
    /// Independent models per rank (one per material); each model sees the
    /// full per-model demand.
    pub models_per_rank: usize,
    pub timestep_budget_s: Option<f64>,
    /// Fixed per-rank rate instead of a zone count.
    pub target_sps_per_rank: Option<f64>,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            ranks: 1,
            zones_per_rank: 10_000,
            inferences_per_zone: 2.5,
            models_per_rank: 5,
            timestep_budget_s: Some(1.0),
            target_sps_per_rank: None,
        }
    }
}

/// Parses `ranks=1,zones=10000,ipz=2.5,budget=1.0[,models=5][,target=1e5]`.
impl FromStr for WorkloadSpec {
    type Err = FeasibilityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut w = WorkloadSpec {
            timestep_budget_s: None,
            ..WorkloadSpec::default()
        };
        for (k, v) in key_values(s, "workload")? {
            let count = || {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(invalid("workload", format!("`{k}` must be a whole number")))
                }
            };
            match k {
                "ranks" => w.ranks = count()?,
                "zones" => w.zones_per_rank = count()?,
                "ipz" => w.inferences_per_zone = v,
                "models" => w.models_per_rank = count()?,
                "budget" => w.timestep_budget_s = Some(v),
                "target" => w.target_sps_per_rank = Some(v),
                _ => return Err(invalid("workload", format!("unknown key `{k}`"))),
            }
        }
        Ok(w)
    }
}

fn invalid(what: &'static str, message: String) -> FeasibilityError {
    FeasibilityError::Invalid { what, message }
}

fn key_values<'a>(s: &'a str, what: &'static str) -> Result<Vec<(&'a str, f64)>, FeasibilityError> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| invalid(what, format!("expected key=value, got `{p}`")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| invalid(what, format!("`{}` is not a number", v.trim())))?;
            Ok((k.trim(), v))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    NetworkBound,
    AcceleratorBound,
    Feasible,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::NetworkBound => "network_bound",
            Verdict::AcceleratorBound => "accelerator_bound",
            Verdict::Feasible => "feasible",
        })
    }
}

/// Wire bytes per flop for one sample.
pub fn bf_ratio(acct: &ModelAccounting) -> Result<f64, FeasibilityError> {
    if !(acct.flops_per_sample > 0.0) {
        return Err(FeasibilityError::ZeroFlops);
    }
    Ok(acct.wire_bytes_per_sample() as f64 / acct.flops_per_sample)
}

/// Samples per second the link can carry at `batch` samples per message.
pub fn link_capacity_sps(link: &LinkSpec, per_sample_wire_bytes: f64, batch: usize) -> f64 {
    let per_sample = per_sample_wire_bytes + link.protocol_overhead_bytes_per_msg / batch.max(1) as f64;
    link.bandwidth_bits_per_s / 8.0 / per_sample
}

/// Required inference rate in samples per second.
pub fn demand_sps(w: &WorkloadSpec) -> Result<f64, FeasibilityError> {
    if let Some(target) = w.target_sps_per_rank {
        if !(target >= 0.0) {
            return Err(invalid("workload", "target rate must be non-negative".into()));
        }
        return Ok(w.ranks as f64 * target);
    }
    let budget = w.timestep_budget_s.ok_or(FeasibilityError::NoDemandBasis)?;
    if !(budget > 0.0) {
        return Err(invalid("workload", "timestep budget must be positive".into()));
    }
    if !(w.inferences_per_zone >= 0.0) {
        return Err(invalid("workload", "inferences per zone must be non-negative".into()));
    }
    Ok(w.ranks as f64 * w.zones_per_rank as f64 * w.inferences_per_zone / budget)
}

/// Remote round-trip latency for a batch: service plus two one-way link
/// delays plus transfer time.
pub fn remote_latency_ms(remote: &AccelProfile, link: &LinkSpec, per_sample_wire_bytes: f64, batch: usize) -> f64 {
    remote.single_chunk_latency_ms(batch) + 2.0 * link.one_way_latency_s * 1e3 + link.wire_time_ms(per_sample_wire_bytes, batch)
}

/// Smallest mini-batch in `minis` where local execution is strictly faster
/// than remote. Ties favor remote.
pub fn crossover(
    local: &AccelProfile,
    remote: &AccelProfile,
    link: &LinkSpec,
    per_sample_wire_bytes: f64,
    minis: &[usize],
) -> Option<usize> {
    let mut sorted = minis.to_vec();
    sorted.sort_unstable();
    sorted
        .into_iter()
        .find(|&b| local.single_chunk_latency_ms(b) < remote_latency_ms(remote, link, per_sample_wire_bytes, b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub model: String,
    pub per_sample_wire_bytes: f64,
    pub flops_per_sample: f64,
    pub bf_ratio: f64,
    pub link: LinkSpec,
    pub workload: WorkloadSpec,
    pub remote_profile: String,
    pub local_profile: Option<String>,
    /// Mini-batch at which the remote accelerator peaks.
    pub operating_mini_batch: usize,
    pub link_capacity_sps: f64,
    pub demand_sps: f64,
    pub accelerator_capacity_sps: f64,
    pub verdict: Verdict,
    pub crossover_mini_batch: Option<usize>,
}

pub struct AssessInputs<'a> {
    pub model: &'a str,
    pub accounting: ModelAccounting,
    pub link: LinkSpec,
    pub workload: WorkloadSpec,
    pub remote: &'a AccelProfile,
    pub local: Option<&'a AccelProfile>,
    /// Candidate mini-batch sizes; empty means the default sweep.
    pub minis: Vec<usize>,
}

/// Verdict from the binding (smaller) capacity.
pub fn verdict(link_capacity: f64, accelerator_capacity: f64, demand: f64) -> Verdict {
    if link_capacity.min(accelerator_capacity) >= demand {
        Verdict::Feasible
    } else if link_capacity < accelerator_capacity {
        Verdict::NetworkBound
    } else {
        Verdict::AcceleratorBound
    }
}

pub fn assess(inp: &AssessInputs<'_>) -> Result<FeasibilityReport, FeasibilityError> {
    inp.link.check()?;
    let bf = bf_ratio(&inp.accounting)?;
    let demand = demand_sps(&inp.workload)?;
    let minis: Vec<usize> = if inp.minis.is_empty() {
        DEFAULT_MINI_BATCHES.to_vec()
    } else {
        inp.minis.iter().copied().filter(|&m| m > 0).collect()
    };
    if minis.is_empty() {
        return Err(invalid("mini-batch list", "no positive sizes".into()));
    }
    let wire = inp.accounting.wire_bytes_per_sample() as f64;
    let throughput = |b: usize| b as f64 / (inp.remote.single_chunk_latency_ms(b) / 1e3);
    let operating = minis
        .iter()
        .copied()
        .fold(minis[0], |best, b| if throughput(b) > throughput(best) { b } else { best });
    let accel = throughput(operating);
    let link_cap = link_capacity_sps(&inp.link, wire, operating);
    Ok(FeasibilityReport {
        model: inp.model.to_string(),
        per_sample_wire_bytes: wire,
        flops_per_sample: inp.accounting.flops_per_sample,
        bf_ratio: bf,
        link: inp.link,
        workload: inp.workload,
        remote_profile: inp.remote.name.clone(),
        local_profile: inp.local.map(|l| l.name.clone()),
        operating_mini_batch: operating,
        link_capacity_sps: link_cap,
        demand_sps: demand,
        accelerator_capacity_sps: accel,
        verdict: verdict(link_cap, accel, demand),
        crossover_mini_batch: inp.local.and_then(|l| crossover(l, inp.remote, &inp.link, wire, &minis)),
    })
}
