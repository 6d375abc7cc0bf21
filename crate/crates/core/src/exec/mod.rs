//! Mini-batch execution split into micro-batches across tiles, on either a
//! real CPU backend or a calibrated latency model.

mod profile;

pub use profile::{
    calibrate_profile, shipped_profile, shipped_profile_names, AccelProfile, Anchor, Calibration, ProfileError,
    TileScaling,
};

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ModelSpec};
use crate::tensor::Tensor;

pub const MAX_TILES: usize = 4;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("simulated backend needs an accelerator profile")]
    MissingProfile,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    RealCpu,
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecConfig {
    pub tiles: usize,
    pub mini_batch: usize,
    pub micro_batch: usize,
    pub backend: BackendKind,
    /// Require mini- and micro-batch sizes to be multiples of 6.
    pub preferred_mb: bool,
}

impl ExecConfig {
    pub fn new(mini_batch: usize, micro_batch: usize) -> Self {
        ExecConfig {
            tiles: 1,
            mini_batch,
            micro_batch,
            backend: BackendKind::RealCpu,
            preferred_mb: false,
        }
    }

    pub fn simulated(mut self) -> Self {
        self.backend = BackendKind::Simulated;
        self
    }

    pub fn with_tiles(mut self, tiles: usize) -> Self {
        self.tiles = tiles;
        self
    }

    /// Both sizes are multiples of 6.
    pub fn is_preferred_size(&self) -> bool {
        self.mini_batch % 6 == 0 && self.micro_batch % 6 == 0
    }

    pub fn validate(&self) -> Result<(), ExecError> {
        if !(1..=MAX_TILES).contains(&self.tiles) {
            return Err(ExecError::InvalidConfig(format!(
                "tiles must be in 1..={MAX_TILES}, got {}",
                self.tiles
            )));
        }
        plan_microbatches(self.mini_batch, self.micro_batch)?;
        if self.preferred_mb && !self.is_preferred_size() {
            return Err(ExecError::InvalidConfig(format!(
                "preferred sizes must be multiples of 6, got mini {} micro {}",
                self.mini_batch, self.micro_batch
            )));
        }
        Ok(())
    }
}

/// Chunk sizes for a mini-batch: full `micro` chunks plus a final remainder.
pub fn plan_microbatches(mini: usize, micro: usize) -> Result<Vec<usize>, ExecError> {
    if mini == 0 || micro == 0 {
        return Err(ExecError::InvalidConfig(format!(
            "mini-batch ({mini}) and micro-batch ({micro}) must be at least 1"
        )));
    }
    if micro > mini {
        return Err(ExecError::InvalidConfig(format!(
            "micro-batch {micro} exceeds mini-batch {mini}"
        )));
    }
    let mut chunks = vec![micro; mini / micro];
    if mini % micro != 0 {
        chunks.push(mini % micro);
    }
    Ok(chunks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecResult {
    /// Present for the real backend only.
    pub outputs: Option<Tensor>,
    pub latency_ms: f64,
    pub samples: usize,
}

/// Samples per second for one executed mini-batch.
pub fn throughput_of(result: &ExecResult) -> f64 {
    result.samples as f64 / (result.latency_ms / 1e3)
}

/// Modeled latency of one mini-batch under `cfg`, without touching data.
pub fn simulate(cfg: &ExecConfig, profile: &AccelProfile) -> Result<ExecResult, ExecError> {
    cfg.validate()?;
    let chunks = plan_microbatches(cfg.mini_batch, cfg.micro_batch)?.len();
    Ok(ExecResult {
        outputs: None,
        latency_ms: profile.latency_ms(cfg.mini_batch, chunks, cfg.tiles),
        samples: cfg.mini_batch,
    })
}

/// Run one mini-batch. The real backend evaluates each micro-batch chunk
/// (spread over up to `tiles` threads) and reports wall-clock latency; the
/// simulated backend returns the profile's modeled latency and no outputs.
pub fn execute(
    model: &ModelSpec,
    batch: &Tensor,
    cfg: &ExecConfig,
    profile: Option<&AccelProfile>,
) -> Result<ExecResult, ExecError> {
    cfg.validate()?;
    if batch.batch() != cfg.mini_batch {
        return Err(ExecError::InvalidConfig(format!(
            "batch holds {} samples, configuration says {}",
            batch.batch(),
            cfg.mini_batch
        )));
    }
    match cfg.backend {
        BackendKind::Simulated => simulate(cfg, profile.ok_or(ExecError::MissingProfile)?),
        BackendKind::RealCpu => {
            let start = Instant::now();
            let outputs = run_chunks(model, batch, cfg)?;
            let latency_ms = (start.elapsed().as_secs_f64() * 1e3).max(1e-6);
            Ok(ExecResult {
                outputs: Some(outputs),
                latency_ms,
                samples: cfg.mini_batch,
            })
        }
    }
}

fn run_chunks(model: &ModelSpec, batch: &Tensor, cfg: &ExecConfig) -> Result<Tensor, ExecError> {
    let chunks = plan_microbatches(cfg.mini_batch, cfg.micro_batch)?;
    let mut bounds = Vec::with_capacity(chunks.len());
    let mut start = 0;
    for c in chunks {
        bounds.push((start, start + c));
        start += c;
    }
    let workers = cfg.tiles.min(bounds.len()).max(1);
    let parts: Vec<Result<Tensor, ModelError>> = if workers == 1 {
        bounds
            .iter()
            .map(|&(s, e)| model.forward(&batch.slice_rows(s, e)))
            .collect()
    } else {
        // tile t takes chunks t, t + tiles, ...
        let mut slots: Vec<Option<Result<Tensor, ModelError>>> = (0..bounds.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|t| {
                    let bounds = &bounds;
                    scope.spawn(move || {
                        bounds
                            .iter()
                            .enumerate()
                            .skip(t)
                            .step_by(workers)
                            .map(|(i, &(s, e))| (i, model.forward(&batch.slice_rows(s, e))))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("tile worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|s| s.expect("every chunk ran")).collect()
    };
    let parts = parts.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(Tensor::concat_rows(&parts).expect("chunks share row shape"))
}
