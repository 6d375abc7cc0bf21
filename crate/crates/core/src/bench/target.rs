//! Things a benchmark can drive.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::BenchError;
use crate::exec::{execute, plan_microbatches, AccelProfile, ExecConfig};
use crate::feasibility::LinkSpec;
use crate::model::ModelSpec;
use crate::net::ClientSession;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// One mini-batch at a time, each waited for.
    Latency,
    /// As fast as the target allows (pipelined for remote targets).
    Throughput,
}

pub trait BenchTarget {
    /// Value for the `target` report column.
    fn label(&self) -> String;
    fn model(&self) -> String;
    fn tiles(&self) -> usize;
    /// Whether throughput needs its own measurement pass.
    fn separate_throughput(&self) -> bool {
        false
    }
    /// Run `n` mini-batches back to back and return the elapsed milliseconds.
    fn run(&mut self, mini: usize, micro: usize, n: usize, mode: Mode) -> Result<f64, BenchError>;
}

/// Profile-driven target on a virtual clock: no sleeping, no data.
#[derive(Debug, Clone)]
pub struct SimulatedTarget {
    pub profile: AccelProfile,
    pub model: String,
    pub tiles: usize,
}

impl SimulatedTarget {
    pub fn new(profile: AccelProfile, model: impl Into<String>, tiles: usize) -> Self {
        SimulatedTarget {
            profile,
            model: model.into(),
            tiles,
        }
    }
}

impl BenchTarget for SimulatedTarget {
    fn label(&self) -> String {
        format!("sim:{}", self.profile.name)
    }

    fn model(&self) -> String {
        self.model.clone()
    }

    fn tiles(&self) -> usize {
        self.tiles
    }

    fn run(&mut self, mini: usize, micro: usize, n: usize, _mode: Mode) -> Result<f64, BenchError> {
        let cfg = ExecConfig::new(mini, micro).simulated().with_tiles(self.tiles);
        cfg.validate()?;
        let chunks = plan_microbatches(mini, micro)?.len();
        Ok(self.profile.latency_ms(mini, chunks, self.tiles) * n as f64)
    }
}

fn random_input(model: &ModelSpec, mini: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(mini as u64);
    let shape: Vec<usize> = std::iter::once(mini).chain(model.input_shape.iter().copied()).collect();
    let n = shape.iter().product();
    Tensor::with_precision(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), model.precision)
        .expect("shape matches data")
}

/// In-process CPU execution, timed on the wall clock.
pub struct LocalTarget {
    model: Arc<ModelSpec>,
    tiles: usize,
    inputs: HashMap<usize, Tensor>,
}

impl LocalTarget {
    pub fn new(model: Arc<ModelSpec>, tiles: usize) -> Self {
        LocalTarget {
            model,
            tiles,
            inputs: HashMap::new(),
        }
    }
}

impl BenchTarget for LocalTarget {
    fn label(&self) -> String {
        "local".into()
    }

    fn model(&self) -> String {
        self.model.name.clone()
    }

    fn tiles(&self) -> usize {
        self.tiles
    }

    fn run(&mut self, mini: usize, micro: usize, n: usize, _mode: Mode) -> Result<f64, BenchError> {
        let cfg = ExecConfig::new(mini, micro).with_tiles(self.tiles);
        cfg.validate()?;
        let model = &self.model;
        let x = self.inputs.entry(mini).or_insert_with(|| random_input(model, mini));
        let start = Instant::now();
        for _ in 0..n {
            execute(model, x, &cfg, None)?;
        }
        Ok(start.elapsed().as_secs_f64() * 1e3)
    }
}

/// A model served over the wire. Latency runs use window 1, throughput
/// runs use `window` (default 2). Micro-batching is the server's setting.
pub struct RemoteTarget {
    session: ClientSession,
    model_id: String,
    input_shape: Vec<usize>,
    precision: crate::tensor::Precision,
    pub window: usize,
    inputs: HashMap<usize, Tensor>,
}

impl RemoteTarget {
    /// `input_shape` is the per-sample shape the served model expects.
    pub fn new(
        session: ClientSession,
        model_id: impl Into<String>,
        input_shape: Vec<usize>,
        precision: crate::tensor::Precision,
    ) -> Self {
        RemoteTarget {
            session,
            model_id: model_id.into(),
            input_shape,
            precision,
            window: 2,
            inputs: HashMap::new(),
        }
    }

    fn input(&mut self, mini: usize) -> Tensor {
        let shape = &self.input_shape;
        let precision = self.precision;
        self.inputs
            .entry(mini)
            .or_insert_with(|| {
                let full: Vec<usize> = std::iter::once(mini).chain(shape.iter().copied()).collect();
                let mut t = Tensor::zeros(full);
                let mut rng = ChaCha8Rng::seed_from_u64(mini as u64);
                t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
                crate::tensor::round_to_precision(&t, precision)
            })
            .clone()
    }
}

impl BenchTarget for RemoteTarget {
    fn label(&self) -> String {
        self.session.endpoint().to_string()
    }

    fn model(&self) -> String {
        self.model_id.clone()
    }

    fn tiles(&self) -> usize {
        1
    }

    fn separate_throughput(&self) -> bool {
        true
    }

    fn run(&mut self, mini: usize, micro: usize, n: usize, mode: Mode) -> Result<f64, BenchError> {
        if micro != mini {
            return Err(BenchError::Unsupported(
                "remote targets use the server's micro-batch setting; sweep micro sizes on the server".into(),
            ));
        }
        let x = self.input(mini);
        let window = match mode {
            Mode::Latency => 1,
            Mode::Throughput => self.window,
        };
        let stats = self
            .session
            .infer_pipelined(&self.model_id, std::iter::repeat(x).take(n), window, |_, _| {})?;
        Ok(stats.wall_ms)
    }
}

/// Simulated accelerator behind a modeled link, on a virtual clock. Each
/// batch pays service time, two one-way delays and transfer time.
#[derive(Debug, Clone)]
pub struct SimulatedLinkTarget {
    pub inner: SimulatedTarget,
    pub link: LinkSpec,
    pub per_sample_wire_bytes: f64,
}

impl BenchTarget for SimulatedLinkTarget {
    fn label(&self) -> String {
        format!("sim-link:{}", self.inner.profile.name)
    }

    fn model(&self) -> String {
        self.inner.model.clone()
    }

    fn tiles(&self) -> usize {
        self.inner.tiles
    }

    fn run(&mut self, mini: usize, micro: usize, n: usize, mode: Mode) -> Result<f64, BenchError> {
        let service = self.inner.run(mini, micro, n, mode)?;
        let link = 2.0 * self.link.one_way_latency_s * 1e3 + self.link.wire_time_ms(self.per_sample_wire_bytes, mini);
        Ok(service + link * n as f64)
    }
}
