//! Multi-model TCP inference server.
//!
//! Each session gets a reader thread and a writer thread. Each model gets one
//! worker thread fed by a FIFO queue, so requests for one model run one at a
//! time in arrival order while different models run concurrently.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, warn};
use thiserror::Error;

use super::wire::{FrameReadError, ResponseBody, Status, WireMessage, WireRequest, WireResponse, WireTensor};
use crate::exec::{execute, plan_microbatches, AccelProfile, BackendKind, ExecConfig};
use crate::model::{ModelError, ModelManifest, ModelSpec};
use crate::timing::sleep_until;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("registry is empty")]
    EmptyRegistry,
    #[error("model `{0}` uses the simulated backend but has no profile")]
    MissingProfile(String),
    #[error("manifest list {path}: {message}")]
    ManifestList { path: PathBuf, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A servable model with its execution settings.
#[derive(Debug, Clone)]
pub struct ModelEntry {
    pub model: Arc<ModelSpec>,
    /// `micro_batch` 0 means one chunk per request; `mini_batch` is ignored
    /// because each request sets its own.
    pub exec: ExecConfig,
    pub profile: Option<AccelProfile>,
}

impl ModelEntry {
    pub fn real(model: ModelSpec) -> Self {
        ModelEntry {
            model: Arc::new(model),
            exec: ExecConfig::new(0, 0),
            profile: None,
        }
    }

    pub fn simulated(model: ModelSpec, profile: AccelProfile) -> Self {
        ModelEntry {
            model: Arc::new(model),
            exec: ExecConfig::new(0, 0).simulated(),
            profile: Some(profile),
        }
    }

    pub fn with_exec(mut self, tiles: usize, micro_batch: usize) -> Self {
        self.exec.tiles = tiles;
        self.exec.micro_batch = micro_batch;
        self
    }

    fn config_for(&self, batch: usize) -> ExecConfig {
        let micro = match self.exec.micro_batch {
            0 => batch,
            m => m.min(batch),
        };
        ExecConfig {
            mini_batch: batch,
            micro_batch: micro,
            preferred_mb: false,
            ..self.exec
        }
    }
}

/// Model id to entry. Immutable once the server starts.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    entries: BTreeMap<String, ModelEntry>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, entry: ModelEntry) -> Option<ModelEntry> {
        self.entries.insert(id.into(), entry)
    }

    pub fn get(&self, id: &str) -> Option<&ModelEntry> {
        self.entries.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Load models from `path`, which is either a single model manifest or a
    /// list with one manifest path per line (relative to the list file).
    pub fn from_manifest_list(
        path: &Path,
        backend: BackendKind,
        profile: Option<&AccelProfile>,
    ) -> Result<Self, ServerError> {
        let text = fs::read_to_string(path)?;
        let lines: Vec<&str> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .collect();
        let paths: Vec<PathBuf> = if lines.iter().any(|l| l.contains('=')) {
            vec![path.to_path_buf()]
        } else {
            let base = path.parent().unwrap_or(Path::new("."));
            lines.iter().map(|l| base.join(l)).collect()
        };
        if paths.is_empty() {
            return Err(ServerError::ManifestList {
                path: path.to_path_buf(),
                message: "no manifests listed".into(),
            });
        }
        let mut reg = Registry::new();
        for p in paths {
            let manifest = ModelManifest::load(&p)?;
            let model = manifest.build()?;
            let entry = match backend {
                BackendKind::RealCpu => ModelEntry::real(model),
                BackendKind::Simulated => ModelEntry::simulated(
                    model,
                    profile.cloned().ok_or_else(|| ServerError::MissingProfile(manifest.name.clone()))?,
                ),
            }
            .with_exec(manifest.tiles.unwrap_or(1), manifest.micro_batch.unwrap_or(0));
            reg.insert(manifest.name.clone(), entry);
        }
        Ok(reg)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ServerConfig {
    /// Artificial one-way delay applied to every inbound request and every
    /// outbound response.
    pub inject_delay: Duration,
}

struct Job {
    request: WireRequest,
    not_before: Instant,
    reply: Sender<Outgoing>,
}

struct Outgoing {
    frame: Vec<u8>,
    not_before: Instant,
}

/// A running server. Dropping it shuts it down.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
    sessions: Arc<Mutex<Vec<TcpStream>>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// `tcp://host:port` form accepted by the client.
    pub fn endpoint(&self) -> String {
        format!("tcp://{}", self.addr)
    }

    /// Stop accepting, close every open session and wait for the accept loop.
    pub fn shutdown(mut self) {
        self.stop_now();
    }

    /// Block until the accept loop ends (for foreground serving).
    pub fn wait(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    fn stop_now(&mut self) {
        let Some(handle) = self.accept.take() else { return };
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        let _ = handle.join();
        for s in self.sessions.lock().expect("session list").drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}

/// Bind `bind_addr` and start serving `registry` on background threads.
pub fn serve(registry: Registry, bind_addr: &str, config: ServerConfig) -> Result<ServerHandle, ServerError> {
    if registry.is_empty() {
        return Err(ServerError::EmptyRegistry);
    }
    for (id, e) in &registry.entries {
        if e.exec.backend == BackendKind::Simulated && e.profile.is_none() {
            return Err(ServerError::MissingProfile(id.clone()));
        }
    }
    let listener = TcpListener::bind(bind_addr)?;
    let addr = listener.local_addr()?;
    let delay = config.inject_delay;

    let mut queues = HashMap::new();
    for (id, entry) in registry.entries {
        let (tx, rx) = mpsc::channel::<Job>();
        thread::Builder::new()
            .name(format!("model-{id}"))
            .spawn(move || model_worker(entry, rx, delay))?;
        queues.insert(id, tx);
    }
    let queues = Arc::new(queues);

    let stop = Arc::new(AtomicBool::new(false));
    let sessions = Arc::new(Mutex::new(Vec::new()));
    let accept = {
        let stop = Arc::clone(&stop);
        let sessions = Arc::clone(&sessions);
        thread::Builder::new().name("accept".into()).spawn(move || {
            for conn in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let stream = match conn {
                    Ok(s) => s,
                    Err(e) => {
                        warn!("accept failed: {e}");
                        continue;
                    }
                };
                if let Err(e) = start_session(stream, Arc::clone(&queues), delay, &sessions) {
                    warn!("session setup failed: {e}");
                }
            }
        })?
    };
    Ok(ServerHandle {
        addr,
        stop,
        accept: Some(accept),
        sessions,
    })
}

fn start_session(
    stream: TcpStream,
    queues: Arc<HashMap<String, Sender<Job>>>,
    delay: Duration,
    sessions: &Mutex<Vec<TcpStream>>,
) -> std::io::Result<()> {
    stream.set_nodelay(true)?;
    let peer = stream.peer_addr()?;
    sessions.lock().expect("session list").push(stream.try_clone()?);
    let mut write_half = stream.try_clone()?;
    let (out_tx, out_rx) = mpsc::channel::<Outgoing>();

    thread::Builder::new().name(format!("write-{peer}")).spawn(move || {
        for out in out_rx {
            sleep_until(out.not_before);
            if let Err(e) = write_half.write_all(&out.frame) {
                debug!("{peer}: write failed: {e}");
                break;
            }
        }
    })?;

    let mut read_half = stream;
    thread::Builder::new().name(format!("read-{peer}")).spawn(move || loop {
        match WireMessage::read_from(&mut read_half) {
            Ok(WireMessage::Request(request)) => {
                let arrival = Instant::now();
                match queues.get(&request.model_id) {
                    Some(q) => {
                        let job = Job {
                            request,
                            not_before: arrival + delay,
                            reply: out_tx.clone(),
                        };
                        if q.send(job).is_err() {
                            break;
                        }
                    }
                    None => {
                        let resp = WireResponse::error(
                            request.request_id,
                            &request.model_id,
                            Status::UnknownModel,
                            format!("no model `{}` is registered", request.model_id),
                        );
                        let _ = out_tx.send(Outgoing {
                            frame: encode_response(resp),
                            not_before: arrival + 2 * delay,
                        });
                    }
                }
            }
            Ok(WireMessage::Response(_)) => {
                warn!("{peer}: client sent a response frame, closing session");
                let _ = read_half.shutdown(Shutdown::Both);
                break;
            }
            Err(FrameReadError::Closed) => {
                let _ = read_half.shutdown(Shutdown::Read);
                break;
            }
            Err(e) => {
                warn!("{peer}: {e}, closing session");
                let _ = read_half.shutdown(Shutdown::Both);
                break;
            }
        }
    })?;
    Ok(())
}

fn encode_response(resp: WireResponse) -> Vec<u8> {
    let id = resp.request_id;
    match WireMessage::Response(resp).encode() {
        Ok(frame) => frame,
        Err(e) => WireMessage::Response(WireResponse::error(id, "", Status::ServerError, e.to_string()))
            .encode()
            .expect("plain error frame encodes"),
    }
}

fn model_worker(entry: ModelEntry, jobs: Receiver<Job>, delay: Duration) {
    for job in jobs {
        sleep_until(job.not_before);
        let id = job.request.request_id;
        let model_id = job.request.model_id.clone();
        let resp = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| handle(&entry, &job.request)))
            .unwrap_or_else(|_| WireResponse::error(id, &model_id, Status::ServerError, "inference panicked"));
        let _ = job.reply.send(Outgoing {
            frame: encode_response(resp),
            not_before: Instant::now() + delay,
        });
    }
}

fn handle(entry: &ModelEntry, req: &WireRequest) -> WireResponse {
    let fail = |status, msg: String| WireResponse::error(req.request_id, &req.model_id, status, msg);
    let t = &req.tensor;
    match t.expected_payload_len() {
        Some(n) if n == t.payload.len() => {}
        _ => {
            return fail(
                Status::BadShape,
                format!("payload is {} bytes, shape {:?} at {} disagrees", t.payload.len(), t.shape, t.dtype),
            )
        }
    }
    let model = &entry.model;
    let row: Vec<usize> = t.shape.iter().skip(1).map(|&d| d as usize).collect();
    if t.shape.is_empty() || row != model.input_shape {
        return fail(
            Status::BadShape,
            format!("model expects [batch, {:?}], got {:?}", model.input_shape, t.shape),
        );
    }
    let batch = match t.to_tensor() {
        Ok(b) => b,
        Err(e) => return fail(Status::BadShape, e.to_string()),
    };
    let b = batch.batch();
    let started = Instant::now();
    let outputs = match entry.exec.backend {
        BackendKind::RealCpu if b == 0 => model.forward(&batch).map_err(|e| e.to_string()),
        BackendKind::RealCpu => execute(model, &batch, &entry.config_for(b), None)
            .map_err(|e| e.to_string())
            .map(|r| r.outputs.expect("real backend returns outputs")),
        BackendKind::Simulated => {
            if b > 0 {
                let profile = entry.profile.as_ref().expect("checked at start");
                let cfg = entry.config_for(b);
                let chunks = plan_microbatches(b, cfg.micro_batch).map(|c| c.len()).unwrap_or(1);
                let ms = profile.latency_ms(b, chunks, cfg.tiles);
                sleep_until(started + Duration::from_secs_f64(ms / 1e3));
            }
            Ok(model.zero_output(b))
        }
    };
    match outputs {
        Ok(out) => WireResponse {
            request_id: req.request_id,
            model_id: req.model_id.clone(),
            body: ResponseBody::Ok(WireTensor::from_tensor(&out)),
        },
        Err(msg) => fail(Status::ServerError, msg),
    }
}
