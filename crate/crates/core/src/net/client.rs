//! Client session: synchronous and windowed-pipelined remote inference.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::{self, Write};
use std::net::TcpStream;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use super::wire::{DecodeError, EncodeError, FrameReadError, ResponseBody, Status, WireMessage, WireRequest, WireTensor};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("no response to request {request_id} within {timeout:?}")]
    Timeout { request_id: u64, timeout: Duration },
    #[error("server closed the connection")]
    Disconnected,
    #[error("request {request_id} failed with {status}: {message}")]
    Remote {
        request_id: u64,
        status: Status,
        message: String,
    },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("window must be at least 1")]
    ZeroWindow,
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy)]
pub struct ClientOptions {
    pub timeout: Duration,
    /// Default window for [`ClientSession::infer_pipelined`].
    pub window: usize,
}

impl Default for ClientOptions {
    fn default() -> Self {
        ClientOptions {
            timeout: Duration::from_secs(30),
            window: 2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RequestTiming {
    pub request_id: u64,
    pub send: Instant,
    pub recv: Option<Instant>,
}

impl RequestTiming {
    pub fn latency_ms(&self) -> Option<f64> {
        self.recv.map(|r| (r - self.send).as_secs_f64() * 1e3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PipelineStats {
    pub batches: usize,
    pub samples: usize,
    pub wall_ms: f64,
    pub throughput_sps: f64,
}

pub struct ClientSession {
    endpoint: String,
    stream: TcpStream,
    options: ClientOptions,
    next_id: u64,
    log: Vec<RequestTiming>,
    log_index: HashMap<u64, usize>,
}

fn socket_addr(endpoint: &str) -> &str {
    endpoint.strip_prefix("tcp://").unwrap_or(endpoint)
}

impl ClientSession {
    /// Connect to `tcp://host:port` (the scheme is optional).
    pub fn connect(endpoint: &str) -> Result<Self, ClientError> {
        Self::connect_with(endpoint, ClientOptions::default())
    }

    pub fn connect_with(endpoint: &str, options: ClientOptions) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(socket_addr(endpoint))?;
        stream.set_nodelay(true)?;
        Ok(ClientSession {
            endpoint: endpoint.to_string(),
            stream,
            options,
            next_id: 1,
            log: Vec::new(),
            log_index: HashMap::new(),
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn options(&self) -> ClientOptions {
        self.options
    }

    /// Send and receive timestamps for every request so far, in send order.
    pub fn timings(&self) -> &[RequestTiming] {
        &self.log
    }

    pub fn clear_timings(&mut self) {
        self.log.clear();
        self.log_index.clear();
    }

    fn send(&mut self, model_id: &str, batch: &Tensor) -> Result<u64, ClientError> {
        let request_id = self.next_id;
        self.next_id += 1;
        let frame = WireMessage::Request(WireRequest {
            request_id,
            model_id: model_id.to_string(),
            tensor: WireTensor::from_tensor(batch),
        })
        .encode()?;
        let send = Instant::now();
        self.stream.write_all(&frame).map_err(map_io)?;
        self.log_index.insert(request_id, self.log.len());
        self.log.push(RequestTiming {
            request_id,
            send,
            recv: None,
        });
        Ok(request_id)
    }

    /// Wait for the next response. `waiting_on` names the request blamed on timeout.
    fn recv(&mut self, waiting_on: u64) -> Result<(u64, Result<Tensor, ClientError>), ClientError> {
        let timeout = self.options.timeout;
        let sent = self
            .log_index
            .get(&waiting_on)
            .map(|&i| self.log[i].send)
            .unwrap_or_else(Instant::now);
        let deadline = sent + timeout;
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            return Err(ClientError::Timeout {
                request_id: waiting_on,
                timeout,
            });
        }
        self.stream.set_read_timeout(Some(left))?;
        let msg = match WireMessage::read_from(&mut self.stream) {
            Ok(m) => m,
            Err(FrameReadError::Io(e)) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                return Err(ClientError::Timeout {
                    request_id: waiting_on,
                    timeout,
                })
            }
            Err(FrameReadError::Closed) => return Err(ClientError::Disconnected),
            Err(FrameReadError::Io(e)) => return Err(map_io(e)),
            Err(FrameReadError::Decode(e)) => return Err(e.into()),
        };
        let recv = Instant::now();
        let WireMessage::Response(resp) = msg else {
            return Err(ClientError::Protocol("server sent a request frame".into()));
        };
        let Some(&i) = self.log_index.get(&resp.request_id) else {
            return Err(ClientError::Protocol(format!("unexpected request id {}", resp.request_id)));
        };
        if self.log[i].recv.is_some() {
            return Err(ClientError::Protocol(format!("duplicate response for {}", resp.request_id)));
        }
        self.log[i].recv = Some(recv);
        let id = resp.request_id;
        let out = match resp.body {
            ResponseBody::Ok(t) => t.to_tensor().map_err(ClientError::from),
            ResponseBody::Error { status, message } => Err(ClientError::Remote {
                request_id: id,
                status,
                message,
            }),
        };
        Ok((id, out))
    }

    /// One request, blocking for its response. Returns outputs and the
    /// round-trip latency in milliseconds.
    pub fn infer_sync(&mut self, model_id: &str, batch: &Tensor) -> Result<(Tensor, f64), ClientError> {
        let id = self.send(model_id, batch)?;
        let (got, out) = self.recv(id)?;
        if got != id {
            return Err(ClientError::Protocol(format!("expected response {id}, got {got}")));
        }
        let latency = self.log[self.log_index[&id]].latency_ms().expect("just received");
        Ok((out?, latency))
    }

    /// Stream `batches` with up to `window` requests in flight. Outputs reach
    /// `on_output` in request order. The first failed response aborts.
    pub fn infer_pipelined<I, F>(
        &mut self,
        model_id: &str,
        batches: I,
        window: usize,
        mut on_output: F,
    ) -> Result<PipelineStats, ClientError>
    where
        I: IntoIterator<Item = Tensor>,
        F: FnMut(usize, Tensor),
    {
        if window == 0 {
            return Err(ClientError::ZeroWindow);
        }
        let start = Instant::now();
        let mut pending = batches.into_iter();
        let mut order: VecDeque<u64> = VecDeque::new();
        let mut ready: BTreeMap<u64, Tensor> = BTreeMap::new();
        let mut in_flight = 0usize;
        let mut sent = 0usize;
        let mut delivered = 0usize;
        let mut samples = 0usize;
        let mut exhausted = false;
        loop {
            while in_flight < window && !exhausted {
                match pending.next() {
                    Some(b) => {
                        let id = self.send(model_id, &b)?;
                        samples += b.batch();
                        sent += 1;
                        in_flight += 1;
                        order.push_back(id);
                    }
                    None => exhausted = true,
                }
            }
            if in_flight == 0 {
                break;
            }
            let oldest = *order.iter().find(|id| !ready.contains_key(id)).expect("a request is in flight");
            let (id, out) = self.recv(oldest)?;
            in_flight -= 1;
            ready.insert(id, out?);
            while let Some(t) = order.front().and_then(|id| ready.remove(id)) {
                order.pop_front();
                on_output(delivered, t);
                delivered += 1;
            }
        }
        let wall = start.elapsed().as_secs_f64();
        Ok(PipelineStats {
            batches: sent,
            samples,
            wall_ms: wall * 1e3,
            throughput_sps: if samples == 0 || wall == 0.0 { 0.0 } else { samples as f64 / wall },
        })
    }

    /// [`ClientSession::infer_pipelined`] collecting outputs into a vector.
    pub fn infer_pipelined_collect<I>(
        &mut self,
        model_id: &str,
        batches: I,
        window: usize,
    ) -> Result<(Vec<Tensor>, PipelineStats), ClientError>
    where
        I: IntoIterator<Item = Tensor>,
    {
        let mut outs = Vec::new();
        let stats = self.infer_pipelined(model_id, batches, window, |_, t| outs.push(t))?;
        Ok((outs, stats))
    }
}

fn map_io(e: io::Error) -> ClientError {
    match e.kind() {
        io::ErrorKind::BrokenPipe | io::ErrorKind::ConnectionReset | io::ErrorKind::ConnectionAborted => {
            ClientError::Disconnected
        }
        _ => ClientError::Io(e),
    }
}

/// Analytic wall time for `n_batches` through a two-stage pipeline: one-way
/// network delay `one_way_ms`, service time `service_ms`, window `window`.
pub fn pipeline_bound_ms(n_batches: usize, one_way_ms: f64, service_ms: f64, window: usize) -> f64 {
    if n_batches == 0 {
        return 0.0;
    }
    let w = window.max(1) as f64;
    let round_trip = 2.0 * one_way_ms + service_ms;
    round_trip + (n_batches - 1) as f64 * service_ms.max(round_trip / w)
}
