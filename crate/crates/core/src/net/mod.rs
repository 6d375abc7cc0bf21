//! Binary wire protocol, multi-model inference server and client.

pub mod client;
pub mod server;
pub mod wire;

pub use client::{pipeline_bound_ms, ClientError, ClientOptions, ClientSession, PipelineStats, RequestTiming};
pub use server::{serve, ModelEntry, Registry, ServerConfig, ServerError, ServerHandle};
pub use wire::{
    frame_overhead_bytes, DecodeError, DecodeErrorKind, FrameReadError, ResponseBody, Status, WireMessage,
    WireRequest, WireResponse, WireTensor,
};
