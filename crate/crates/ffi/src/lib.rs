//! C ABI over the cogsim reference models, inference client and
//! feasibility helpers.
//!
//! Every fallible function returns a [`CogsimStatus`]. On failure the
//! message is available from [`cogsim_last_error`] on the same thread until
//! the next failing call. Handles are opaque and must be released with the
//! matching `_free` function. Tensors cross the boundary as row-major `float`
//! buffers; values are rounded to the model or request precision.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::time::Duration;

use cogsim::feasibility::{self, LinkSpec, Verdict};
use cogsim::model::{build_hermit, build_mir, HermitConfig, MirConfig, ModelManifest, ModelSpec};
use cogsim::net::{ClientError, ClientOptions, ClientSession};
use cogsim::tensor::{Precision, Tensor};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CogsimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    ModelError = 4,
    IoError = 5,
    Timeout = 6,
    Disconnected = 7,
    RemoteError = 8,
    ProtocolError = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CogsimVerdict {
    Feasible = 0,
    NetworkBound = 1,
    AcceleratorBound = 2,
}

/// A built model. Opaque to C.
pub struct CogsimModel {
    spec: ModelSpec,
}

/// A connected inference session. Opaque to C.
pub struct CogsimClient {
    session: ClientSession,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

type Failure = (CogsimStatus, String);

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CogsimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CogsimStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CogsimStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    (CogsimStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    (CogsimStatus::InvalidArgument, msg.into())
}

fn model_err(e: impl std::fmt::Display) -> Failure {
    (CogsimStatus::ModelError, e.to_string())
}

fn client_err(e: ClientError) -> Failure {
    let status = match &e {
        ClientError::Timeout { .. } => CogsimStatus::Timeout,
        ClientError::Disconnected => CogsimStatus::Disconnected,
        ClientError::Remote { .. } => CogsimStatus::RemoteError,
        ClientError::Protocol(_) | ClientError::ZeroWindow | ClientError::Decode(_) | ClientError::Encode(_) => {
            CogsimStatus::ProtocolError
        }
        ClientError::Tensor(_) => CogsimStatus::InvalidArgument,
        ClientError::Io(_) => CogsimStatus::IoError,
    };
    (status, e.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

fn precision(tag: u8) -> Result<Precision, Failure> {
    Precision::from_tag(tag).ok_or_else(|| invalid(format!("unknown precision tag {tag}")))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn model_ref<'a>(m: *const CogsimModel) -> Result<&'a ModelSpec, Failure> {
    m.as_ref().map(|m| &m.spec).ok_or_else(|| null("model"))
}

unsafe fn write_out<T>(out: *mut T, v: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = v;
    Ok(())
}

/// Message of the last failed call on this thread. Never null; valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cogsim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn cogsim_status_name(status: CogsimStatus) -> *const c_char {
    let s: &'static CStr = match status {
        CogsimStatus::Ok => c"ok",
        CogsimStatus::NullPointer => c"null_pointer",
        CogsimStatus::InvalidArgument => c"invalid_argument",
        CogsimStatus::BufferTooSmall => c"buffer_too_small",
        CogsimStatus::ModelError => c"model_error",
        CogsimStatus::IoError => c"io_error",
        CogsimStatus::Timeout => c"timeout",
        CogsimStatus::Disconnected => c"disconnected",
        CogsimStatus::RemoteError => c"remote_error",
        CogsimStatus::ProtocolError => c"protocol_error",
        CogsimStatus::Panic => c"panic",
    };
    s.as_ptr()
}

/// Build the default dense surrogate with the given seed and precision tag
/// (0 = f32, 1 = f16, 2 = bf16).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn cogsim_model_hermit(seed: u64, precision_tag: u8, out: *mut *mut CogsimModel) -> CogsimStatus {
    guard(|| {
        let cfg = HermitConfig {
            seed,
            precision: precision(precision_tag)?,
            ..HermitConfig::default()
        };
        store(out, CogsimModel { spec: build_hermit(&cfg).map_err(model_err)? })
    })
}

/// Build the default convolutional autoencoder.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn cogsim_model_mir(seed: u64, precision_tag: u8, out: *mut *mut CogsimModel) -> CogsimStatus {
    guard(|| {
        let cfg = MirConfig {
            seed,
            precision: precision(precision_tag)?,
            ..MirConfig::default()
        };
        store(out, CogsimModel { spec: build_mir(&cfg).map_err(model_err)? })
    })
}

/// Build a model from a manifest file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` as above.
#[no_mangle]
pub unsafe extern "C" fn cogsim_model_from_manifest(path: *const c_char, out: *mut *mut CogsimModel) -> CogsimStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let manifest = ModelManifest::load(Path::new(path)).map_err(model_err)?;
        store(out, CogsimModel { spec: manifest.build().map_err(model_err)? })
    })
}

/// Release a model. Null is ignored.
///
/// # Safety
/// `model` must come from a `cogsim_model_*` constructor and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn cogsim_model_free(model: *mut CogsimModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of owned parameters.
///
/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cogsim_model_param_count(model: *const CogsimModel, out: *mut u64) -> CogsimStatus {
    guard(|| write_out(out, model_ref(model)?.count_params() as u64, "out"))
}

/// Elements per input sample and per output sample.
///
/// # Safety
/// `model` must be a live handle; `in_len` and `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn cogsim_model_sample_lens(
    model: *const CogsimModel,
    in_len: *mut usize,
    out_len: *mut usize,
) -> CogsimStatus {
    guard(|| {
        let m = model_ref(model)?;
        write_out(in_len, m.input_shape.iter().product(), "in_len")?;
        write_out(out_len, m.output_shape.iter().product(), "out_len")
    })
}

/// Floating-point operations and wire bytes (input + output) per sample.
///
/// # Safety
/// `model` must be a live handle; `flops` and `wire_bytes` writable.
#[no_mangle]
pub unsafe extern "C" fn cogsim_model_accounting(
    model: *const CogsimModel,
    flops: *mut f64,
    wire_bytes: *mut u64,
) -> CogsimStatus {
    guard(|| {
        let a = model_ref(model)?.account();
        write_out(flops, a.flops_per_sample, "flops")?;
        write_out(wire_bytes, a.wire_bytes_per_sample() as u64, "wire_bytes")
    })
}

/// Run `batch` samples through the model locally. `input` holds
/// `batch * in_len` values; `output` must hold `batch * out_len`.
///
/// # Safety
/// `input` must be readable and `output` writable for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn cogsim_model_forward(
    model: *const CogsimModel,
    input: *const f32,
    batch: usize,
    output: *mut f32,
    output_capacity: usize,
) -> CogsimStatus {
    guard(|| {
        let m = model_ref(model)?;
        if input.is_null() {
            return Err(null("input"));
        }
        if output.is_null() {
            return Err(null("output"));
        }
        let in_len: usize = m.input_shape.iter().product();
        let out_len: usize = m.output_shape.iter().product();
        let need = batch
            .checked_mul(out_len)
            .ok_or_else(|| invalid("batch too large"))?;
        if output_capacity < need {
            return Err((CogsimStatus::BufferTooSmall, format!("output needs {need} values, capacity {output_capacity}")));
        }
        let n = batch.checked_mul(in_len).ok_or_else(|| invalid("batch too large"))?;
        let data = std::slice::from_raw_parts(input, n).to_vec();
        let shape = std::iter::once(batch).chain(m.input_shape.iter().copied()).collect();
        let x = Tensor::with_precision(shape, data, m.precision).map_err(|e| invalid(e.to_string()))?;
        let y = m.forward(&x).map_err(model_err)?;
        std::slice::from_raw_parts_mut(output, need).copy_from_slice(y.data());
        Ok(())
    })
}

/// Connect to a server at `tcp://host:port`. A `timeout_ms` of 0 keeps the
/// default of 30 s.
///
/// # Safety
/// `endpoint` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cogsim_client_connect(
    endpoint: *const c_char,
    timeout_ms: u64,
    out: *mut *mut CogsimClient,
) -> CogsimStatus {
    guard(|| {
        let endpoint = str_arg(endpoint, "endpoint")?;
        let mut options = ClientOptions::default();
        if timeout_ms > 0 {
            options.timeout = Duration::from_millis(timeout_ms);
        }
        let session = ClientSession::connect_with(endpoint, options).map_err(client_err)?;
        store(out, CogsimClient { session })
    })
}

/// Close a session. Null is ignored.
///
/// # Safety
/// `client` must come from `cogsim_client_connect` and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn cogsim_client_free(client: *mut CogsimClient) {
    if !client.is_null() {
        drop(Box::from_raw(client));
    }
}

/// Synchronous remote inference. The request tensor has shape
/// `[batch, row_shape...]`. On success `output` holds `*output_len` values
/// and `*latency_ms` the round-trip time.
///
/// # Safety
/// All pointers must be valid for the lengths implied by the arguments.
#[no_mangle]
pub unsafe extern "C" fn cogsim_client_infer(
    client: *mut CogsimClient,
    model_id: *const c_char,
    input: *const f32,
    batch: usize,
    row_shape: *const usize,
    row_rank: usize,
    precision_tag: u8,
    output: *mut f32,
    output_capacity: usize,
    output_len: *mut usize,
    latency_ms: *mut f64,
) -> CogsimStatus {
    guard(|| {
        let c = client.as_mut().ok_or_else(|| null("client"))?;
        let id = str_arg(model_id, "model_id")?;
        if input.is_null() {
            return Err(null("input"));
        }
        if row_shape.is_null() && row_rank > 0 {
            return Err(null("row_shape"));
        }
        let rows: &[usize] = if row_rank == 0 { &[] } else { std::slice::from_raw_parts(row_shape, row_rank) };
        let shape: Vec<usize> = std::iter::once(batch).chain(rows.iter().copied()).collect();
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| invalid("shape too large"))?;
        let data = std::slice::from_raw_parts(input, n).to_vec();
        let x = Tensor::with_precision(shape, data, precision(precision_tag)?).map_err(|e| invalid(e.to_string()))?;
        let (y, lat) = c.session.infer_sync(id, &x).map_err(client_err)?;
        if output_capacity < y.len() {
            return Err((CogsimStatus::BufferTooSmall, format!("output needs {} values, capacity {output_capacity}", y.len())));
        }
        if output.is_null() && !y.is_empty() {
            return Err(null("output"));
        }
        if !y.is_empty() {
            ptr::copy_nonoverlapping(y.data().as_ptr(), output, y.len());
        }
        write_out(output_len, y.len(), "output_len")?;
        if !latency_ms.is_null() {
            *latency_ms = lat;
        }
        Ok(())
    })
}

/// Samples per second a link can carry at the given batch size. Returns a
/// negative value when the link parameters are invalid.
#[no_mangle]
pub extern "C" fn cogsim_link_capacity_sps(
    bandwidth_bits_per_s: f64,
    overhead_bytes_per_msg: f64,
    per_sample_wire_bytes: f64,
    batch: usize,
) -> f64 {
    let mut link = LinkSpec::new(bandwidth_bits_per_s, 0.0);
    link.protocol_overhead_bytes_per_msg = overhead_bytes_per_msg;
    if link.check().is_err() || !(per_sample_wire_bytes > 0.0) {
        set_error("invalid link or byte count");
        return -1.0;
    }
    feasibility::link_capacity_sps(&link, per_sample_wire_bytes, batch)
}

/// Classify a workload from the two capacities and the demand.
#[no_mangle]
pub extern "C" fn cogsim_verdict(link_capacity_sps: f64, accelerator_capacity_sps: f64, demand_sps: f64) -> CogsimVerdict {
    match feasibility::verdict(link_capacity_sps, accelerator_capacity_sps, demand_sps) {
        Verdict::Feasible => CogsimVerdict::Feasible,
        Verdict::NetworkBound => CogsimVerdict::NetworkBound,
        Verdict::AcceleratorBound => CogsimVerdict::AcceleratorBound,
    }
}
