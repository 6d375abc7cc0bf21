//! Framed request/response codec.
//!
//! Every frame is little-endian:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "CGSM"
//!      4     1  version (1)
//!      5     1  msg_type (1 = request, 2 = response)
//!      6     1  status (0 in requests)
//!      7     1  reserved (0)
//!      8     8  request_id
//!     16     2  model_id_len, then model_id bytes
//!            1  dtype (0 = f32, 1 = f16, 2 = bf16)
//!            1  rank (≤ 8), then rank × u32 dims
//!            8  payload_len, then payload bytes
//! ```
//!
//! Error responses carry rank 0, dtype 0, and a UTF-8 message as payload.

use std::io::{self, Read};

use thiserror::Error;

use crate::tensor::{Precision, Tensor, TensorError};

pub const MAGIC: &[u8; 4] = b"CGSM";
pub const VERSION: u8 = 1;
pub const MAX_RANK: usize = 8;
pub const MAX_MODEL_ID: usize = 255;
/// Largest payload a decoder will accept.
pub const MAX_PAYLOAD: u64 = 1 << 30;

const MSG_REQUEST: u8 = 1;
const MSG_RESPONSE: u8 = 2;
const STREAM_CHUNK: usize = 64 * 1024;

/// Bytes of a frame that are not payload, for a given model id length and rank.
pub const fn frame_overhead_bytes(model_id_len: usize, rank: usize) -> usize {
    4 + 1 + 1 + 1 + 1 + 8 + 2 + model_id_len + 1 + 1 + 4 * rank + 8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Status {
    Ok = 0,
    UnknownModel = 1,
    BadShape = 2,
    ServerError = 3,
}

impl Status {
    fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Status::Ok),
            1 => Some(Status::UnknownModel),
            2 => Some(Status::BadShape),
            3 => Some(Status::ServerError),
            _ => None,
        }
    }
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Ok => "ok",
            Status::UnknownModel => "unknown_model",
            Status::BadShape => "bad_shape",
            Status::ServerError => "server_error",
        })
    }
}

/// Tensor as it travels: dtype, dims and raw little-endian elements. The
/// payload length is not forced to match the shape here; receivers check it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireTensor {
    pub dtype: Precision,
    pub shape: Vec<u32>,
    pub payload: Vec<u8>,
}

impl WireTensor {
    pub fn from_tensor(t: &Tensor) -> Self {
        WireTensor {
            dtype: t.precision(),
            shape: t.shape().iter().map(|&d| d as u32).collect(),
            payload: t.to_le_bytes(),
        }
    }

    pub fn expected_payload_len(&self) -> Option<usize> {
        self.shape
            .iter()
            .try_fold(self.dtype.width(), |acc, &d| acc.checked_mul(d as usize))
    }

    pub fn to_tensor(&self) -> Result<Tensor, TensorError> {
        Tensor::from_le_bytes(
            self.shape.iter().map(|&d| d as usize).collect(),
            self.dtype,
            &self.payload,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireRequest {
    pub request_id: u64,
    pub model_id: String,
    pub tensor: WireTensor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseBody {
    Ok(WireTensor),
    Error { status: Status, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireResponse {
    pub request_id: u64,
    pub model_id: String,
    pub body: ResponseBody,
}

impl WireResponse {
    pub fn status(&self) -> Status {
        match &self.body {
            ResponseBody::Ok(_) => Status::Ok,
            ResponseBody::Error { status, .. } => *status,
        }
    }

    pub fn error(request_id: u64, model_id: &str, status: Status, message: impl Into<String>) -> Self {
        WireResponse {
            request_id,
            model_id: model_id.to_string(),
            body: ResponseBody::Error {
                status,
                message: message.into(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireMessage {
    Request(WireRequest),
    Response(WireResponse),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("model id is {0} bytes, limit is {MAX_MODEL_ID}")]
    ModelIdTooLong(usize),
    #[error("rank {0} exceeds {MAX_RANK}")]
    RankTooLarge(usize),
    #[error("error responses must not use status ok")]
    OkError,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeErrorKind {
    BadMagic,
    BadVersion(u8),
    BadMessageType(u8),
    BadStatus(u8),
    BadReserved(u8),
    BadDtype(u8),
    RankTooLarge(u8),
    InvalidUtf8,
    PayloadTooLarge(u64),
    ErrorWithShape,
    Truncated,
    TrailingBytes(usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("frame decode error at byte {offset}: {kind:?}")]
pub struct DecodeError {
    pub offset: usize,
    pub kind: DecodeErrorKind,
}

#[derive(Debug, Error)]
pub enum FrameReadError {
    #[error("peer closed the connection")]
    Closed,
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

impl WireMessage {
    pub fn request_id(&self) -> u64 {
        match self {
            WireMessage::Request(r) => r.request_id,
            WireMessage::Response(r) => r.request_id,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, EncodeError> {
        let (msg_type, status, request_id, model_id, dtype, shape, payload): (u8, Status, u64, &str, Precision, &[u32], &[u8]) =
            match self {
                WireMessage::Request(r) => (
                    MSG_REQUEST,
                    Status::Ok,
                    r.request_id,
                    &r.model_id,
                    r.tensor.dtype,
                    &r.tensor.shape,
                    &r.tensor.payload,
                ),
                WireMessage::Response(r) => match &r.body {
                    ResponseBody::Ok(t) => (MSG_RESPONSE, Status::Ok, r.request_id, &r.model_id, t.dtype, &t.shape, &t.payload),
                    ResponseBody::Error { status, message } => {
                        if *status == Status::Ok {
                            return Err(EncodeError::OkError);
                        }
                        (MSG_RESPONSE, *status, r.request_id, &r.model_id, Precision::F32, &[][..], message.as_bytes())
                    }
                },
            };
        if model_id.len() > MAX_MODEL_ID {
            return Err(EncodeError::ModelIdTooLong(model_id.len()));
        }
        if shape.len() > MAX_RANK {
            return Err(EncodeError::RankTooLarge(shape.len()));
        }
        let mut out = Vec::with_capacity(frame_overhead_bytes(model_id.len(), shape.len()) + payload.len());
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(msg_type);
        out.push(status as u8);
        out.push(0);
        out.extend_from_slice(&request_id.to_le_bytes());
        out.extend_from_slice(&(model_id.len() as u16).to_le_bytes());
        out.extend_from_slice(model_id.as_bytes());
        out.push(dtype.tag());
        out.push(shape.len() as u8);
        for d in shape {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(payload);
        Ok(out)
    }

    /// Decode a buffer holding exactly one frame.
    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let (msg, used) = Self::decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(DecodeError {
                offset: used,
                kind: DecodeErrorKind::TrailingBytes(bytes.len() - used),
            });
        }
        Ok(msg)
    }

    /// Decode the frame at the start of `bytes`, returning it and the number
    /// of bytes consumed.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(Self, usize), DecodeError> {
        let mut src = SliceSource { bytes, pos: 0 };
        let msg = decode_from(&mut src).map_err(|e| match e {
            FrameReadError::Decode(d) => d,
            _ => unreachable!("slice source only yields decode errors"),
        })?;
        Ok((msg, src.pos))
    }

    /// Read one frame from a stream. A clean end of stream before the first
    /// byte is reported as [`FrameReadError::Closed`].
    pub fn read_from<R: Read>(reader: &mut R) -> Result<Self, FrameReadError> {
        decode_from(&mut StreamSource { reader, pos: 0 })
    }
}

trait Source {
    fn take(&mut self, n: usize) -> Result<Vec<u8>, FrameReadError>;
    fn pos(&self) -> usize;

    fn fail(&self, at: usize, kind: DecodeErrorKind) -> FrameReadError {
        FrameReadError::Decode(DecodeError { offset: at, kind })
    }

    fn u8(&mut self) -> Result<u8, FrameReadError> {
        Ok(self.take(1)?[0])
    }
}

struct SliceSource<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Source for SliceSource<'_> {
    fn take(&mut self, n: usize) -> Result<Vec<u8>, FrameReadError> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(self.bytes.len(), DecodeErrorKind::Truncated));
        }
        let v = self.bytes[self.pos..self.pos + n].to_vec();
        self.pos += n;
        Ok(v)
    }

    fn pos(&self) -> usize {
        self.pos
    }
}

struct StreamSource<'a, R: Read> {
    reader: &'a mut R,
    pos: usize,
}

impl<R: Read> Source for StreamSource<'_, R> {
    fn take(&mut self, n: usize) -> Result<Vec<u8>, FrameReadError> {
        // grow with the data actually received, not the length the peer claims
        let mut buf = vec![0u8; n.min(STREAM_CHUNK)];
        let mut filled = 0;
        while filled < n {
            if filled == buf.len() {
                buf.resize(n.min(buf.len() * 2), 0);
            }
            match self.reader.read(&mut buf[filled..]) {
                Ok(0) if self.pos + filled == 0 => return Err(FrameReadError::Closed),
                Ok(0) => return Err(self.fail(self.pos + filled, DecodeErrorKind::Truncated)),
                Ok(k) => filled += k,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(FrameReadError::Io(e)),
            }
        }
        self.pos += n;
        Ok(buf)
    }

    fn pos(&self) -> usize {
        self.pos
    }
}

fn decode_from<S: Source>(src: &mut S) -> Result<WireMessage, FrameReadError> {
    let magic = src.take(4)?;
    if magic != MAGIC {
        return Err(src.fail(0, DecodeErrorKind::BadMagic));
    }
    let version = src.u8()?;
    if version != VERSION {
        return Err(src.fail(4, DecodeErrorKind::BadVersion(version)));
    }
    let msg_type = src.u8()?;
    if msg_type != MSG_REQUEST && msg_type != MSG_RESPONSE {
        return Err(src.fail(5, DecodeErrorKind::BadMessageType(msg_type)));
    }
    let status_byte = src.u8()?;
    let status = Status::from_u8(status_byte)
        .filter(|s| msg_type == MSG_RESPONSE || *s == Status::Ok)
        .ok_or_else(|| src.fail(6, DecodeErrorKind::BadStatus(status_byte)))?;
    let reserved = src.u8()?;
    if reserved != 0 {
        return Err(src.fail(7, DecodeErrorKind::BadReserved(reserved)));
    }
    let request_id = u64::from_le_bytes(src.take(8)?.try_into().expect("8"));
    let id_len = u16::from_le_bytes(src.take(2)?.try_into().expect("2")) as usize;
    let id_at = src.pos();
    let model_id = String::from_utf8(src.take(id_len)?).map_err(|_| src.fail(id_at, DecodeErrorKind::InvalidUtf8))?;
    let dtype_at = src.pos();
    let dtype_byte = src.u8()?;
    let dtype = Precision::from_tag(dtype_byte).ok_or_else(|| src.fail(dtype_at, DecodeErrorKind::BadDtype(dtype_byte)))?;
    let rank_at = src.pos();
    let rank = src.u8()?;
    if rank as usize > MAX_RANK {
        return Err(src.fail(rank_at, DecodeErrorKind::RankTooLarge(rank)));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        shape.push(u32::from_le_bytes(src.take(4)?.try_into().expect("4")));
    }
    let len_at = src.pos();
    let payload_len = u64::from_le_bytes(src.take(8)?.try_into().expect("8"));
    if payload_len > MAX_PAYLOAD {
        return Err(src.fail(len_at, DecodeErrorKind::PayloadTooLarge(payload_len)));
    }
    let payload_at = src.pos();
    let payload = src.take(payload_len as usize)?;
    let tensor = WireTensor { dtype, shape, payload };

    Ok(match (msg_type, status) {
        (MSG_REQUEST, _) => WireMessage::Request(WireRequest {
            request_id,
            model_id,
            tensor,
        }),
        (_, Status::Ok) => WireMessage::Response(WireResponse {
            request_id,
            model_id,
            body: ResponseBody::Ok(tensor),
        }),
        (_, status) => {
            if rank != 0 || dtype != Precision::F32 {
                return Err(src.fail(dtype_at, DecodeErrorKind::ErrorWithShape));
            }
            let message =
                String::from_utf8(tensor.payload).map_err(|_| src.fail(payload_at, DecodeErrorKind::InvalidUtf8))?;
            WireMessage::Response(WireResponse {
                request_id,
                model_id,
                body: ResponseBody::Error { status, message },
            })
        }
    })
}
