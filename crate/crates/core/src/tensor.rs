//! Dense row-major tensors with a storage precision tag.
//!
//! All arithmetic happens in `f32`. The precision tag records which format the
//! values are constrained to: after [`round_to_precision`] every element is
//! exactly representable in the tagged format, so converting to the narrow
//! format and back is the identity.

use std::fmt;
use std::str::FromStr;

use half::{bf16, f16};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Storage format of tensor elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F16,
    Bf16,
}

impl Precision {
    /// Bytes per element when serialized.
    pub fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F16 | Precision::Bf16 => 2,
        }
    }

    /// Tag byte used by both the wire protocol and the weight store.
    pub fn tag(self) -> u8 {
        match self {
            Precision::F32 => 0,
            Precision::F16 => 1,
            Precision::Bf16 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Precision::F32),
            1 => Some(Precision::F16),
            2 => Some(Precision::Bf16),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F16 => "f16",
            Precision::Bf16 => "bf16",
        }
    }

    /// Largest finite value of the format.
    pub fn max_finite(self) -> f32 {
        match self {
            Precision::F32 => f32::MAX,
            Precision::F16 => f16::MAX.to_f32(),
            Precision::Bf16 => bf16::MAX.to_f32(),
        }
    }

    /// Round a single value to the nearest representable value (ties to even).
    /// Finite values that overflow saturate to the format maximum; infinities
    /// and NaN pass through.
    pub fn round(self, x: f32) -> f32 {
        let r = match self {
            Precision::F32 => return x,
            Precision::F16 => f16::from_f32(x).to_f32(),
            Precision::Bf16 => bf16::from_f32(x).to_f32(),
        };
        if r.is_infinite() && x.is_finite() {
            self.max_finite().copysign(x)
        } else {
            r
        }
    }

    /// Little-endian encoding of one (already representable) value.
    pub fn write_le(self, x: f32, out: &mut Vec<u8>) {
        match self {
            Precision::F32 => out.extend_from_slice(&x.to_le_bytes()),
            Precision::F16 => out.extend_from_slice(&f16::from_f32(x).to_le_bytes()),
            Precision::Bf16 => out.extend_from_slice(&bf16::from_f32(x).to_le_bytes()),
        }
    }

    /// Decode one element from exactly `self.width()` little-endian bytes.
    pub fn read_le(self, bytes: &[u8]) -> f32 {
        match self {
            Precision::F32 => f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]),
            Precision::F16 => f16::from_le_bytes([bytes[0], bytes[1]]).to_f32(),
            Precision::Bf16 => bf16::from_le_bytes([bytes[0], bytes[1]]).to_f32(),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Precision {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f32" | "fp32" => Ok(Precision::F32),
            "f16" | "fp16" => Ok(Precision::F16),
            "bf16" => Ok(Precision::Bf16),
            other => Err(TensorError::UnknownPrecision(other.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {actual} were supplied")]
    ElementCount {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("unknown precision `{0}` (expected f32, f16 or bf16)")]
    UnknownPrecision(String),
    #[error("byte buffer of {len} bytes is not a whole number of {precision} elements for shape {shape:?}")]
    ByteCount {
        shape: Vec<usize>,
        precision: Precision,
        len: usize,
    },
    #[error("cannot concatenate tensors with row shapes {0:?} and {1:?}")]
    RowShape(Vec<usize>, Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    precision: Precision,
}

impl Tensor {
    /// Wrap `data` as an `f32` tensor. Fails when the element count does not
    /// match the shape.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        let expected = shape.iter().product::<usize>();
        if expected != data.len() {
            return Err(TensorError::ElementCount {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data,
            precision: Precision::F32,
        })
    }

    /// Build a tensor and round every element to `precision`.
    pub fn with_precision(
        shape: Vec<usize>,
        data: Vec<f32>,
        precision: Precision,
    ) -> Result<Self, TensorError> {
        Ok(round_to_precision(&Tensor::new(shape, data)?, precision))
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            precision: Precision::F32,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension, or 1 for a scalar.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Shape without the leading (batch) dimension.
    pub fn row_shape(&self) -> &[usize] {
        self.shape.get(1..).unwrap_or(&[])
    }

    fn row_len(&self) -> usize {
        self.row_shape().iter().product()
    }

    /// Same data, new shape with the same element count.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::ElementCount {
                shape,
                expected,
                actual: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Rows `[start, end)` along the batch dimension.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        let row = self.row_len();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor {
            shape,
            data: self.data[start * row..end * row].to_vec(),
            precision: self.precision,
        }
    }

    /// Concatenate along the batch dimension. All parts must share the row
    /// shape; the result takes the precision of the first part.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor, TensorError> {
        let Some(first) = parts.first() else {
            return Ok(Tensor::zeros(vec![0]));
        };
        let mut data = Vec::with_capacity(parts.iter().map(Tensor::len).sum());
        let mut rows = 0;
        for p in parts {
            if p.row_shape() != first.row_shape() {
                return Err(TensorError::RowShape(
                    first.row_shape().to_vec(),
                    p.row_shape().to_vec(),
                ));
            }
            rows += p.batch();
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Ok(Tensor {
            shape,
            data,
            precision: first.precision,
        })
    }

    /// Serialize elements little-endian at the tensor's own precision.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * self.precision.width());
        for &x in &self.data {
            self.precision.write_le(x, &mut out);
        }
        out
    }

    /// Inverse of [`Tensor::to_le_bytes`].
    pub fn from_le_bytes(
        shape: Vec<usize>,
        precision: Precision,
        bytes: &[u8],
    ) -> Result<Self, TensorError> {
        let expected = shape
            .iter()
            .try_fold(precision.width(), |acc, &d| acc.checked_mul(d));
        if expected != Some(bytes.len()) {
            return Err(TensorError::ByteCount {
                shape,
                precision,
                len: bytes.len(),
            });
        }
        let data = bytes
            .chunks_exact(precision.width())
            .map(|c| precision.read_le(c))
            .collect();
        Ok(Tensor {
            shape,
            data,
            precision,
        })
    }
}

/// Replace every element by its nearest representable value in `precision`
/// (round to nearest, ties to even). Overflow saturates to the format
/// maximum; NaN stays NaN. The shape is unchanged.
pub fn round_to_precision(t: &Tensor, precision: Precision) -> Tensor {
    let data = t.data.iter().map(|&x| precision.round(x)).collect();
    Tensor {
        shape: t.shape.clone(),
        data,
        precision,
    }
}
