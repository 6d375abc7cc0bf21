//! Layer graphs for the surrogate models: construction, validation, forward
//! evaluation, and parameter/FLOP/byte accounting.

mod builder;
mod hermit;
mod manifest;
mod mir;

pub use builder::ModelBuilder;
pub use hermit::{build_hermit, HermitConfig, HERMIT_DEFAULT_WIDTHS, HERMIT_INPUT_DIM, HERMIT_PARAM_TARGET};
pub use manifest::{Architecture, ModelManifest};
pub use mir::{build_mir, MirConfig, MIR_BOTTLENECK, MIR_PARAM_TARGET};

use serde::Serialize;
use thiserror::Error;

use crate::kernels::{self, Activation, KernelError};
use crate::tensor::{round_to_precision, Precision, Tensor};
use crate::weights::{WeightStore, WeightStoreError};

pub const LAYERNORM_EPSILON: f32 = 1e-5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("layer `{layer}` ({dims:?}): {source}")]
    Layer {
        layer: String,
        dims: Vec<usize>,
        #[source]
        source: KernelError,
    },
    #[error("model `{model}` expects per-sample shape {expected:?}, got batch shape {actual:?}")]
    InputShape {
        model: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("constraint violated: {0}")]
    Constraint(String),
    #[error("layer `{layer}` references missing weight `{weight}`")]
    MissingWeight { layer: String, weight: String },
    #[error("weight `{weight}` has shape {actual:?}, layer `{layer}` needs {expected:?}")]
    WeightShape {
        layer: String,
        weight: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("layer `{layer}` ties to `{tie_ref}`, which is not an earlier conv2d layer")]
    UnresolvedTie { layer: String, tie_ref: String },
    #[error("layer `{layer}` declares input {declared:?} but receives {actual:?}")]
    Chain {
        layer: String,
        declared: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("manifest {path}:{line}: {message}")]
    Manifest {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Weights(#[from] WeightStoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Dense {
        weight: String,
        bias: String,
    },
    Conv2d {
        weight: String,
        bias: String,
        stride: usize,
        padding: usize,
    },
    MaxPool2d {
        window: usize,
        stride: usize,
    },
    LayerNorm {
        gain: String,
        bias: String,
        epsilon: f32,
    },
    /// Reuses the kernel of the named conv2d layer; owns no parameters.
    TransposedConv2d {
        tie_ref: String,
        stride: usize,
        padding: usize,
        output_padding: usize,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Dense { .. } => "dense",
            LayerKind::Conv2d { .. } => "conv2d",
            LayerKind::MaxPool2d { .. } => "maxpool2d",
            LayerKind::LayerNorm { .. } => "layernorm",
            LayerKind::TransposedConv2d { .. } => "transposed_conv2d",
        }
    }

    /// Names of the weights this layer owns (tied layers own none).
    pub fn owned_weights(&self) -> Vec<&str> {
        match self {
            LayerKind::Dense { weight, bias } | LayerKind::Conv2d { weight, bias, .. } => {
                vec![weight, bias]
            }
            LayerKind::LayerNorm { gain, bias, .. } => vec![gain, bias],
            LayerKind::MaxPool2d { .. } | LayerKind::TransposedConv2d { .. } => vec![],
        }
    }
}

/// One layer of a model. `in_dims`/`out_dims` are per-sample shapes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_dims: Vec<usize>,
    pub out_dims: Vec<usize>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
    pub weights: WeightStore,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub precision: Precision,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelAccounting {
    pub params: usize,
    pub flops_per_sample: f64,
    pub input_bytes_per_sample: usize,
    pub output_bytes_per_sample: usize,
}

impl ModelAccounting {
    /// Request plus response payload bytes for one sample.
    pub fn wire_bytes_per_sample(&self) -> usize {
        self.input_bytes_per_sample + self.output_bytes_per_sample
    }
}

fn numel(dims: &[usize]) -> usize {
    dims.iter().product()
}

impl ModelSpec {
    fn weight(&self, layer: &LayerSpec, name: &str) -> Result<&Tensor, ModelError> {
        self.weights.get(name).ok_or_else(|| ModelError::MissingWeight {
            layer: layer.name.clone(),
            weight: name.to_string(),
        })
    }

    fn tied_kernel(&self, layer: &LayerSpec, tie_ref: &str) -> Result<&Tensor, ModelError> {
        let unresolved = || ModelError::UnresolvedTie {
            layer: layer.name.clone(),
            tie_ref: tie_ref.to_string(),
        };
        let conv = self.layers.iter().find(|l| l.name == tie_ref).ok_or_else(unresolved)?;
        match &conv.kind {
            LayerKind::Conv2d { weight, .. } => self.weight(conv, weight),
            _ => Err(unresolved()),
        }
    }

    /// Check the layer chain, weight shapes, tie references and declared
    /// geometry end to end.
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut dims = self.input_shape.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            if numel(&layer.in_dims) != numel(&dims)
                || (!matches!(layer.kind, LayerKind::Dense { .. }) && layer.in_dims != dims)
            {
                return Err(ModelError::Chain {
                    layer: layer.name.clone(),
                    declared: layer.in_dims.clone(),
                    actual: dims,
                });
            }
            if let LayerKind::TransposedConv2d { tie_ref, .. } = &layer.kind {
                let earlier = self.layers[..idx]
                    .iter()
                    .any(|l| &l.name == tie_ref && matches!(l.kind, LayerKind::Conv2d { .. }));
                if !earlier {
                    return Err(ModelError::UnresolvedTie {
                        layer: layer.name.clone(),
                        tie_ref: tie_ref.clone(),
                    });
                }
            }
            // run a zero sample through to confirm declared geometry
            let probe = Tensor::zeros(std::iter::once(1).chain(layer.in_dims.iter().copied()).collect());
            let out = self.apply_layer(layer, probe)?;
            if out.row_shape() != layer.out_dims.as_slice()
                && !(matches!(layer.kind, LayerKind::Dense { .. })
                    && numel(out.row_shape()) == numel(&layer.out_dims))
            {
                return Err(ModelError::Chain {
                    layer: layer.name.clone(),
                    declared: layer.out_dims.clone(),
                    actual: out.row_shape().to_vec(),
                });
            }
            dims = layer.out_dims.clone();
        }
        if dims != self.output_shape {
            return Err(ModelError::Chain {
                layer: "<output>".into(),
                declared: self.output_shape.clone(),
                actual: dims,
            });
        }
        Ok(())
    }

    fn apply_layer(&self, layer: &LayerSpec, x: Tensor) -> Result<Tensor, ModelError> {
        let batch = x.batch();
        let wrap = |source| ModelError::Layer {
            layer: layer.name.clone(),
            dims: layer.in_dims.clone(),
            source,
        };
        let act = layer.activation;
        let x = x
            .reshape(std::iter::once(batch).chain(layer.in_dims.iter().copied()).collect())
            .map_err(|_| ModelError::Chain {
                layer: layer.name.clone(),
                declared: layer.in_dims.clone(),
                actual: vec![],
            })?;
        let y = match &layer.kind {
            LayerKind::Dense { weight, bias } => {
                let flat = x.reshape(vec![batch, numel(&layer.in_dims)]).expect("same size");
                kernels::dense_forward(&flat, self.weight(layer, weight)?, self.weight(layer, bias)?, act)
                    .map_err(wrap)?
            }
            LayerKind::Conv2d {
                weight,
                bias,
                stride,
                padding,
            } => kernels::conv2d_forward(
                &x,
                self.weight(layer, weight)?,
                self.weight(layer, bias)?,
                *stride,
                *padding,
                act,
            )
            .map_err(wrap)?,
            LayerKind::MaxPool2d { window, stride } => {
                let mut y = kernels::maxpool2d(&x, *window, *stride).map_err(wrap)?;
                if act == Activation::Relu {
                    y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
                }
                y
            }
            LayerKind::LayerNorm { gain, bias, epsilon } => kernels::layernorm_forward(
                &x,
                self.weight(layer, gain)?,
                self.weight(layer, bias)?,
                *epsilon,
                act,
            )
            .map_err(wrap)?,
            LayerKind::TransposedConv2d {
                tie_ref,
                stride,
                padding,
                output_padding,
            } => kernels::transposed_conv2d_forward(
                &x,
                self.tied_kernel(layer, tie_ref)?,
                *stride,
                *padding,
                *output_padding,
                act,
            )
            .map_err(wrap)?,
        };
        Ok(y)
    }

    /// Run a batch `[b, ...input_shape]` through every layer, rounding the
    /// input and each layer output to the model precision. Deterministic and
    /// row-independent, so any split of the batch yields identical rows.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor, ModelError> {
        if batch.shape().is_empty() || batch.row_shape() != self.input_shape.as_slice() {
            return Err(ModelError::InputShape {
                model: self.name.clone(),
                expected: self.input_shape.clone(),
                actual: batch.shape().to_vec(),
            });
        }
        let b = batch.batch();
        let out_shape: Vec<usize> = std::iter::once(b).chain(self.output_shape.iter().copied()).collect();
        if b == 0 {
            return Ok(round_to_precision(&Tensor::zeros(out_shape), self.precision));
        }
        let mut x = round_to_precision(batch, self.precision);
        for layer in &self.layers {
            x = round_to_precision(&self.apply_layer(layer, x)?, self.precision);
        }
        Ok(x.reshape(out_shape).expect("validated output shape"))
    }

    /// Zero-filled output for a batch of `b` samples (used by backends that
    /// model timing only).
    pub fn zero_output(&self, b: usize) -> Tensor {
        let shape = std::iter::once(b).chain(self.output_shape.iter().copied()).collect();
        round_to_precision(&Tensor::zeros(shape), self.precision)
    }

    /// Sum of owned weight elements. Tied layers contribute nothing.
    pub fn count_params(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.kind.owned_weights())
            .filter_map(|w| self.weights.get(w))
            .map(Tensor::len)
            .sum()
    }

    pub fn account(&self) -> ModelAccounting {
        let flops = self.layers.iter().map(|l| self.layer_flops(l)).sum();
        let width = self.precision.width();
        ModelAccounting {
            params: self.count_params(),
            flops_per_sample: flops,
            input_bytes_per_sample: numel(&self.input_shape) * width,
            output_bytes_per_sample: numel(&self.output_shape) * width,
        }
    }

    /// FLOPs for one sample through one layer. Dense: `2·n_in·n_out`.
    /// Conv: `2·k²·c_in·c_out·H_out·W_out`. Layernorm: `8·n`. Pool:
    /// `window²·n_out`. Transposed conv: every input element scatters into
    /// `k²·c_out` outputs, which equals its tied conv's count when the
    /// geometry mirrors it.
    pub fn layer_flops(&self, layer: &LayerSpec) -> f64 {
        let n_in = numel(&layer.in_dims) as f64;
        let n_out = numel(&layer.out_dims) as f64;
        match &layer.kind {
            LayerKind::Dense { .. } => 2.0 * n_in * n_out,
            LayerKind::Conv2d { weight, .. } => {
                let k = self.weights.get(weight).map(|w| w.shape().to_vec()).unwrap_or_default();
                let (kh, kw, c_in) = (k.get(2).copied().unwrap_or(0), k.get(3).copied().unwrap_or(0), k.get(1).copied().unwrap_or(0));
                2.0 * (kh * kw * c_in) as f64 * n_out
            }
            LayerKind::LayerNorm { .. } => 8.0 * n_in,
            LayerKind::MaxPool2d { window, .. } => (window * window) as f64 * n_out,
            LayerKind::TransposedConv2d { tie_ref, .. } => {
                let k = self
                    .layers
                    .iter()
                    .find(|l| &l.name == tie_ref)
                    .and_then(|l| match &l.kind {
                        LayerKind::Conv2d { weight, .. } => self.weights.get(weight),
                        _ => None,
                    })
                    .map(|w| w.shape().to_vec())
                    .unwrap_or_default();
                let (c_y, kh, kw) = (k.get(1).copied().unwrap_or(0), k.get(2).copied().unwrap_or(0), k.get(3).copied().unwrap_or(0));
                2.0 * (kh * kw * c_y) as f64 * n_in
            }
        }
    }

    /// Neuron widths of the fully connected section: the input width of the
    /// first dense layer followed by every dense layer's output width.
    pub fn fully_connected_widths(&self) -> Vec<usize> {
        let dense: Vec<&LayerSpec> = self
            .layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Dense { .. }))
            .collect();
        match dense.first() {
            None => vec![],
            Some(first) => std::iter::once(numel(&first.in_dims))
                .chain(dense.iter().map(|l| numel(&l.out_dims)))
                .collect(),
        }
    }

    pub fn count_layers(&self, kind: &str) -> usize {
        self.layers.iter().filter(|l| l.kind.name() == kind).count()
    }
}
