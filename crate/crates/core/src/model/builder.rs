use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LayerKind, LayerSpec, ModelError, ModelSpec, LAYERNORM_EPSILON};
use crate::kernels::{transposed_output_len, Activation, Window2d};
use crate::tensor::{round_to_precision, Precision, Tensor};
use crate::weights::WeightStore;

/// Appends layers while tracking the running per-sample shape. Weights are
/// drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` with a seeded
/// generator and rounded to the model precision.
///
/// Geometry problems are recorded and reported by [`ModelBuilder::finish`].
pub struct ModelBuilder {
    name: String,
    input_shape: Vec<usize>,
    dims: Vec<usize>,
    precision: Precision,
    rng: ChaCha8Rng,
    layers: Vec<LayerSpec>,
    weights: WeightStore,
    error: Option<ModelError>,
}

impl ModelBuilder {
    pub fn new(name: impl Into<String>, input_shape: Vec<usize>, precision: Precision, seed: u64) -> Self {
        ModelBuilder {
            name: name.into(),
            dims: input_shape.clone(),
            input_shape,
            precision,
            rng: ChaCha8Rng::seed_from_u64(seed),
            layers: Vec::new(),
            weights: WeightStore::new(),
            error: None,
        }
    }

    /// Current per-sample shape at the end of the chain.
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn param_count(&self) -> usize {
        self.weights.element_count()
    }

    fn fail(&mut self, msg: String) {
        if self.error.is_none() {
            self.error = Some(ModelError::Constraint(format!("{}: {msg}", self.name)));
        }
    }

    fn init(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor {
        let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        round_to_precision(&Tensor::new(shape, data).expect("sized"), self.precision)
    }

    fn push(&mut self, name: String, kind: LayerKind, out_dims: Vec<usize>, activation: Activation) {
        self.layers.push(LayerSpec {
            name,
            kind,
            in_dims: std::mem::replace(&mut self.dims, out_dims.clone()),
            out_dims,
            activation,
        });
    }

    fn next_name(&self, prefix: &str) -> String {
        format!("{prefix}{}", self.layers.len())
    }

    pub fn dense(&mut self, n_out: usize, act: Activation) -> &mut Self {
        self.dense_shaped(vec![n_out], act)
    }

    /// Dense layer whose output is viewed as `out_dims` (e.g. un-flattening
    /// into a feature map).
    pub fn dense_shaped(&mut self, out_dims: Vec<usize>, act: Activation) -> &mut Self {
        let n_in: usize = self.dims.iter().product();
        let n_out: usize = out_dims.iter().product();
        let w = self.init(vec![n_in, n_out], n_in);
        let b = self.init(vec![n_out], n_in);
        self.dense_owned(out_dims, act, w, b)
    }

    /// Dense layer with explicit weights (rounded to the model precision).
    pub fn dense_with(&mut self, n_out: usize, act: Activation, weight: Tensor, bias: Tensor) -> &mut Self {
        let w = round_to_precision(&weight, self.precision);
        let b = round_to_precision(&bias, self.precision);
        self.dense_owned(vec![n_out], act, w, b)
    }

    fn dense_owned(&mut self, out_dims: Vec<usize>, act: Activation, w: Tensor, b: Tensor) -> &mut Self {
        let name = self.next_name("fc");
        let (wn, bn) = (format!("{name}.weight"), format!("{name}.bias"));
        self.weights.insert(wn.clone(), w);
        self.weights.insert(bn.clone(), b);
        self.push(name, LayerKind::Dense { weight: wn, bias: bn }, out_dims, act);
        self
    }

    pub fn conv2d(
        &mut self,
        name: &str,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
        act: Activation,
    ) -> &mut Self {
        let [c_in, h, w] = self.dims[..] else {
            self.fail(format!("conv2d `{name}` needs a [C, H, W] input, have {:?}", self.dims));
            return self;
        };
        let win = Window2d { kh: k, kw: k, stride, padding };
        let (ho, wo) = match win.output_hw(h, w) {
            Ok(hw) => hw,
            Err(e) => {
                self.fail(format!("conv2d `{name}`: {e}"));
                return self;
            }
        };
        let fan_in = c_in * k * k;
        let kern = self.init(vec![c_out, c_in, k, k], fan_in);
        let bias = self.init(vec![c_out], fan_in);
        let (wn, bn) = (format!("{name}.weight"), format!("{name}.bias"));
        self.weights.insert(wn.clone(), kern);
        self.weights.insert(bn.clone(), bias);
        self.push(
            name.to_string(),
            LayerKind::Conv2d { weight: wn, bias: bn, stride, padding },
            vec![c_out, ho, wo],
            act,
        );
        self
    }

    pub fn maxpool2d(&mut self, window: usize, stride: usize) -> &mut Self {
        let name = self.next_name("pool");
        let [c, h, w] = self.dims[..] else {
            self.fail(format!("maxpool2d needs a [C, H, W] input, have {:?}", self.dims));
            return self;
        };
        let win = Window2d { kh: window, kw: window, stride, padding: 0 };
        match win.output_hw(h, w) {
            Ok((ho, wo)) => self.push(name, LayerKind::MaxPool2d { window, stride }, vec![c, ho, wo], Activation::None),
            Err(e) => self.fail(format!("maxpool2d: {e}")),
        }
        self
    }

    pub fn layernorm(&mut self, act: Activation) -> &mut Self {
        let name = self.next_name("ln");
        let features = self.dims.first().copied().unwrap_or(1);
        let gain = round_to_precision(&Tensor::new(vec![features], vec![1.0; features]).expect("sized"), self.precision);
        let bias = round_to_precision(&Tensor::zeros(vec![features]), self.precision);
        let (gn, bn) = (format!("{name}.gain"), format!("{name}.bias"));
        self.weights.insert(gn.clone(), gain);
        self.weights.insert(bn.clone(), bias);
        let dims = self.dims.clone();
        self.push(
            name,
            LayerKind::LayerNorm { gain: gn, bias: bn, epsilon: LAYERNORM_EPSILON },
            dims,
            act,
        );
        self
    }

    /// Transposed conv reusing the kernel of the earlier conv layer `tie_ref`.
    pub fn transposed_conv2d(
        &mut self,
        name: &str,
        tie_ref: &str,
        stride: usize,
        padding: usize,
        output_padding: usize,
        act: Activation,
    ) -> &mut Self {
        let kernel_shape = self
            .layers
            .iter()
            .find(|l| l.name == tie_ref)
            .and_then(|l| match &l.kind {
                LayerKind::Conv2d { weight, .. } => self.weights.get(weight).map(|w| w.shape().to_vec()),
                _ => None,
            });
        let Some([c_x, c_y, kh, kw]) = kernel_shape.as_deref().map(|s| [s[0], s[1], s[2], s[3]]) else {
            self.error.get_or_insert(ModelError::UnresolvedTie {
                layer: name.to_string(),
                tie_ref: tie_ref.to_string(),
            });
            return self;
        };
        let [c, h, w] = self.dims[..] else {
            self.fail(format!("transposed_conv2d `{name}` needs a [C, H, W] input, have {:?}", self.dims));
            return self;
        };
        if c != c_x {
            self.fail(format!("transposed_conv2d `{name}` input has {c} channels, tied kernel expects {c_x}"));
            return self;
        }
        let ho = transposed_output_len(h, kh, stride, padding, output_padding);
        let wo = transposed_output_len(w, kw, stride, padding, output_padding);
        match (ho, wo) {
            (Some(ho), Some(wo)) if output_padding < stride => self.push(
                name.to_string(),
                LayerKind::TransposedConv2d {
                    tie_ref: tie_ref.to_string(),
                    stride,
                    padding,
                    output_padding,
                },
                vec![c_y, ho, wo],
                act,
            ),
            _ => self.fail(format!("transposed_conv2d `{name}` has no valid output geometry")),
        }
        self
    }

    pub fn finish(self) -> Result<ModelSpec, ModelError> {
        if let Some(e) = self.error {
            return Err(e);
        }
        let spec = ModelSpec {
            name: self.name,
            layers: self.layers,
            weights: self.weights,
            input_shape: self.input_shape,
            output_shape: self.dims,
            precision: self.precision,
        };
        spec.validate()?;
        Ok(spec)
    }
}
