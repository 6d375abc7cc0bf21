//! Forward kernels for the layer kinds the surrogate models use.
//!
//! Activations are laid out row-major with the batch first: `[batch, n]` for
//! dense layers and `[batch, channels, height, width]` for the spatial ones.
//! Everything accumulates in `f32`; rounding to a storage precision is the
//! caller's job. Kernels are pure functions and safe to call concurrently.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    #[default]
    None,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::None => x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::None => "none",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "none" | "linear" => Ok(Activation::None),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("{what}: expected {expected:?}, got {actual:?}")]
    Shape {
        what: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("window {window:?} does not fit input {input:?} with padding {padding}")]
    Geometry {
        window: (usize, usize),
        input: (usize, usize),
        padding: usize,
    },
    #[error("stride must be at least 1")]
    ZeroStride,
    #[error("output padding {output_padding} must be smaller than stride {stride}")]
    OutputPadding { output_padding: usize, stride: usize },
}

/// Square-or-rectangular 2-D geometry shared by conv and pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window2d {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Window2d {
    /// `floor((in + 2*pad - k) / stride) + 1` per axis, or an error when the
    /// window does not fit inside the padded input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize), KernelError> {
        if self.stride == 0 {
            return Err(KernelError::ZeroStride);
        }
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if self.kh > ph || self.kw > pw || self.kh == 0 || self.kw == 0 {
            return Err(KernelError::Geometry {
                window: (self.kh, self.kw),
                input: (h, w),
                padding: self.padding,
            });
        }
        Ok(((ph - self.kh) / self.stride + 1, (pw - self.kw) / self.stride + 1))
    }
}

/// Transposed-conv output extent along one axis.
pub fn transposed_output_len(
    input: usize,
    k: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Option<usize> {
    if input == 0 {
        return None;
    }
    ((input - 1) * stride + k + output_padding).checked_sub(2 * padding)
        .filter(|&n| n > 0)
}

fn spatial(x: &Tensor, what: &'static str) -> Result<(usize, usize, usize, usize), KernelError> {
    match *x.shape() {
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(KernelError::Shape {
            what,
            expected: vec![0, 0, 0, 0],
            actual: x.shape().to_vec(),
        }),
    }
}

/// `y = act(x W + b)` with `x: [batch, n_in]` (trailing dims are flattened),
/// `W: [n_in, n_out]`, `b: [n_out]`.
pub fn dense_forward(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    act: Activation,
) -> Result<Tensor, KernelError> {
    let [n_in, n_out] = *weight.shape() else {
        return Err(KernelError::Shape {
            what: "dense weight rank",
            expected: vec![0, 0],
            actual: weight.shape().to_vec(),
        });
    };
    if bias.shape() != [n_out] {
        return Err(KernelError::Shape {
            what: "dense bias",
            expected: vec![n_out],
            actual: bias.shape().to_vec(),
        });
    }
    let batch = x.batch();
    let row: usize = x.row_shape().iter().product();
    if x.shape().len() < 2 || row != n_in {
        return Err(KernelError::Shape {
            what: "dense input",
            expected: vec![batch, n_in],
            actual: x.shape().to_vec(),
        });
    }
    let w = weight.data();
    let mut out = Vec::with_capacity(batch * n_out);
    for xr in x.data().chunks_exact(n_in.max(1)).take(batch) {
        let mut y = bias.data().to_vec();
        for (&xi, wr) in xr.iter().zip(w.chunks_exact(n_out.max(1))) {
            if xi == 0.0 {
                continue;
            }
            for (yj, &wij) in y.iter_mut().zip(wr) {
                *yj += xi * wij;
            }
        }
        out.extend(y.into_iter().map(|v| act.apply(v)));
    }
    if n_in == 0 {
        out = (0..batch).flat_map(|_| bias.data().iter().map(|&b| act.apply(b))).collect();
    }
    Ok(Tensor::new(vec![batch, n_out], out).expect("dense output size"))
}

/// Cross-correlation of `x: [B, C_in, H, W]` with `kernel: [C_out, C_in, kh, kw]`,
/// zero padding, bias per output channel.
pub fn conv2d_forward(
    x: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    act: Activation,
) -> Result<Tensor, KernelError> {
    let (b, c_in, h, w) = spatial(x, "conv2d input")?;
    let [c_out, kc_in, kh, kw] = *kernel.shape() else {
        return Err(KernelError::Shape {
            what: "conv2d kernel rank",
            expected: vec![0, c_in, 0, 0],
            actual: kernel.shape().to_vec(),
        });
    };
    if kc_in != c_in {
        return Err(KernelError::Shape {
            what: "conv2d kernel input channels",
            expected: vec![c_out, c_in, kh, kw],
            actual: kernel.shape().to_vec(),
        });
    }
    if bias.shape() != [c_out] {
        return Err(KernelError::Shape {
            what: "conv2d bias",
            expected: vec![c_out],
            actual: bias.shape().to_vec(),
        });
    }
    let win = Window2d { kh, kw, stride, padding };
    let (ho, wo) = win.output_hw(h, w)?;
    let positions = ho * wo;
    let rows = c_in * kh * kw;

    // im2col: one column per output position, one row per (ci, ky, kx)
    let mut cols = vec![0.0f32; rows * positions];
    let mut out = Vec::with_capacity(b * c_out * positions);
    let kd = kernel.data();
    for sample in x.data().chunks_exact(c_in * h * w).take(b) {
        for ci in 0..c_in {
            let plane = &sample[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let r = (ci * kh + ky) * kw + kx;
                    let dst = &mut cols[r * positions..(r + 1) * positions];
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        for ox in 0..wo {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            dst[oy * wo + ox] = if iy >= 0
                                && (iy as usize) < h
                                && ix >= 0
                                && (ix as usize) < w
                            {
                                plane[iy as usize * w + ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
        for co in 0..c_out {
            let mut acc = vec![bias.data()[co]; positions];
            let krow = &kd[co * rows..(co + 1) * rows];
            for (r, &kv) in krow.iter().enumerate() {
                if kv == 0.0 {
                    continue;
                }
                for (a, &cv) in acc.iter_mut().zip(&cols[r * positions..(r + 1) * positions]) {
                    *a += kv * cv;
                }
            }
            out.extend(acc.into_iter().map(|v| act.apply(v)));
        }
    }
    Ok(Tensor::new(vec![b, c_out, ho, wo], out).expect("conv output size"))
}

/// Per-window maximum over each channel, no padding.
pub fn maxpool2d(x: &Tensor, window: usize, stride: usize) -> Result<Tensor, KernelError> {
    let (b, c, h, w) = spatial(x, "maxpool2d input")?;
    let win = Window2d {
        kh: window,
        kw: window,
        stride,
        padding: 0,
    };
    let (ho, wo) = win.output_hw(h, w)?;
    let mut out = Vec::with_capacity(b * c * ho * wo);
    for plane in x.data().chunks_exact(h * w).take(b * c) {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut m = f32::NEG_INFINITY;
                for row in plane[oy * stride * w..].chunks(w).take(window) {
                    for &v in &row[ox * stride..ox * stride + window] {
                        m = m.max(v);
                    }
                }
                out.push(m);
            }
        }
    }
    Ok(Tensor::new(vec![b, c, ho, wo], out).expect("pool output size"))
}

/// Normalize each sample over all non-batch dims to zero mean and unit
/// variance, then apply a per-feature affine transform. `gain` and `bias`
/// have one entry per element of the first non-batch dimension and are
/// broadcast over any remaining dims.
pub fn layernorm_forward(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    epsilon: f32,
    act: Activation,
) -> Result<Tensor, KernelError> {
    let batch = x.batch();
    let features = x.row_shape().first().copied().unwrap_or(1);
    let row: usize = x.row_shape().iter().product();
    for (what, t) in [("layernorm gain", gain), ("layernorm bias", bias)] {
        if t.shape() != [features] {
            return Err(KernelError::Shape {
                what,
                expected: vec![features],
                actual: t.shape().to_vec(),
            });
        }
    }
    let inner = if features == 0 { 0 } else { row / features };
    let mut out = Vec::with_capacity(x.len());
    if row == 0 {
        return Ok(Tensor::new(x.shape().to_vec(), out).expect("empty"));
    }
    for sample in x.data().chunks_exact(row).take(batch) {
        let mean = sample.iter().sum::<f32>() / row as f32;
        let var = sample.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / row as f32;
        let inv = 1.0 / (var + epsilon).sqrt();
        for (f, chunk) in sample.chunks_exact(inner).enumerate() {
            let (g, bb) = (gain.data()[f], bias.data()[f]);
            out.extend(chunk.iter().map(|&v| act.apply((v - mean) * inv * g + bb)));
        }
    }
    Ok(Tensor::new(x.shape().to_vec(), out).expect("layernorm output size"))
}

/// Transpose (gradient) of [`conv2d_forward`] for a tied kernel
/// `[C_conv_out, C_conv_in, kh, kw]`: maps `[B, C_conv_out, H, W]` back to
/// `[B, C_conv_in, H', W']` with `H' = (H-1)*stride - 2*padding + kh + output_padding`.
pub fn transposed_conv2d_forward(
    x: &Tensor,
    tied_kernel: &Tensor,
    stride: usize,
    padding: usize,
    output_padding: usize,
    act: Activation,
) -> Result<Tensor, KernelError> {
    let (b, c_x, h, w) = spatial(x, "transposed_conv2d input")?;
    let [kc_out, c_y, kh, kw] = *tied_kernel.shape() else {
        return Err(KernelError::Shape {
            what: "transposed_conv2d kernel rank",
            expected: vec![c_x, 0, 0, 0],
            actual: tied_kernel.shape().to_vec(),
        });
    };
    if kc_out != c_x {
        return Err(KernelError::Shape {
            what: "transposed_conv2d kernel channels",
            expected: vec![c_x, c_y, kh, kw],
            actual: tied_kernel.shape().to_vec(),
        });
    }
    if stride == 0 {
        return Err(KernelError::ZeroStride);
    }
    if output_padding >= stride {
        return Err(KernelError::OutputPadding { output_padding, stride });
    }
    let geometry_err = || KernelError::Geometry {
        window: (kh, kw),
        input: (h, w),
        padding,
    };
    let ho = transposed_output_len(h, kh, stride, padding, output_padding).ok_or_else(geometry_err)?;
    let wo = transposed_output_len(w, kw, stride, padding, output_padding).ok_or_else(geometry_err)?;

    let kd = tied_kernel.data();
    let mut out = vec![0.0f32; b * c_y * ho * wo];
    for (sample, dst) in x
        .data()
        .chunks_exact(c_x * h * w)
        .zip(out.chunks_exact_mut(c_y * ho * wo))
    {
        for cx in 0..c_x {
            for iy in 0..h {
                for ix in 0..w {
                    let v = sample[(cx * h + iy) * w + ix];
                    if v == 0.0 {
                        continue;
                    }
                    for cy in 0..c_y {
                        let kbase = (cx * c_y + cy) * kh * kw;
                        for ky in 0..kh {
                            let oy = (iy * stride + ky) as isize - padding as isize;
                            if oy < 0 || oy as usize >= ho {
                                continue;
                            }
                            let orow = (cy * ho + oy as usize) * wo;
                            for kx in 0..kw {
                                let ox = (ix * stride + kx) as isize - padding as isize;
                                if ox < 0 || ox as usize >= wo {
                                    continue;
                                }
                                dst[orow + ox as usize] += v * kd[kbase + ky * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    for v in &mut out {
        *v = act.apply(*v);
    }
    Ok(Tensor::new(vec![b, c_y, ho, wo], out).expect("transposed conv output size"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn dense_identity() {
        let y = dense_forward(
            &t(&[1, 2], &[1.0, 2.0]),
            &t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]),
            &t(&[2], &[0.0, 0.0]),
            Activation::None,
        )
        .unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn dense_zero_input_returns_bias() {
        let y = dense_forward(
            &t(&[1, 2], &[0.0, 0.0]),
            &t(&[2, 2], &[5.0, -7.0, 0.25, 9.0]),
            &t(&[2], &[3.0, -1.0]),
            Activation::None,
        )
        .unwrap();
        assert_eq!(y.data(), &[3.0, -1.0]);
    }

    #[test]
    fn dense_hand_evaluated() {
        // neuron 0: 1*1 + 2*2 + 1 = 6; neuron 1: 1*3 + 2*4 + 1 = 12
        let y = dense_forward(
            &t(&[1, 2], &[1.0, 2.0]),
            &t(&[2, 2], &[1.0, 3.0, 2.0, 4.0]),
            &t(&[2], &[1.0, 1.0]),
            Activation::Relu,
        )
        .unwrap();
        assert_eq!(y.data(), &[6.0, 12.0]);
    }

    #[test]
    fn dense_shape_mismatch_names_dims() {
        let err = dense_forward(
            &t(&[1, 3], &[0.0; 3]),
            &t(&[2, 2], &[0.0; 4]),
            &t(&[2], &[0.0; 2]),
            Activation::None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("dense input"), "{err}");
        assert!(err.to_string().contains("[1, 3]"), "{err}");
    }

    #[test]
    fn conv_unit_kernel_is_identity() {
        let x = t(&[1, 1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = conv2d_forward(&x, &t(&[1, 1, 1, 1], &[1.0]), &t(&[1], &[0.0]), 1, 0, Activation::None)
            .unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_all_ones() {
        let y = conv2d_forward(
            &t(&[1, 1, 3, 3], &[1.0; 9]),
            &t(&[1, 1, 3, 3], &[1.0; 9]),
            &t(&[1], &[0.0]),
            1,
            0,
            Activation::None,
        )
        .unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn conv_kernel_larger_than_input() {
        let err = conv2d_forward(
            &t(&[1, 1, 2, 2], &[1.0; 4]),
            &t(&[1, 1, 3, 3], &[1.0; 9]),
            &t(&[1], &[0.0]),
            1,
            0,
            Activation::None,
        )
        .unwrap_err();
        assert!(matches!(err, KernelError::Geometry { .. }));
    }

    #[test]
    fn pool_constant_and_max() {
        let y = maxpool2d(&t(&[1, 1, 4, 4], &[2.5; 16]), 2, 2).unwrap();
        assert_eq!(y.data(), &[2.5; 4]);
        let y = maxpool2d(&t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]), 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert!(maxpool2d(&t(&[1, 1, 2, 2], &[0.0; 4]), 3, 1).is_err());
    }

    #[test]
    fn pool_ramp() {
        let ramp: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let y = maxpool2d(&t(&[1, 1, 4, 4], &ramp), 2, 2).unwrap();
        // window maxima are the bottom-right corners 5, 7, 13, 15
        assert_eq!(y.data(), &[5.0, 7.0, 13.0, 15.0]);
    }

    #[test]
    fn layernorm_cases() {
        let one = t(&[1], &[1.0]);
        let zero = t(&[1], &[0.0]);
        let y = layernorm_forward(&t(&[1, 1, 2, 2], &[4.0; 4]), &one, &zero, 1e-5, Activation::None)
            .unwrap();
        assert_eq!(y.data(), &[0.0; 4]);

        let y = layernorm_forward(
            &t(&[1, 2], &[1.0, 3.0]),
            &t(&[2], &[1.0, 1.0]),
            &t(&[2], &[0.0, 0.0]),
            1e-5,
            Activation::None,
        )
        .unwrap();
        // mean 2, var 1: (x - 2) / sqrt(1 + 1e-5)
        let expected = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] as f64 + expected).abs() < 1e-6);
        assert!((y.data()[1] as f64 - expected).abs() < 1e-6);

        let y = layernorm_forward(
            &t(&[2, 2], &[1.0, 3.0, -5.0, 8.0]),
            &t(&[2], &[0.0, 0.0]),
            &t(&[2], &[0.5, -0.5]),
            1e-5,
            Activation::None,
        )
        .unwrap();
        assert_eq!(y.data(), &[0.5, -0.5, 0.5, -0.5]);
    }

    #[test]
    fn transposed_unit_kernel_is_identity() {
        let x = t(&[1, 1, 2, 2], &[1.0, -2.0, 3.0, 4.0]);
        let y = transposed_conv2d_forward(&x, &t(&[1, 1, 1, 1], &[1.0]), 1, 0, 0, Activation::None)
            .unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn transposed_scalar_scatters_kernel() {
        let k = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = transposed_conv2d_forward(&t(&[1, 1, 1, 1], &[2.5]), &k, 1, 0, 0, Activation::None)
            .unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[2.5, 5.0, 7.5, 10.0]);
    }

    #[test]
    fn transposed_rejects_bad_output_padding() {
        let k = t(&[1, 1, 3, 3], &[1.0; 9]);
        assert!(matches!(
            transposed_conv2d_forward(&t(&[1, 1, 2, 2], &[1.0; 4]), &k, 1, 0, 1, Activation::None),
            Err(KernelError::OutputPadding { .. })
        ));
    }

    #[test]
    fn window_geometry_formula() {
        let w = Window2d { kh: 3, kw: 3, stride: 2, padding: 1 };
        assert_eq!(w.output_hw(7, 8).unwrap(), (4, 4));
        assert_eq!(transposed_output_len(3, 3, 2, 1, 1), Some(6));
    }
}
