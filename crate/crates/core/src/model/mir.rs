//! Convolutional autoencoder with tied encoder/decoder kernels.
//!
//! Encoder stage: conv (3×3, pad 1) → layernorm (+ReLU) → 2×2 max pool.
//! After four stages the feature map is flattened into the fully connected
//! bottleneck `[4608 → k → 4608]`, reshaped back, and four transposed convs
//! (stride 2, tied to the encoder convs in reverse) restore the input size.

use super::{ModelBuilder, ModelError, ModelSpec};
use crate::kernels::Activation;
use crate::tensor::Precision;

pub const MIR_PARAM_TARGET: f64 = 7.0e5;
/// Flattened width entering and leaving the fully connected section.
pub const MIR_BOTTLENECK: usize = 4608;

const STAGES: usize = 4;
const KERNEL: usize = 3;
const POOL: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct MirConfig {
    /// Side length of the square single-channel input patch.
    pub input_hw: usize,
    /// Output channels of the four encoder convs.
    pub channels: [usize; STAGES],
    /// Hidden width `k` of the fully connected bottleneck.
    pub bottleneck_hidden: usize,
    pub precision: Precision,
    pub seed: u64,
    pub name: String,
}

impl Default for MirConfig {
    /// 48×48 input, channels [4, 8, 16, 512], k = 67: 698,971 parameters.
    fn default() -> Self {
        MirConfig {
            input_hw: 48,
            channels: [4, 8, 16, 512],
            bottleneck_hidden: 67,
            precision: Precision::F16,
            seed: 0x4d49_52,
            name: "mir".into(),
        }
    }
}

impl MirConfig {
    pub fn check(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Constraint(m));
        let shrink = POOL.pow(STAGES as u32);
        if self.input_hw == 0 || self.input_hw % shrink != 0 {
            return bad(format!("MIR input side {} must be a positive multiple of {shrink}", self.input_hw));
        }
        if self.channels.iter().any(|&c| c == 0) || self.bottleneck_hidden == 0 {
            return bad("MIR channel counts and bottleneck width must be positive".into());
        }
        let side = self.input_hw / shrink;
        let flat = self.channels[STAGES - 1] * side * side;
        if flat != MIR_BOTTLENECK {
            return bad(format!(
                "MIR flattened bottleneck is {} ({}×{side}×{side}), must be {MIR_BOTTLENECK}",
                flat,
                self.channels[STAGES - 1]
            ));
        }
        Ok(())
    }
}

pub fn build_mir(cfg: &MirConfig) -> Result<ModelSpec, ModelError> {
    cfg.check()?;
    let mut b = ModelBuilder::new(cfg.name.clone(), vec![1, cfg.input_hw, cfg.input_hw], cfg.precision, cfg.seed);
    for (i, &c) in cfg.channels.iter().enumerate() {
        b.conv2d(&format!("conv{}", i + 1), c, KERNEL, 1, KERNEL / 2, Activation::None);
        b.layernorm(Activation::Relu);
        b.maxpool2d(POOL, POOL);
    }
    let encoded = b.dims().to_vec();
    b.dense(cfg.bottleneck_hidden, Activation::Relu);
    b.dense_shaped(encoded, Activation::Relu);
    for i in (0..STAGES).rev() {
        let act = if i == 0 { Activation::None } else { Activation::Relu };
        // (n-1)·2 − 2 + 3 + 1 = 2n: undoes conv + pool of stage i
        b.transposed_conv2d(&format!("deconv{}", i + 1), &format!("conv{}", i + 1), POOL, KERNEL / 2, 1, act);
    }
    b.finish()
}
