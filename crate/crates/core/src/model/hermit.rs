//! Fully connected encoder / DJINN / decoder stack.

use super::{ModelBuilder, ModelError, ModelSpec};
use crate::kernels::Activation;
use crate::tensor::Precision;

pub const HERMIT_INPUT_DIM: usize = 42;
pub const HERMIT_PARAM_TARGET: f64 = 2.8e6;

const ENCODER_LAYERS: usize = 4;
const DJINN_LAYERS: usize = 11;
const DECODER_LAYERS: usize = 6;
const ENCODER_MAX_WIDTH: usize = 19;
const DJINN_MAX_WIDTH: usize = 2050;
const DECODER_MAX_WIDTH: usize = 27;

/// Output width of each of the 21 dense layers: 4 encoder, 11 DJINN, 6
/// decoder. Solved against the parameter budget: 2,796,037 parameters.
pub const HERMIT_DEFAULT_WIDTHS: [usize; 21] = [
    19, 14, 10, 8, // encoder
    16, 64, 256, 670, 2050, 512, 256, 128, 64, 32, 24, // DJINN
    24, 27, 24, 20, 24, 27, // decoder
];

#[derive(Debug, Clone, PartialEq)]
pub struct HermitConfig {
    pub widths: Vec<usize>,
    pub input_dim: usize,
    pub precision: Precision,
    pub seed: u64,
    pub name: String,
}

impl Default for HermitConfig {
    fn default() -> Self {
        HermitConfig {
            widths: HERMIT_DEFAULT_WIDTHS.to_vec(),
            input_dim: HERMIT_INPUT_DIM,
            precision: Precision::F16,
            seed: 0x4845_524d,
            name: "hermit".into(),
        }
    }
}

impl HermitConfig {
    pub fn check(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Constraint(m));
        let total = ENCODER_LAYERS + DJINN_LAYERS + DECODER_LAYERS;
        if self.widths.len() != total {
            return bad(format!("hermit needs exactly {total} dense layers, got {}", self.widths.len()));
        }
        if self.input_dim != HERMIT_INPUT_DIM {
            return bad(format!("hermit input dim must be {HERMIT_INPUT_DIM}, got {}", self.input_dim));
        }
        if let Some(&z) = self.widths.iter().find(|&&w| w == 0) {
            return bad(format!("hermit layer width must be positive, got {z}"));
        }
        let (enc, rest) = self.widths.split_at(ENCODER_LAYERS);
        let (djinn, dec) = rest.split_at(DJINN_LAYERS);
        let max = |s: &[usize]| s.iter().copied().max().unwrap_or(0);
        if max(enc) > ENCODER_MAX_WIDTH {
            return bad(format!("encoder max width {} exceeds {ENCODER_MAX_WIDTH}", max(enc)));
        }
        if max(djinn) > DJINN_MAX_WIDTH {
            return bad(format!("DJINN max width {} exceeds {DJINN_MAX_WIDTH}", max(djinn)));
        }
        if max(dec) > DECODER_MAX_WIDTH {
            return bad(format!("decoder max width {} exceeds {DECODER_MAX_WIDTH}", max(dec)));
        }
        Ok(())
    }
}

/// Build the 21-layer dense model. ReLU on hidden layers, linear output.
pub fn build_hermit(cfg: &HermitConfig) -> Result<ModelSpec, ModelError> {
    cfg.check()?;
    let mut b = ModelBuilder::new(cfg.name.clone(), vec![cfg.input_dim], cfg.precision, cfg.seed);
    let last = cfg.widths.len() - 1;
    for (i, &w) in cfg.widths.iter().enumerate() {
        b.dense(w, if i == last { Activation::None } else { Activation::Relu });
    }
    b.finish()
}
