//! Text manifests that describe a servable model.
//!
//! One `key = value` per line, `#` starts a comment. Example:
//!
//! ```text
//! name = hermit-mat1
//! arch = hermit
//! precision = f16
//! seed = 11
//! weights = hermit-mat1.dwts   # optional, relative to the manifest
//! micro_batch = 64             # optional execution hints
//! tiles = 4
//! ```
//!
//! `arch = layers` spells the plan out with repeated `layer =` lines:
//!
//! ```text
//! input_shape = 2
//! layer = dense 3 relu
//! layer = dense 1 none
//! ```
//!
//! Layer forms: `dense <n_out> <act>`, `conv2d <name> <c_out> <k> <stride> <pad> <act>`,
//! `maxpool2d <window> <stride>`, `layernorm <act>`,
//! `transposed_conv2d <name> <tie_ref> <stride> <pad> <output_pad> <act>`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{build_hermit, build_mir, HermitConfig, MirConfig, ModelBuilder, ModelError, ModelSpec};
use crate::kernels::Activation;
use crate::tensor::Precision;
use crate::weights::WeightStore;

#[derive(Debug, Clone, PartialEq)]
pub enum Architecture {
    Hermit { widths: Option<Vec<usize>> },
    Mir {
        input_hw: Option<usize>,
        channels: Option<[usize; 4]>,
        bottleneck_hidden: Option<usize>,
    },
    Layers { input_shape: Vec<usize>, layers: Vec<String> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelManifest {
    pub name: String,
    pub arch: Architecture,
    pub precision: Precision,
    pub seed: u64,
    pub weights: Option<PathBuf>,
    pub tiles: Option<usize>,
    pub micro_batch: Option<usize>,
}

impl ModelManifest {
    pub fn new(name: impl Into<String>, arch: Architecture) -> Self {
        ModelManifest {
            name: name.into(),
            arch,
            precision: Precision::F16,
            seed: 0,
            weights: None,
            tiles: None,
            micro_batch: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = fs::read_to_string(path).map_err(|e| ModelError::Manifest {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
        let mut m = Self::parse(&text, &path.display().to_string())?;
        if let (Some(w), Some(dir)) = (&m.weights, path.parent()) {
            if w.is_relative() {
                m.weights = Some(dir.join(w));
            }
        }
        Ok(m)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, ModelError> {
        let err = |line: usize, message: String| ModelError::Manifest {
            path: origin.to_string(),
            line,
            message,
        };
        let mut name = None;
        let mut arch_name = None;
        let mut precision = Precision::F16;
        let mut seed = 0u64;
        let mut weights = None;
        let mut tiles = None;
        let mut micro = None;
        let mut widths = None;
        let mut input_hw = None;
        let mut channels = None;
        let mut bottleneck = None;
        let mut input_shape = None;
        let mut layers = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(line_no, format!("expected `key = value`, got `{line}`")))?;
            let num = |v: &str| v.parse::<usize>().map_err(|e| err(line_no, format!("`{key}`: {e}")));
            let list = |v: &str| -> Result<Vec<usize>, ModelError> {
                v.split(',').map(|s| s.trim().parse::<usize>().map_err(|e| err(line_no, format!("`{key}`: {e}")))).collect()
            };
            match key {
                "name" => name = Some(value.to_string()),
                "arch" => arch_name = Some((value.to_string(), line_no)),
                "precision" => precision = value.parse().map_err(|e: crate::tensor::TensorError| err(line_no, e.to_string()))?,
                "seed" => seed = value.parse().map_err(|e| err(line_no, format!("`seed`: {e}")))?,
                "weights" => weights = Some(PathBuf::from(value)),
                "tiles" => tiles = Some(num(value)?),
                "micro_batch" => micro = Some(num(value)?),
                "widths" => widths = Some(list(value)?),
                "input_hw" => input_hw = Some(num(value)?),
                "channels" => {
                    let c = list(value)?;
                    channels = Some(<[usize; 4]>::try_from(c).map_err(|c| {
                        err(line_no, format!("`channels` needs 4 entries, got {}", c.len()))
                    })?);
                }
                "bottleneck" => bottleneck = Some(num(value)?),
                "input_shape" => input_shape = Some(list(value)?),
                "layer" => layers.push(value.to_string()),
                other => return Err(err(line_no, format!("unknown key `{other}`"))),
            }
        }
        let name = name.ok_or_else(|| err(0, "missing `name`".into()))?;
        let (arch_name, arch_line) = arch_name.ok_or_else(|| err(0, "missing `arch`".into()))?;
        let arch = match arch_name.as_str() {
            "hermit" => Architecture::Hermit { widths },
            "mir" => Architecture::Mir {
                input_hw,
                channels,
                bottleneck_hidden: bottleneck,
            },
            "layers" => Architecture::Layers {
                input_shape: input_shape.ok_or_else(|| err(0, "`arch = layers` needs `input_shape`".into()))?,
                layers,
            },
            other => return Err(err(arch_line, format!("unknown arch `{other}` (hermit, mir, layers)"))),
        };
        Ok(ModelManifest {
            name,
            arch,
            precision,
            seed,
            weights,
            tiles,
            micro_batch: micro,
        })
    }

    /// Text form accepted by [`ModelManifest::parse`].
    pub fn render(&self) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "name = {}", self.name);
        match &self.arch {
            Architecture::Hermit { widths } => {
                let _ = writeln!(s, "arch = hermit");
                if let Some(w) = widths {
                    let _ = writeln!(s, "widths = {}", join(w));
                }
            }
            Architecture::Mir {
                input_hw,
                channels,
                bottleneck_hidden,
            } => {
                let _ = writeln!(s, "arch = mir");
                if let Some(v) = input_hw {
                    let _ = writeln!(s, "input_hw = {v}");
                }
                if let Some(c) = channels {
                    let _ = writeln!(s, "channels = {}", join(c));
                }
                if let Some(v) = bottleneck_hidden {
                    let _ = writeln!(s, "bottleneck = {v}");
                }
            }
            Architecture::Layers { input_shape, layers } => {
                let _ = writeln!(s, "arch = layers");
                let _ = writeln!(s, "input_shape = {}", join(input_shape));
                for l in layers {
                    let _ = writeln!(s, "layer = {l}");
                }
            }
        }
        let _ = writeln!(s, "precision = {}", self.precision);
        let _ = writeln!(s, "seed = {}", self.seed);
        if let Some(w) = &self.weights {
            let _ = writeln!(s, "weights = {}", w.display());
        }
        if let Some(t) = self.tiles {
            let _ = writeln!(s, "tiles = {t}");
        }
        if let Some(m) = self.micro_batch {
            let _ = writeln!(s, "micro_batch = {m}");
        }
        s
    }

    /// Build the described model; if a weight file is named, its tensors
    /// replace the seeded ones (names and shapes must match).
    pub fn build(&self) -> Result<ModelSpec, ModelError> {
        let mut model = match &self.arch {
            Architecture::Hermit { widths } => {
                let mut cfg = HermitConfig {
                    precision: self.precision,
                    seed: self.seed,
                    name: self.name.clone(),
                    ..HermitConfig::default()
                };
                if let Some(w) = widths {
                    cfg.widths = w.clone();
                }
                build_hermit(&cfg)?
            }
            Architecture::Mir {
                input_hw,
                channels,
                bottleneck_hidden,
            } => {
                let d = MirConfig::default();
                build_mir(&MirConfig {
                    input_hw: input_hw.unwrap_or(d.input_hw),
                    channels: channels.unwrap_or(d.channels),
                    bottleneck_hidden: bottleneck_hidden.unwrap_or(d.bottleneck_hidden),
                    precision: self.precision,
                    seed: self.seed,
                    name: self.name.clone(),
                })?
            }
            Architecture::Layers { input_shape, layers } => self.build_layers(input_shape, layers)?,
        };
        if let Some(path) = &self.weights {
            let store = WeightStore::load(path)?;
            for layer in &model.layers {
                for w in layer.kind.owned_weights() {
                    let want = model.weights.get(w).expect("builder owns it").shape().to_vec();
                    let got = store.get(w).ok_or_else(|| ModelError::MissingWeight {
                        layer: layer.name.clone(),
                        weight: w.to_string(),
                    })?;
                    if got.shape() != want.as_slice() {
                        return Err(ModelError::WeightShape {
                            layer: layer.name.clone(),
                            weight: w.to_string(),
                            expected: want,
                            actual: got.shape().to_vec(),
                        });
                    }
                }
            }
            let rounded = store
                .iter()
                .map(|(k, t)| (k.to_string(), crate::tensor::round_to_precision(t, self.precision)))
                .collect::<Vec<_>>();
            let mut ws = WeightStore::new();
            for (k, t) in rounded {
                ws.insert(k, t);
            }
            model.weights = ws;
            model.validate()?;
        }
        Ok(model)
    }

    fn build_layers(&self, input_shape: &[usize], layers: &[String]) -> Result<ModelSpec, ModelError> {
        let mut b = ModelBuilder::new(self.name.clone(), input_shape.to_vec(), self.precision, self.seed);
        for spec in layers {
            let bad = |m: &str| ModelError::Constraint(format!("layer `{spec}`: {m}"));
            let toks: Vec<&str> = spec.split_whitespace().collect();
            let n = |i: usize| -> Result<usize, ModelError> {
                toks.get(i).ok_or_else(|| bad("too few fields"))?.parse().map_err(|_| bad("expected an integer"))
            };
            let act = |i: usize| -> Result<Activation, ModelError> {
                toks.get(i).ok_or_else(|| bad("missing activation"))?.parse().map_err(|e: String| bad(&e))
            };
            match toks.first().copied() {
                Some("dense") => {
                    b.dense(n(1)?, act(2)?);
                }
                Some("conv2d") => {
                    let name = toks.get(1).ok_or_else(|| bad("missing name"))?;
                    b.conv2d(name, n(2)?, n(3)?, n(4)?, n(5)?, act(6)?);
                }
                Some("maxpool2d") => {
                    b.maxpool2d(n(1)?, n(2)?);
                }
                Some("layernorm") => {
                    b.layernorm(act(1)?);
                }
                Some("transposed_conv2d") => {
                    let name = toks.get(1).ok_or_else(|| bad("missing name"))?;
                    let tie = toks.get(2).ok_or_else(|| bad("missing tie_ref"))?;
                    b.transposed_conv2d(name, tie, n(3)?, n(4)?, n(5)?, act(6)?);
                }
                _ => return Err(bad("unknown layer kind")),
            }
        }
        b.finish()
    }
}
