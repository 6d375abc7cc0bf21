//! Affine accelerator latency profiles and their calibration from measured
//! (mini-batch, latency) anchor points.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::plan_microbatches;

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("calibration needs at least two anchors with distinct mini-batch sizes, got {0}")]
    TooFewAnchors(usize),
    #[error("profile {origin}:{line}: {message}")]
    Parse {
        origin: String,
        line: usize,
        message: String,
    },
    #[error("unknown profile `{0}` (shipped: a100-naive, a100-trt-cudagraphs, rdu1-python, rdu1-cpp, rdu1-remote)")]
    Unknown(String),
    #[error("negative profile coefficient `{0}`")]
    Negative(&'static str),
}

/// How the per-sample term scales with the number of tiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TileScaling {
    /// Per-sample cost divided by `tiles / reference_tiles`.
    Linear { reference_tiles: usize },
    /// Tiles have no effect (devices without a tile concept).
    Flat,
}

impl TileScaling {
    pub fn speedup(self, tiles: usize) -> f64 {
        match self {
            TileScaling::Linear { reference_tiles } => tiles.max(1) as f64 / reference_tiles.max(1) as f64,
            TileScaling::Flat => 1.0,
        }
    }
}

/// A measured point: `latency_ms` for one mini-batch of `mini` samples,
/// optionally at a known micro-batch size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub mini: usize,
    pub micro: Option<usize>,
    pub latency_ms: f64,
}

impl Anchor {
    pub fn new(mini: usize, latency_ms: f64) -> Self {
        Anchor { mini, micro: None, latency_ms }
    }
}

/// Modeled mini-batch latency:
///
/// `fixed_overhead_ms + chunks·per_microbatch_ms + per_sample_ms·max(mini − saturation_batch, 0) / speedup(tiles)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccelProfile {
    pub name: String,
    pub fixed_overhead_ms: f64,
    pub per_sample_ms: f64,
    pub per_microbatch_ms: f64,
    /// Samples absorbed by the fixed overhead before per-sample cost applies.
    pub saturation_batch: usize,
    pub tile_scaling: TileScaling,
    pub anchors: Vec<Anchor>,
}

impl AccelProfile {
    pub fn affine(name: impl Into<String>, fixed_overhead_ms: f64, per_sample_ms: f64) -> Self {
        AccelProfile {
            name: name.into(),
            fixed_overhead_ms,
            per_sample_ms,
            per_microbatch_ms: 0.0,
            saturation_batch: 0,
            tile_scaling: TileScaling::Flat,
            anchors: Vec::new(),
        }
    }

    pub fn check(&self) -> Result<(), ProfileError> {
        for (name, v) in [
            ("fixed_overhead_ms", self.fixed_overhead_ms),
            ("per_sample_ms", self.per_sample_ms),
            ("per_microbatch_ms", self.per_microbatch_ms),
        ] {
            if !(v >= 0.0) {
                return Err(ProfileError::Negative(name));
            }
        }
        Ok(())
    }

    /// Latency of one mini-batch split into `chunks` micro-batches on `tiles` tiles.
    pub fn latency_ms(&self, mini: usize, chunks: usize, tiles: usize) -> f64 {
        let samples = mini.saturating_sub(self.saturation_batch) as f64;
        self.fixed_overhead_ms
            + chunks as f64 * self.per_microbatch_ms
            + self.per_sample_ms * samples / self.tile_scaling.speedup(tiles)
    }

    /// Latency with micro-batch equal to the mini-batch (one chunk) at the
    /// reference tile count.
    pub fn single_chunk_latency_ms(&self, mini: usize) -> f64 {
        let tiles = match self.tile_scaling {
            TileScaling::Linear { reference_tiles } => reference_tiles,
            TileScaling::Flat => 1,
        };
        self.latency_ms(mini, 1, tiles)
    }

    /// Highest modeled throughput over `minis`, in samples per second.
    pub fn peak_throughput_sps(&self, minis: &[usize]) -> f64 {
        minis
            .iter()
            .filter(|&&m| m > 0)
            .map(|&m| m as f64 / (self.single_chunk_latency_ms(m) / 1e3))
            .fold(0.0, f64::max)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, ProfileError> {
        let err = |line: usize, message: String| ProfileError::Parse {
            origin: origin.to_string(),
            line,
            message,
        };
        let mut name = String::from("unnamed");
        let mut fixed = None;
        let mut per_sample = None;
        let mut per_mb = None;
        let mut saturation = 0usize;
        let mut scaling = TileScaling::Flat;
        let mut reference_tiles = 1usize;
        let mut anchors = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err(line_no, format!("expected `key = value`, got `{line}`")))?;
            let f = |v: &str| v.parse::<f64>().map_err(|e| err(line_no, format!("`{k}`: {e}")));
            let n = |v: &str| v.parse::<usize>().map_err(|e| err(line_no, format!("`{k}`: {e}")));
            match k {
                "name" => name = v.to_string(),
                "fixed_overhead_ms" => fixed = Some(f(v)?),
                "per_sample_ms" => per_sample = Some(f(v)?),
                "per_microbatch_ms" => per_mb = Some(f(v)?),
                "saturation_batch" => saturation = n(v)?,
                "tile_scaling" => {
                    scaling = match v {
                        "linear" => TileScaling::Linear { reference_tiles: 1 },
                        "flat" => TileScaling::Flat,
                        o => return Err(err(line_no, format!("unknown tile_scaling `{o}`"))),
                    }
                }
                "reference_tiles" => reference_tiles = n(v)?,
                "anchor" => {
                    let parts: Vec<&str> = v.split_whitespace().collect();
                    let anchor = match parts[..] {
                        [m, l] => Anchor::new(n(m)?, f(l)?),
                        [m, l, mb] => Anchor { mini: n(m)?, micro: Some(n(mb)?), latency_ms: f(l)? },
                        _ => return Err(err(line_no, "anchor is `<mini> <latency_ms> [micro]`".into())),
                    };
                    anchors.push(anchor);
                }
                o => return Err(err(line_no, format!("unknown key `{o}`"))),
            }
        }
        if let TileScaling::Linear { .. } = scaling {
            scaling = TileScaling::Linear { reference_tiles };
        }
        let mut profile = match (fixed, per_sample) {
            (Some(o), Some(c)) => AccelProfile {
                per_microbatch_ms: per_mb.unwrap_or(0.0),
                anchors: anchors.clone(),
                ..AccelProfile::affine(name.clone(), o, c)
            },
            (None, None) => {
                calibrate_profile(&anchors)
                    .map_err(|e| err(0, format!("no coefficients and {e}")))?
                    .profile
            }
            _ => return Err(err(0, "give both fixed_overhead_ms and per_sample_ms, or neither".into())),
        };
        profile.name = name;
        profile.saturation_batch = saturation;
        profile.tile_scaling = scaling;
        profile.check().map_err(|e| err(0, e.to_string()))?;
        Ok(profile)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "fixed_overhead_ms = {}", self.fixed_overhead_ms);
        let _ = writeln!(s, "per_sample_ms = {}", self.per_sample_ms);
        let _ = writeln!(s, "per_microbatch_ms = {}", self.per_microbatch_ms);
        let _ = writeln!(s, "saturation_batch = {}", self.saturation_batch);
        match self.tile_scaling {
            TileScaling::Linear { reference_tiles } => {
                let _ = writeln!(s, "tile_scaling = linear\nreference_tiles = {reference_tiles}");
            }
            TileScaling::Flat => {
                let _ = writeln!(s, "tile_scaling = flat");
            }
        }
        for a in &self.anchors {
            match a.micro {
                Some(m) => {
                    let _ = writeln!(s, "anchor = {} {} {}", a.mini, a.latency_ms, m);
                }
                None => {
                    let _ = writeln!(s, "anchor = {} {}", a.mini, a.latency_ms);
                }
            }
        }
        s
    }

    /// Load a profile by shipped name or from a file path.
    pub fn load(name_or_path: &str) -> Result<Self, ProfileError> {
        if let Some(p) = shipped_profile(name_or_path) {
            return Ok(p);
        }
        let path = Path::new(name_or_path);
        let text = fs::read_to_string(path).map_err(|_| ProfileError::Unknown(name_or_path.to_string()))?;
        Self::parse(&text, &path.display().to_string())
    }
}

const SHIPPED: &[(&str, &str)] = &[
    ("a100-naive", include_str!("../../profiles/a100-naive.profile")),
    ("a100-trt-cudagraphs", include_str!("../../profiles/a100-trt-cudagraphs.profile")),
    ("rdu1-python", include_str!("../../profiles/rdu1-python.profile")),
    ("rdu1-cpp", include_str!("../../profiles/rdu1-cpp.profile")),
    ("rdu1-remote", include_str!("../../profiles/rdu1-remote.profile")),
];

/// Profiles calibrated from published anchor measurements. Accepts the
/// aliases `a100-opt` and `rdu1`.
pub fn shipped_profile(name: &str) -> Option<AccelProfile> {
    let canonical = match name {
        "a100-opt" | "a100-optimized" => "a100-trt-cudagraphs",
        "rdu1" => "rdu1-cpp",
        other => other,
    };
    SHIPPED
        .iter()
        .find(|(n, _)| *n == canonical)
        .map(|(n, text)| AccelProfile::parse(text, n).expect("shipped profile parses"))
}

pub fn shipped_profile_names() -> impl Iterator<Item = &'static str> {
    SHIPPED.iter().map(|(n, _)| *n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub profile: AccelProfile,
    /// Predicted minus observed latency per anchor.
    pub residuals_ms: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Least-squares fit of `latency = fixed + per_sample·mini` (plus a
/// per-micro-batch term when at least three anchors all carry a micro-batch
/// size). Negative coefficients are clamped to zero and reported.
pub fn calibrate_profile(anchors: &[Anchor]) -> Result<Calibration, ProfileError> {
    let mut distinct: Vec<usize> = anchors.iter().map(|a| a.mini).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(ProfileError::TooFewAnchors(anchors.len()));
    }
    let chunks = |a: &Anchor| {
        a.micro
            .and_then(|m| plan_microbatches(a.mini, m).ok())
            .map(|c| c.len())
    };
    let with_chunk_term = anchors.len() >= 3 && anchors.iter().all(|a| chunks(a).is_some());
    let cols = if with_chunk_term { 3 } else { 2 };
    let design = DMatrix::from_fn(anchors.len(), cols, |r, c| match c {
        0 => 1.0,
        1 => anchors[r].mini as f64,
        _ => chunks(&anchors[r]).unwrap_or(1) as f64,
    });
    let y = DVector::from_iterator(anchors.len(), anchors.iter().map(|a| a.latency_ms));
    let coef = design
        .clone()
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|_| ProfileError::TooFewAnchors(anchors.len()))?;

    let mut warnings = Vec::new();
    let mut clamp = |name: &str, v: f64| {
        // snap round-off from exact fits
        let scale = anchors.iter().map(|a| a.latency_ms.abs()).fold(1e-300, f64::max);
        if v.abs() < 1e-12 * scale {
            0.0
        } else if v < 0.0 {
            warnings.push(format!("{name} fitted to {v:.6e}, clamped to 0"));
            0.0
        } else {
            v
        }
    };
    let fixed = clamp("fixed_overhead_ms", coef[0]);
    let per_sample = clamp("per_sample_ms", coef[1]);
    let per_mb = if with_chunk_term { clamp("per_microbatch_ms", coef[2]) } else { 0.0 };

    let profile = AccelProfile {
        per_microbatch_ms: per_mb,
        anchors: anchors.to_vec(),
        ..AccelProfile::affine("calibrated", fixed, per_sample)
    };
    let residuals_ms = anchors
        .iter()
        .map(|a| {
            profile.fixed_overhead_ms
                + profile.per_sample_ms * a.mini as f64
                + profile.per_microbatch_ms * chunks(a).unwrap_or(0) as f64
                - a.latency_ms
        })
        .collect();
    Ok(Calibration {
        profile,
        residuals_ms,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_solve() {
        let cal = calibrate_profile(&[Anchor::new(1, 0.65), Anchor::new(32768, 3.92)]).unwrap();
        // closed form: c = (3.92 - 0.65) / 32767, o = 0.65 - c
        let c = (3.92 - 0.65) / 32767.0;
        assert!((cal.profile.per_sample_ms - c).abs() < 1e-12);
        assert!((cal.profile.fixed_overhead_ms - (0.65 - c)).abs() < 1e-9);
        assert!((cal.profile.fixed_overhead_ms - 0.6499).abs() < 1e-4);
        assert!((cal.profile.per_sample_ms - 9.98e-5).abs() < 1e-7);
        assert!(cal.residuals_ms.iter().all(|r| r.abs() < 1e-9));
        assert!(cal.warnings.is_empty());
    }

    #[test]
    fn flat_line() {
        let cal = calibrate_profile(&[Anchor::new(1, 1.0), Anchor::new(2, 1.0)]).unwrap();
        assert!((cal.profile.fixed_overhead_ms - 1.0).abs() < 1e-12);
        assert_eq!(cal.profile.per_sample_ms, 0.0);
    }

    #[test]
    fn single_anchor_rejected() {
        assert_eq!(calibrate_profile(&[Anchor::new(4, 1.0)]), Err(ProfileError::TooFewAnchors(1)));
        assert!(calibrate_profile(&[Anchor::new(4, 1.0), Anchor::new(4, 2.0)]).is_err());
    }

    #[test]
    fn negative_slope_clamped_with_warning() {
        let cal = calibrate_profile(&[Anchor::new(1, 2.0), Anchor::new(100, 1.0)]).unwrap();
        assert_eq!(cal.profile.per_sample_ms, 0.0);
        assert_eq!(cal.warnings.len(), 1);
    }

    #[test]
    fn three_anchors_with_micro_fit_chunk_term() {
        // synthetic truth: o = 0.5, c = 0.001, p = 0.02
        let truth = |mini: usize, micro: usize| 0.5 + 0.001 * mini as f64 + 0.02 * mini.div_ceil(micro) as f64;
        let anchors: Vec<Anchor> = [(64, 64), (64, 8), (256, 16), (1024, 1024)]
            .iter()
            .map(|&(m, u)| Anchor { mini: m, micro: Some(u), latency_ms: truth(m, u) })
            .collect();
        let p = calibrate_profile(&anchors).unwrap().profile;
        assert!((p.fixed_overhead_ms - 0.5).abs() < 1e-9);
        assert!((p.per_sample_ms - 0.001).abs() < 1e-12);
        assert!((p.per_microbatch_ms - 0.02).abs() < 1e-9);
    }

    #[test]
    fn shipped_profiles_load() {
        for n in shipped_profile_names() {
            let p = shipped_profile(n).unwrap();
            assert_eq!(p.name, n);
            p.check().unwrap();
        }
        assert_eq!(shipped_profile("a100-opt").unwrap().name, "a100-trt-cudagraphs");
        assert!(AccelProfile::load("no-such-profile").is_err());
    }

    #[test]
    fn render_parse_roundtrip() {
        let mut p = shipped_profile("rdu1-cpp").unwrap();
        p.per_microbatch_ms = 0.003;
        p.saturation_batch = 16;
        assert_eq!(AccelProfile::parse(&p.render(), "x").unwrap(), p);
    }

    #[test]
    fn tiles_scale_per_sample_term() {
        let p = AccelProfile {
            tile_scaling: TileScaling::Linear { reference_tiles: 1 },
            ..AccelProfile::affine("t", 1.0, 0.01)
        };
        assert_eq!(p.latency_ms(100, 1, 1), 2.0);
        assert_eq!(p.latency_ms(100, 1, 4), 1.25);
    }
}
