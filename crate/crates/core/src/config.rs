//! Run configuration, read from TOML. Every section mirrors one module's
//! config; unknown keys are rejected so typos fail loudly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::OracleConfig;
use crate::bfm::BfmConfig;
use crate::data::GenConfig;
use crate::error::{Error, Result};
use crate::fusion::NetConfig;
use crate::losses::LossConfig;
use crate::metrics::{BR_TOLERANCE, D3R_CELL, D3R_THRESHOLD};
use crate::tiling::GridSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Passes over the training scenes; each pass draws one crop per scene.
    pub epochs: usize,
    /// Samples per micro-batch.
    pub batch_size: usize,
    /// Micro-batches per optimizer step.
    pub accum_steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Side of each training patch in scene pixels; 0 means `net.patch_res`.
    pub crop_patch: usize,
    /// Overlap between neighbouring patches of a training group, in pixels.
    pub overlap: usize,
    /// Range of the per-sample factor applied to `crop_patch` and `overlap`;
    /// `[1, 1]` keeps every crop at the nominal size.
    pub crop_scale: [f64; 2],
    /// Supervise only the bias-free reliable region.
    pub use_bfm: bool,
    /// Crops redrawn before a sample is skipped.
    pub max_resample: usize,
    /// Write a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch_size: 8,
            accum_steps: 2,
            learning_rate: 0.01,
            momentum: 0.9,
            crop_patch: 0,
            overlap: 55,
            crop_scale: [1.0, 1.0],
            use_bfm: true,
            max_resample: 8,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub grid: GridSpec,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec { rows: 4, cols: 4 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Overlap of the groups used for consistency error; 0 means
    /// `train.overlap`.
    pub ce_overlap: usize,
    pub br_tolerance: usize,
    pub d3r_cell: usize,
    pub d3r_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ce_overlap: 0,
            br_tolerance: BR_TOLERANCE,
            d3r_cell: D3R_CELL,
            d3r_threshold: D3R_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds network init and training-sample selection.
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub gen: GenConfig,
    pub oracle: OracleConfig,
    pub net: NetConfig,
    pub loss: LossConfig,
    pub bfm: BfmConfig,
    pub train: TrainConfig,
    pub infer: InferConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn crop_patch(&self) -> usize {
        if self.train.crop_patch == 0 {
            self.net.patch_res
        } else {
            self.train.crop_patch
        }
    }

    pub fn ce_overlap(&self) -> usize {
        if self.eval.ce_overlap == 0 {
            self.train.overlap
        } else {
            self.eval.ce_overlap
        }
    }

    /// Samples consumed per optimizer step.
    pub fn samples_per_step(&self) -> usize {
        self.train.batch_size * self.train.accum_steps
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.oracle.validate()?;
        self.net.validate()?;
        self.loss.validate()?;
        self.bfm.validate()?;
        let t = &self.train;
        if t.batch_size == 0 || t.accum_steps == 0 {
            return Err(Error::Config("train.batch_size and train.accum_steps must be at least 1".into()));
        }
        if !(t.learning_rate >= 0.0 && t.learning_rate.is_finite()) {
            return Err(Error::Config("train.learning_rate must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&t.momentum) {
            return Err(Error::Config("train.momentum must lie in [0, 1)".into()));
        }
        if self.oracle.working_res != self.net.patch_res {
            return Err(Error::Config(format!(
                "oracle.working_res {} must equal net.patch_res {}",
                self.oracle.working_res, self.net.patch_res
            )));
        }
        if self.oracle.feature_channels != self.net.feature_channels {
            return Err(Error::Config(format!(
                "oracle.feature_channels {} must equal net.feature_channels {}",
                self.oracle.feature_channels, self.net.feature_channels
            )));
        }
        let [lo, hi] = t.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("train.crop_scale [{lo}, {hi}] must satisfy 0 < lo <= hi")));
        }
        let p = self.crop_patch();
        for (what, ov) in [("train.overlap", t.overlap), ("eval.ce_overlap", self.ce_overlap())] {
            if ov > p {
                return Err(Error::Config(format!("{what} {ov} exceeds the patch size {p}")));
            }
        }
        let region = (2 * p - t.overlap.min(self.ce_overlap())) as f64 * hi.max(1.0);
        if region.round() as usize > self.gen.size {
            return Err(Error::Config(format!(
                "a 2x2 group of {p}px patches spans up to {region}px, larger than gen.size {}",
                self.gen.size
            )));
        }
        if self.eval.d3r_cell == 0 {
            return Err(Error::Config("eval.d3r_cell must be positive".into()));
        }
        Ok(())
    }
}
