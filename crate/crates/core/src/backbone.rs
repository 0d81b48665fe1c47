//! The frozen depth backbone behind a trait, plus a deterministic oracle that
//! derives coarse and fine predictions from a known depth field.
//!
//! The oracle's coarse path sees the whole scene at `working_res`, blurred and
//! bent by a monotone gamma curve, so it keeps the layout but loses edges.
//! The fine path sees one patch at full detail, but each patch gets its own
//! affine jitter `a_i * d + b_i`, which is exactly the per-patch scale and
//! shift ambiguity that makes naive tiling inconsistent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{mix_seed, Crop, DepthMap, FeatureMap, FeaturePyramid, PatchRect, RgbImage, Rng, PYRAMID_LEVELS};

const JITTER_STREAM: u64 = 0x6a17;
const LIFT_STREAM: u64 = 0x11f7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub working_res: usize,
    /// Channels each pyramid level is lifted to.
    pub feature_channels: usize,
    pub blur_sigma: f64,
    pub gamma: f64,
    /// Half-width of the multiplicative jitter: `a_i` is drawn from `1 ± range`.
    pub jitter_scale_range: f64,
    /// Half-width of the additive jitter: `b_i` is drawn from `± range`.
    pub jitter_shift_range: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            working_res: 128,
            feature_channels: 16,
            blur_sigma: 4.0,
            gamma: 0.85,
            jitter_scale_range: 0.2,
            jitter_shift_range: 0.1,
            seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.working_res < 1 << PYRAMID_LEVELS || self.working_res % (1 << PYRAMID_LEVELS) != 0 {
            return Err(Error::Config(format!(
                "oracle.working_res {} must be a positive multiple of {}",
                self.working_res,
                1 << PYRAMID_LEVELS
            )));
        }
        if self.feature_channels == 0 {
            return Err(Error::Config("oracle.feature_channels must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config("oracle.gamma must be positive".into()));
        }
        let ranges = [self.blur_sigma, self.jitter_scale_range, self.jitter_shift_range];
        if ranges.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(Error::Config("oracle blur and jitter ranges must be non-negative".into()));
        }
        if self.jitter_scale_range >= 1.0 {
            return Err(Error::Config("oracle.jitter_scale_range must stay below 1".into()));
        }
        Ok(())
    }
}

/// A depth prediction at the backbone's working resolution and its features.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneOutput {
    pub depth: DepthMap,
    pub features: FeaturePyramid,
}

pub trait Backbone {
    /// Whole-image prediction.
    fn coarse(&self, image: &RgbImage) -> Result<BackboneOutput>;
    /// Prediction for one patch; `index` identifies the patch for any
    /// patch-dependent behaviour.
    fn fine(&self, image: &RgbImage, patch: &PatchRect, index: u64) -> Result<BackboneOutput>;
}

/// Stand-in backbone that answers from the scene's depth field.
#[derive(Debug, Clone)]
pub struct OracleBackbone {
    depth: DepthMap,
    cfg: OracleConfig,
}

impl OracleBackbone {
    pub fn for_scene(depth: DepthMap, cfg: OracleConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { depth, cfg })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.cfg
    }
}

impl Backbone for OracleBackbone {
    fn coarse(&self, _image: &RgbImage) -> Result<BackboneOutput> {
        oracle_coarse(&self.depth, &self.cfg)
    }

    fn fine(&self, _image: &RgbImage, patch: &PatchRect, index: u64) -> Result<BackboneOutput> {
        oracle_fine(&self.depth, patch, index, &self.cfg)
    }
}

pub fn oracle_coarse(scene: &DepthMap, cfg: &OracleConfig) -> Result<BackboneOutput> {
    cfg.validate()?;
    let r = cfg.working_res;
    let base = scene.resize_bilinear(r, r).minmax_normalize();
    let depth = gaussian_blur(&base, cfg.blur_sigma).map(|v| v.max(0.0).powf(cfg.gamma));
    let features = feature_pyramid(&depth, cfg);
    Ok(BackboneOutput { depth, features })
}

pub fn oracle_fine(scene: &DepthMap, patch: &PatchRect, index: u64, cfg: &OracleConfig) -> Result<BackboneOutput> {
    cfg.validate()?;
    let r = cfg.working_res;
    let crop = scene.crop(patch)?;
    let (a, b) = patch_jitter(cfg, index);
    let depth = crop.resize_bilinear(r, r).minmax_normalize().map(|v| a * v + b);
    let features = feature_pyramid(&depth, cfg);
    Ok(BackboneOutput { depth, features })
}

/// The `(scale, shift)` applied to fine patch `index`; a pure function of the
/// seed and the index.
pub fn patch_jitter(cfg: &OracleConfig, index: u64) -> (f64, f64) {
    let mut rng = Rng::with_stream(mix_seed(&[cfg.seed, index]), JITTER_STREAM);
    let a = 1.0 + rng.range(-cfg.jitter_scale_range, cfg.jitter_scale_range);
    let b = rng.range(-cfg.jitter_shift_range, cfg.jitter_shift_range);
    (a, b)
}

/// Separable Gaussian blur with replicated borders; `sigma <= 0` is the
/// identity.
pub fn gaussian_blur(d: &DepthMap, sigma: f64) -> DepthMap {
    if sigma <= 0.0 {
        return d.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    let (h, w) = d.dims();
    let pass = |src: &[f64], along_x: bool| -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    let off = k as isize - radius;
                    let (yy, xx) = if along_x {
                        (y, (x as isize + off).clamp(0, w as isize - 1) as usize)
                    } else {
                        ((y as isize + off).clamp(0, h as isize - 1) as usize, x)
                    };
                    acc += t * src[yy * w + xx];
                }
                out[y * w + x] = acc;
            }
        }
        out
    };
    let tmp = pass(d.values(), true);
    DepthMap::from_raw(h, w, pass(&tmp, false))
}

/// Binomial `[1, 2, 1] / 4` blur followed by 2x decimation.
fn reduce(src: &[f64], h: usize, w: usize) -> Vec<f64> {
    let at = |y: isize, x: isize| {
        src[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize]
    };
    let (oh, ow) = (h / 2, w / 2);
    let k = [0.25, 0.5, 0.25];
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let (cy, cx) = (2 * y as isize, 2 * x as isize);
            let mut acc = 0.0;
            for (i, ky) in k.iter().enumerate() {
                for (j, kx) in k.iter().enumerate() {
                    acc += ky * kx * at(cy + i as isize - 1, cx + j as isize - 1);
                }
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Five-level pyramid of `depth`, each level lifted from (value, d/dx, d/dy)
/// to `feature_channels` channels by a fixed seeded linear map.
pub fn feature_pyramid(depth: &DepthMap, cfg: &OracleConfig) -> FeaturePyramid {
    let c = cfg.feature_channels;
    let mut rng = Rng::with_stream(cfg.seed, LIFT_STREAM);
    let lift: Vec<[f64; 4]> = (0..c)
        .map(|_| [rng.normal(), rng.normal(), rng.normal(), 0.1 * rng.normal()])
        .collect();
    let (mut h, mut w) = depth.dims();
    let mut cur = depth.values().to_vec();
    let mut levels = Vec::with_capacity(PYRAMID_LEVELS);
    for _ in 0..PYRAMID_LEVELS {
        cur = reduce(&cur, h, w);
        h /= 2;
        w /= 2;
        let mut data = vec![0.0; c * h * w];
        for y in 0..h {
            for x in 0..w {
                let v = cur[y * w + x];
                let dx = (cur[y * w + (x + 1).min(w - 1)] - cur[y * w + x.saturating_sub(1)]) * 0.5;
                let dy = (cur[(y + 1).min(h - 1) * w + x] - cur[y.saturating_sub(1) * w + x]) * 0.5;
                for (ch, m) in lift.iter().enumerate() {
                    data[(ch * h + y) * w + x] = m[0] * v + m[1] * dx * w as f64 + m[2] * dy * h as f64 + m[3];
                }
            }
        }
        levels.push(FeatureMap {
            channels: c,
            height: h,
            width: w,
            data,
        });
    }
    FeaturePyramid::new(levels).expect("levels halve by construction")
}
