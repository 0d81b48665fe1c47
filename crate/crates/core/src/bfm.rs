//! Bias-free masking: find pixels where the coarse prediction and the
//! labeled ground truth disagree by more than a ratio threshold, re-admit
//! edges both sources agree on, and derive the reliable supervision mask.

use crate::error::{Error, Result};
use crate::raster::{ensure_same_dims, BinaryMask, DepthMap, NORM_EPS};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BfmConfig {
    /// Ratio threshold of the unreliable test.
    pub tau: f64,
    pub dilate_kh: usize,
    pub dilate_kw: usize,
    /// Sobel magnitude threshold on the min-max normalized map.
    pub edge_grad_threshold: f64,
    /// Samples whose unreliable fraction exceeds this are dropped.
    pub discard_threshold: f64,
}

impl Default for BfmConfig {
    fn default() -> Self {
        Self {
            tau: 2.0,
            dilate_kh: 10,
            dilate_kw: 20,
            edge_grad_threshold: 0.05,
            discard_threshold: 0.5,
        }
    }
}

impl BfmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 1.0) {
            return Err(Error::Config(format!("bfm.tau must exceed 1, got {}", self.tau)));
        }
        if self.dilate_kh == 0 || self.dilate_kw == 0 {
            return Err(Error::Config("bfm dilation kernel must be at least 1x1".into()));
        }
        if !(self.discard_threshold > 0.0 && self.discard_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "bfm.discard_threshold must lie in (0, 1], got {}",
                self.discard_threshold
            )));
        }
        Ok(())
    }
}

/// Marks pixels where `max(Nc / Ngt, Ngt / Nc) > tau` on min-max normalized
/// maps. Denominators are clamped below at the normalization epsilon.
pub fn unreliable_mask(d_coarse: &DepthMap, d_gt: &DepthMap, cfg: &BfmConfig) -> Result<BinaryMask> {
    ensure_same_dims(d_coarse.dims(), d_gt.dims(), "unreliable_mask")?;
    let nc = d_coarse.minmax_normalize();
    let ng = d_gt.minmax_normalize();
    let data = nc
        .values()
        .iter()
        .zip(ng.values())
        .map(|(&c, &g)| {
            let ratio = (c / g.max(NORM_EPS)).max(g / c.max(NORM_EPS));
            ratio > cfg.tau
        })
        .collect();
    BinaryMask::new(d_coarse.height(), d_coarse.width(), data)
}

/// Sobel gradient magnitude of the normalized map, replicate-padded.
pub fn sobel_magnitude(d: &DepthMap) -> DepthMap {
    let n = d.minmax_normalize();
    let (h, w) = n.dims();
    let at = |y: isize, x: isize| {
        n.get(
            y.clamp(0, h as isize - 1) as usize,
            x.clamp(0, w as isize - 1) as usize,
        )
    };
    DepthMap::from_fn(h, w, |y, x| {
        let (y, x) = (y as isize, x as isize);
        let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
            - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
        let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
            - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
        gx.hypot(gy)
    })
}

/// Edge pixels: Sobel magnitude above `cfg.edge_grad_threshold`.
pub fn edge_map(d: &DepthMap, cfg: &BfmConfig) -> BinaryMask {
    let mag = sobel_magnitude(d);
    BinaryMask::from_fn(d.height(), d.width(), |y, x| mag.get(y, x) > cfg.edge_grad_threshold)
}

/// Binary dilation with a `kh x kw` box. The anchor sits at
/// `((kh - 1) / 2, (kw - 1) / 2)`, so even kernels lean toward the top-left;
/// pixels outside the raster count as unset.
pub fn dilate(mask: &BinaryMask, kh: usize, kw: usize) -> BinaryMask {
    let (h, w) = mask.dims();
    let rows = dilate_1d(mask.values(), h, w, kw, true);
    let out = dilate_1d(&rows, h, w, kh, false);
    BinaryMask::new(h, w, out).expect("dims preserved")
}

fn dilate_1d(src: &[bool], h: usize, w: usize, k: usize, along_x: bool) -> Vec<bool> {
    let anchor = (k - 1) / 2;
    let (lines, len) = if along_x { (h, w) } else { (w, h) };
    let idx = |line: usize, i: usize| if along_x { line * w + i } else { i * w + line };
    let mut out = vec![false; h * w];
    let mut prefix = vec![0usize; len + 1];
    for line in 0..lines {
        for i in 0..len {
            prefix[i + 1] = prefix[i] + src[idx(line, i)] as usize;
        }
        // out[i] = any src[j] for j in [i + anchor + 1 - k, i + anchor]
        for i in 0..len {
            let hi = (i + anchor).min(len - 1);
            let lo = (i + anchor + 1).saturating_sub(k);
            if lo <= hi && prefix[hi + 1] > prefix[lo] {
                out[idx(line, i)] = true;
            }
        }
    }
    out
}

/// Every intermediate of the reliable-mask construction.
#[derive(Debug, Clone, PartialEq)]
pub struct BfmMasks {
    pub unreliable: BinaryMask,
    pub edges_coarse: BinaryMask,
    pub edges_gt: BinaryMask,
    /// Dilated edges present in both sources.
    pub edge: BinaryMask,
    /// `edge | !unreliable`
    pub reliable: BinaryMask,
}

pub fn bfm_components(d_coarse: &DepthMap, d_gt: &DepthMap, cfg: &BfmConfig) -> Result<BfmMasks> {
    let unreliable = unreliable_mask(d_coarse, d_gt, cfg)?;
    let edges_coarse = dilate(&edge_map(d_coarse, cfg), cfg.dilate_kh, cfg.dilate_kw);
    let edges_gt = dilate(&edge_map(d_gt, cfg), cfg.dilate_kh, cfg.dilate_kw);
    let edge = edges_coarse.and(&edges_gt)?;
    let reliable = edge.or(&unreliable.not())?;
    Ok(BfmMasks {
        unreliable,
        edges_coarse,
        edges_gt,
        edge,
        reliable,
    })
}

/// Reliable supervision mask `(E_c & E_gt) | !M_unreliable`.
pub fn bfm_mask(d_coarse: &DepthMap, d_gt: &DepthMap, cfg: &BfmConfig) -> Result<BinaryMask> {
    Ok(bfm_components(d_coarse, d_gt, cfg)?.reliable)
}

/// True when the unreliable fraction strictly exceeds the discard threshold.
pub fn should_discard_sample(m_unreliable: &BinaryMask, cfg: &BfmConfig) -> bool {
    m_unreliable.mean() > cfg.discard_threshold
}
