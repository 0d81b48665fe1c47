//! Raster types shared across the pipeline and the handful of pixel
//! operations every stage needs: cropping, corner-aligned bilinear resizing
//! and min-max normalization.
//!
//! Depth values live in `f64`. Every reduction accumulates in `f64` as well,
//! which keeps loss sums and finite-difference checks stable.

use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Guard added to the denominator of [`DepthMap::minmax_normalize`].
pub const NORM_EPS: f64 = 1e-6;

/// Integer rectangle in image coordinates. `(x0, y0)` is the inclusive top-left
/// corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchRect {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl fmt::Display for PatchRect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[x={} y={} w={} h={}]", self.x0, self.y0, self.w, self.h)
    }
}

impl PatchRect {
    pub const fn new(x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self { x0, y0, w, h }
    }

    /// Rectangle covering a whole `height x width` raster.
    pub const fn full(height: usize, width: usize) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn right(&self) -> usize {
        self.x0 + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y0 + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y0 && y < self.bottom() && x >= self.x0 && x < self.right()
    }

    /// Geometric intersection, `None` when empty.
    pub fn intersect(&self, other: &PatchRect) -> Option<PatchRect> {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x1 > x0 && y1 > y0).then(|| PatchRect::new(x0, y0, x1 - x0, y1 - y0))
    }

    /// Interprets `inner` as relative to `self` and returns it in the parent frame.
    pub fn compose(&self, inner: &PatchRect) -> PatchRect {
        PatchRect::new(self.x0 + inner.x0, self.y0 + inner.y0, inner.w, inner.h)
    }

    /// Expresses `self` in the local frame of `outer`. `self` must lie inside `outer`.
    pub fn relative_to(&self, outer: &PatchRect) -> PatchRect {
        debug_assert!(self.x0 >= outer.x0 && self.y0 >= outer.y0);
        PatchRect::new(self.x0 - outer.x0, self.y0 - outer.y0, self.w, self.h)
    }

    /// Fails with the first violated edge when the rectangle does not fit a
    /// `height x width` raster.
    pub fn check_within(&self, height: usize, width: usize) -> Result<()> {
        let edge = if self.w == 0 || self.h == 0 {
            Some("empty")
        } else if self.right() > width {
            Some("right")
        } else if self.bottom() > height {
            Some("bottom")
        } else {
            None
        };
        match edge {
            Some(edge) => Err(Error::Bounds {
                rect: self.to_string(),
                edge,
                height,
                width,
            }),
            None => Ok(()),
        }
    }
}

fn crop_plane<T: Copy>(src: &[T], width: usize, rect: &PatchRect) -> Vec<T> {
    let mut out = Vec::with_capacity(rect.area());
    for y in rect.y0..rect.bottom() {
        let row = y * width;
        out.extend_from_slice(&src[row + rect.x0..row + rect.right()]);
    }
    out
}

/// Rasters that can be cut to a sub-rectangle.
pub trait Crop: Sized {
    fn crop(&self, rect: &PatchRect) -> Result<Self>;
}

/// Single-channel depth raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("empty depth map {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} depth map needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite depth at ({}, {})",
                i / width,
                i % width
            )));
        }
        Ok(Self::from_raw(height, width, data))
    }

    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self::from_raw(height, width, vec![value; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::from_raw(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(height, width)`
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DepthMap {
        Self::from_raw(self.height, self.width, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Element-wise combination of two equally sized maps.
    pub fn zip_with(&self, other: &DepthMap, f: impl Fn(f64, f64) -> f64) -> Result<DepthMap> {
        ensure_same_dims(self.dims(), other.dims(), "zip_with")?;
        Ok(Self::from_raw(
            self.height,
            self.width,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> DepthMap {
        DepthMap::from_raw(
            out_h,
            out_w,
            resize_plane(&self.data, self.height, self.width, out_h, out_w),
        )
    }

    /// `(D - min) / (max - min + eps)`; a constant map becomes all zeros.
    /// Samples `rect` of a `scene_h x scene_w` frame this map covers onto an
    /// `out_h x out_w` grid.
    pub fn roi(&self, scene: (usize, usize), rect: &PatchRect, out: (usize, usize)) -> Result<DepthMap> {
        rect.check_within(scene.0, scene.1)?;
        Ok(Self::from_raw(out.0, out.1, roi_plane(&self.data, self.dims(), scene, rect, out)))
    }

    pub fn minmax_normalize(&self) -> DepthMap {
        let (lo, hi) = self.min_max();
        let denom = hi - lo + NORM_EPS;
        self.map(|v| (v - lo) / denom)
    }

    /// Copies `src` into this map with its top-left corner at `(y0, x0)`.
    pub fn paste(&mut self, src: &DepthMap, y0: usize, x0: usize) {
        for y in 0..src.height {
            let dst = (y0 + y) * self.width + x0;
            self.data[dst..dst + src.width]
                .copy_from_slice(&src.data[y * src.width..(y + 1) * src.width]);
        }
    }
}

impl Crop for DepthMap {
    fn crop(&self, rect: &PatchRect) -> Result<Self> {
        rect.check_within(self.height, self.width)?;
        Ok(Self::from_raw(rect.h, rect.w, crop_plane(&self.data, self.width, rect)))
    }
}

pub(crate) fn ensure_same_dims(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return Err(Error::Shape(format!(
            "{what}: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

/// Three-channel image with values in `[0, 1]`, stored channel-planar.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbImage {
    /// `data` is planar: all red values, then green, then blue.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != 3 * height * width {
            return Err(Error::Shape(format!(
                "rgb image {height}x{width} with {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("rgb values must lie in [0, 1]".into()));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * height * width);
        for c in rgb {
            data.extend(std::iter::repeat_n(c.clamp(0.0, 1.0), height * width));
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, y: usize, x: usize) -> [f64; 3] {
        let n = self.height * self.width;
        let i = y * self.width + x;
        [self.data[i], self.data[n + i], self.data[2 * n + i]]
    }

    pub fn set(&mut self, y: usize, x: usize, rgb: [f64; 3]) {
        let n = self.height * self.width;
        let i = y * self.width + x;
        for (c, v) in rgb.into_iter().enumerate() {
            self.data[c * n + i] = v.clamp(0.0, 1.0);
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> RgbImage {
        let mut data = Vec::with_capacity(3 * out_h * out_w);
        for c in 0..3 {
            data.extend(resize_plane(self.channel(c), self.height, self.width, out_h, out_w));
        }
        // convex combinations of [0, 1] values stay in range up to rounding
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        RgbImage {
            height: out_h,
            width: out_w,
            data,
        }
    }
}

impl Crop for RgbImage {
    fn crop(&self, rect: &PatchRect) -> Result<Self> {
        rect.check_within(self.height, self.width)?;
        let mut data = Vec::with_capacity(3 * rect.area());
        for c in 0..3 {
            data.extend(crop_plane(self.channel(c), self.width, rect));
        }
        Ok(Self {
            height: rect.h,
            width: rect.w,
            data,
        })
    }
}

/// Boolean raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} mask with {} values",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn values(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Fraction of set pixels.
    pub fn mean(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    pub fn not(&self) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.combine(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.combine(other, |a, b| a || b)
    }

    fn combine(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        ensure_same_dims(self.dims(), other.dims(), "mask combine")?;
        Ok(BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

impl Crop for BinaryMask {
    fn crop(&self, rect: &PatchRect) -> Result<Self> {
        rect.check_within(self.height, self.width)?;
        Ok(Self {
            height: rect.h,
            width: rect.w,
            data: crop_plane(&self.data, self.width, rect),
        })
    }
}

/// Multi-channel feature raster, channel-major (`c, y, x`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "feature map {channels}x{height}x{width} with {} values",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// `(channels, height, width)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn crop(&self, rect: &PatchRect) -> Result<FeatureMap> {
        rect.check_within(self.height, self.width)?;
        let mut data = Vec::with_capacity(self.channels * rect.area());
        for c in 0..self.channels {
            data.extend(crop_plane(self.plane(c), self.width, rect));
        }
        Ok(FeatureMap {
            channels: self.channels,
            height: rect.h,
            width: rect.w,
            data,
        })
    }

    /// Per-channel [`DepthMap::roi`].
    pub fn roi(&self, scene: (usize, usize), rect: &PatchRect, out: (usize, usize)) -> Result<FeatureMap> {
        rect.check_within(scene.0, scene.1)?;
        let mut data = Vec::with_capacity(self.channels * out.0 * out.1);
        for c in 0..self.channels {
            data.extend(roi_plane(self.plane(c), (self.height, self.width), scene, rect, out));
        }
        Ok(FeatureMap {
            channels: self.channels,
            height: out.0,
            width: out.1,
            data,
        })
    }

    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> FeatureMap {
        let mut data = Vec::with_capacity(self.channels * out_h * out_w);
        for c in 0..self.channels {
            data.extend(resize_plane(self.plane(c), self.height, self.width, out_h, out_w));
        }
        FeatureMap {
            channels: self.channels,
            height: out_h,
            width: out_w,
            data,
        }
    }
}

/// Number of levels in every feature pyramid.
pub const PYRAMID_LEVELS: usize = 5;

/// Five feature rasters, each half the spatial size of the previous one.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    levels: Vec<FeatureMap>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<FeatureMap>) -> Result<Self> {
        if levels.len() != PYRAMID_LEVELS {
            return Err(Error::Shape(format!(
                "pyramid needs {PYRAMID_LEVELS} levels, got {}",
                levels.len()
            )));
        }
        for pair in levels.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if b.height != a.height / 2 || b.width != a.width / 2 {
                return Err(Error::Shape(format!(
                    "pyramid level {}x{} does not halve {}x{}",
                    b.height, b.width, a.height, a.width
                )));
            }
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> &[FeatureMap] {
        &self.levels
    }

    pub fn level(&self, j: usize) -> &FeatureMap {
        &self.levels[j]
    }
}

/// Precomputed taps of a 1-D corner-aligned linear interpolation: output
/// sample `i` reads `(1 - t) * src[lo] + t * src[hi]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub t: f64,
}

pub(crate) fn linear_taps(n_in: usize, n_out: usize) -> Vec<Tap> {
    (0..n_out)
        .map(|i| {
            let pos = if n_out == 1 {
                (n_in - 1) as f64 / 2.0
            } else {
                i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
            };
            let lo = (pos.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            Tap {
                lo,
                hi,
                t: pos - lo as f64,
            }
        })
        .collect()
}

/// Corner-aligned bilinear resize of one row-major plane.
pub(crate) fn resize_plane(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    assert!(out_h >= 1 && out_w >= 1, "resize target must be non-empty");
    if (h, w) == (out_h, out_w) {
        return src.to_vec();
    }
    let ty = linear_taps(h, out_h);
    let tx = linear_taps(w, out_w);
    // horizontal pass, then vertical
    let mut tmp = vec![0.0; h * out_w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for (x, tap) in tx.iter().enumerate() {
            tmp[y * out_w + x] = lerp(row[tap.lo], row[tap.hi], tap.t);
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for (y, tap) in ty.iter().enumerate() {
        let (a, b) = (&tmp[tap.lo * out_w..], &tmp[tap.hi * out_w..]);
        for x in 0..out_w {
            out[y * out_w + x] = lerp(a[x], b[x], tap.t);
        }
    }
    out
}

/// Taps that read a `n_map`-sample axis covering a `n_scene`-pixel frame
/// (corner-aligned) at the `n_out` positions spanning `[start, start + len)`.
fn roi_taps(n_map: usize, n_scene: usize, start: usize, len: usize, n_out: usize) -> Vec<Tap> {
    (0..n_out)
        .map(|i| {
            let s = if n_out == 1 {
                start as f64 + (len - 1) as f64 / 2.0
            } else {
                start as f64 + i as f64 * (len - 1) as f64 / (n_out - 1) as f64
            };
            let pos = if n_scene == 1 || n_map == n_scene {
                s
            } else {
                s * (n_map - 1) as f64 / (n_scene - 1) as f64
            };
            let lo = (pos.floor() as usize).min(n_map - 1);
            let hi = (lo + 1).min(n_map - 1);
            Tap {
                lo,
                hi,
                t: (pos - lo as f64).max(0.0),
            }
        })
        .collect()
}

/// Region-of-interest resampling: `src` (`h x w`) is treated as a
/// corner-aligned image of a `scene_h x scene_w` frame, and `rect` of that
/// frame is sampled bilinearly onto an `out_h x out_w` grid. When the map
/// already has scene size and the output has rect size this is an exact crop.
pub(crate) fn roi_plane(
    src: &[f64],
    (h, w): (usize, usize),
    (scene_h, scene_w): (usize, usize),
    rect: &PatchRect,
    (out_h, out_w): (usize, usize),
) -> Vec<f64> {
    let ty = roi_taps(h, scene_h, rect.y0, rect.h, out_h);
    let tx = roi_taps(w, scene_w, rect.x0, rect.w, out_w);
    let mut out = vec![0.0; out_h * out_w];
    for (y, a) in ty.iter().enumerate() {
        let (r0, r1) = (&src[a.lo * w..(a.lo + 1) * w], &src[a.hi * w..(a.hi + 1) * w]);
        for (x, b) in tx.iter().enumerate() {
            let top = lerp(r0[b.lo], r0[b.hi], b.t);
            let bot = lerp(r1[b.lo], r1[b.hi], b.t);
            out[y * out_w + x] = lerp(top, bot, a.t);
        }
    }
    out
}

/// Adjoint (transpose) of [`resize_plane`]: scatters output gradients back to
/// the input grid.
pub(crate) fn resize_plane_adjoint(
    grad: &[f64],
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f64> {
    if (h, w) == (out_h, out_w) {
        return grad.to_vec();
    }
    let ty = linear_taps(h, out_h);
    let tx = linear_taps(w, out_w);
    let mut tmp = vec![0.0; h * out_w];
    for (y, tap) in ty.iter().enumerate() {
        for x in 0..out_w {
            let g = grad[y * out_w + x];
            tmp[tap.lo * out_w + x] += (1.0 - tap.t) * g;
            tmp[tap.hi * out_w + x] += tap.t * g;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for (x, tap) in tx.iter().enumerate() {
            let g = tmp[y * out_w + x];
            out[y * w + tap.lo] += (1.0 - tap.t) * g;
            out[y * w + tap.hi] += tap.t * g;
        }
    }
    out
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + (b - a) * t
    }
}

/// Counter-based deterministic generator. A `(seed, stream)` pair fully
/// determines the sequence on every platform, so scene generation, jitter and
/// weight init draw from independent streams.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        (self.uniform() * n as f64) as usize % n
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn between(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal draw (Box-Muller).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Mixes several integers into one well-spread seed (splitmix64 finalizer).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h ^= h >> 31;
    }
    h
}
