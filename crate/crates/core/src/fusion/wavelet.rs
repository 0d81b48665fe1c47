//! Orthonormal 2-D Haar analysis and synthesis on feature rasters.
//!
//! For each 2x2 block `[[a, b], [c, d]]`:
//!
//! ```text
//! LL = (a + b + c + d) / 2    LH = (a + b - c - d) / 2
//! HL = (a - b + c - d) / 2    HH = (a - b - c + d) / 2
//! ```
//!
//! The transform is orthogonal, so the inverse is also the adjoint. Backward
//! passes rely on that.

use crate::error::{Error, Result};
use crate::raster::FeatureMap;

/// The four sub-bands of one analysis step, each `channels x H/2 x W/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBands {
    pub ll: FeatureMap,
    pub lh: FeatureMap,
    pub hl: FeatureMap,
    pub hh: FeatureMap,
}

impl WaveletBands {
    pub fn bands(&self) -> [&FeatureMap; 4] {
        [&self.ll, &self.lh, &self.hl, &self.hh]
    }

    pub fn energy(&self) -> f64 {
        self.bands().iter().map(|b| b.energy()).sum()
    }

    /// Stacks the bands channel-wise as `[LL, LH, HL, HH]`.
    pub fn stack(&self) -> FeatureMap {
        let (c, h, w) = self.ll.shape();
        let mut data = Vec::with_capacity(4 * c * h * w);
        for b in self.bands() {
            data.extend_from_slice(&b.data);
        }
        FeatureMap {
            channels: 4 * c,
            height: h,
            width: w,
            data,
        }
    }

    /// Inverse of [`WaveletBands::stack`].
    pub fn unstack(stacked: &FeatureMap) -> Result<Self> {
        if stacked.channels % 4 != 0 {
            return Err(Error::Shape(format!(
                "stacked bands need a multiple of 4 channels, got {}",
                stacked.channels
            )));
        }
        let c = stacked.channels / 4;
        let n = c * stacked.height * stacked.width;
        let band = |k: usize| FeatureMap {
            channels: c,
            height: stacked.height,
            width: stacked.width,
            data: stacked.data[k * n..(k + 1) * n].to_vec(),
        };
        Ok(Self {
            ll: band(0),
            lh: band(1),
            hl: band(2),
            hh: band(3),
        })
    }
}

pub fn haar_dwt(f: &FeatureMap) -> Result<WaveletBands> {
    let (c, h, w) = f.shape();
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::Shape(format!("haar_dwt needs even dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut bands: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; c * oh * ow]);
    for ch in 0..c {
        let src = f.plane(ch);
        for y in 0..oh {
            let top = &src[2 * y * w..];
            let bot = &src[(2 * y + 1) * w..];
            for x in 0..ow {
                let (a, b) = (top[2 * x], top[2 * x + 1]);
                let (cc, d) = (bot[2 * x], bot[2 * x + 1]);
                let i = (ch * oh + y) * ow + x;
                bands[0][i] = 0.5 * (a + b + cc + d);
                bands[1][i] = 0.5 * (a + b - cc - d);
                bands[2][i] = 0.5 * (a - b + cc - d);
                bands[3][i] = 0.5 * (a - b - cc + d);
            }
        }
    }
    let [ll, lh, hl, hh] = bands.map(|data| FeatureMap {
        channels: c,
        height: oh,
        width: ow,
        data,
    });
    Ok(WaveletBands { ll, lh, hl, hh })
}

pub fn haar_idwt(bands: &WaveletBands) -> Result<FeatureMap> {
    let shape = bands.ll.shape();
    if bands.bands().iter().any(|b| b.shape() != shape) {
        return Err(Error::Shape("wavelet bands differ in shape".into()));
    }
    let (c, oh, ow) = shape;
    let (h, w) = (2 * oh, 2 * ow);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                let i = (ch * oh + y) * ow + x;
                let (ll, lh, hl, hh) = (
                    bands.ll.data[i],
                    bands.lh.data[i],
                    bands.hl.data[i],
                    bands.hh.data[i],
                );
                let base = ch * h * w;
                out[base + 2 * y * w + 2 * x] = 0.5 * (ll + lh + hl + hh);
                out[base + 2 * y * w + 2 * x + 1] = 0.5 * (ll + lh - hl - hh);
                out[base + (2 * y + 1) * w + 2 * x] = 0.5 * (ll - lh + hl - hh);
                out[base + (2 * y + 1) * w + 2 * x + 1] = 0.5 * (ll - lh - hl + hh);
            }
        }
    }
    Ok(FeatureMap {
        channels: c,
        height: h,
        width: w,
        data: out,
    })
}
