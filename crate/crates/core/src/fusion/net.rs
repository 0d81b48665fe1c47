//! The residual prediction network: a five-stage strided encoder, per-level
//! frequency fusion of coarse and fine backbone features, and a skip-connected
//! decoder ending in a zero-initialised 1x1 head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::params::{Gradients, ParamId, ParameterStore};
use crate::fusion::tape::{Tape, Var};
use crate::raster::{ensure_same_dims, DepthMap, FeatureMap, FeaturePyramid, RgbImage, PYRAMID_LEVELS};

const BANDS: [&str; 4] = ["ll", "lh", "hl", "hh"];
const INPUT_CHANNELS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub base_channels: usize,
    /// Channels of each backbone feature level.
    pub feature_channels: usize,
    pub patch_res: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            feature_channels: 16,
            patch_res: 128,
        }
    }
}

impl NetConfig {
    /// Side of the encoder output at level `j`.
    pub fn level_res(&self, j: usize) -> usize {
        self.patch_res >> (j + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.feature_channels == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        // the deepest level is wavelet-transformed, so it must stay even
        let unit = 1 << (PYRAMID_LEVELS + 1);
        if self.patch_res == 0 || self.patch_res % unit != 0 {
            return Err(Error::Config(format!(
                "patch_res {} must be a positive multiple of {unit}",
                self.patch_res
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Level {
    enc: Conv,
    ffm: [Conv; 4],
    reduce: [Conv; 2],
    dec: Conv,
}

/// Parameter layout of the network; values live in a [`ParameterStore`].
#[derive(Debug, Clone)]
pub struct ResidualNet {
    cfg: NetConfig,
    levels: Vec<Level>,
    head: Conv,
}

/// Everything the network consumes for one patch, all at `patch_res`.
#[derive(Debug, Clone, Copy)]
pub struct PatchInputs<'a> {
    pub rgb: &'a RgbImage,
    pub coarse: &'a DepthMap,
    pub fine: &'a DepthMap,
    pub f_coarse: &'a FeaturePyramid,
    pub f_fine: &'a FeaturePyramid,
}

/// A recorded forward evaluation, kept for the backward sweep.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    tape: Tape,
    output: Var,
    enc: Vec<Var>,
}

impl ForwardPass {
    pub fn residual(&self) -> DepthMap {
        let r = self.tape.value(self.output);
        DepthMap::from_raw(r.height, r.width, r.data.clone())
    }

    pub fn encoder_features(&self) -> FeaturePyramid {
        FeaturePyramid::new(self.enc.iter().map(|&v| self.tape.value(v).clone()).collect())
            .expect("encoder levels halve by construction")
    }
}

fn register(
    store: &mut ParameterStore,
    name: &str,
    cout: usize,
    cin: usize,
    k: usize,
    zero: bool,
) -> Result<Conv> {
    let shape = [cout, cin, k, k];
    let w = if zero {
        store.add_zeros(&format!("{name}.weight"), &shape)?
    } else {
        store.add_kaiming(&format!("{name}.weight"), &shape, cin * k * k)?
    };
    let b = store.add_zeros(&format!("{name}.bias"), &[cout])?;
    Ok(Conv { w, b })
}

fn lookup(store: &ParameterStore, name: &str, shape: &[usize]) -> Result<ParamId> {
    let id = store
        .id(name)
        .ok_or_else(|| Error::Checkpoint(format!("parameter `{name}` missing")))?;
    if store.get(id).shape != shape {
        return Err(Error::Checkpoint(format!(
            "parameter `{name}` has shape {:?}, expected {shape:?}",
            store.get(id).shape
        )));
    }
    Ok(id)
}

impl ResidualNet {
    /// Fresh parameters drawn from `seed`; the head starts at zero, so the
    /// network initially predicts a zero residual.
    pub fn init(cfg: &NetConfig, seed: u64) -> Result<(Self, ParameterStore)> {
        let mut store = ParameterStore::new(seed);
        let net = Self::build(cfg, |name, cout, cin, k, zero| {
            register(&mut store, name, cout, cin, k, zero)
        })?;
        Ok((net, store))
    }

    /// Binds the layout to an existing store, e.g. one loaded from disk.
    pub fn bind(cfg: &NetConfig, store: &ParameterStore) -> Result<Self> {
        let net = Self::build(cfg, |name, cout, cin, k, _| {
            Ok(Conv {
                w: lookup(store, &format!("{name}.weight"), &[cout, cin, k, k])?,
                b: lookup(store, &format!("{name}.bias"), &[cout])?,
            })
        })?;
        let expected = 2 * (net.levels.len() * 8 + 1);
        if store.len() != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, network expects {expected}",
                store.len()
            )));
        }
        Ok(net)
    }

    fn build(
        cfg: &NetConfig,
        mut conv: impl FnMut(&str, usize, usize, usize, bool) -> Result<Conv>,
    ) -> Result<Self> {
        cfg.validate()?;
        let (c, cf) = (cfg.base_channels, cfg.feature_channels);
        let mut levels = Vec::with_capacity(PYRAMID_LEVELS);
        for j in 0..PYRAMID_LEVELS {
            let enc = conv(&format!("enc{j}"), c, if j == 0 { INPUT_CHANNELS } else { c }, 3, false)?;
            let mut ffm = Vec::with_capacity(4);
            for band in BANDS {
                ffm.push(conv(&format!("ffm{j}.{band}"), c, 2 * cf, 3, false)?);
            }
            let reduce = [
                conv(&format!("reduce{j}.0"), c, 2 * c + cf, 3, false)?,
                conv(&format!("reduce{j}.1"), c, c, 3, false)?,
            ];
            let dec_in = if j == PYRAMID_LEVELS - 1 { c } else { 2 * c };
            let dec = conv(&format!("dec{j}"), c, dec_in, 3, false)?;
            levels.push(Level {
                enc,
                ffm: ffm.try_into().expect("four bands"),
                reduce,
                dec,
            });
        }
        let head = conv("head", 1, c, 1, true)?;
        Ok(Self {
            cfg: cfg.clone(),
            levels,
            head,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    fn check_inputs(&self, x: &PatchInputs<'_>) -> Result<()> {
        let p = (self.cfg.patch_res, self.cfg.patch_res);
        ensure_same_dims(x.rgb.dims(), p, "patch image")?;
        ensure_same_dims(x.coarse.dims(), p, "coarse ROI")?;
        ensure_same_dims(x.fine.dims(), p, "fine depth")?;
        for (what, pyr) in [("coarse features", x.f_coarse), ("fine features", x.f_fine)] {
            for j in 0..PYRAMID_LEVELS {
                let s = self.cfg.level_res(j);
                let want = (self.cfg.feature_channels, s, s);
                if pyr.level(j).shape() != want {
                    return Err(Error::Shape(format!(
                        "{what} level {j} is {:?}, expected {want:?}",
                        pyr.level(j).shape()
                    )));
                }
            }
        }
        Ok(())
    }

    fn ffm(&self, t: &mut Tape, params: &ParameterStore, j: usize, fc: Var, ff: Var) -> Result<Var> {
        let cf = self.cfg.feature_channels;
        let dc = t.dwt(fc)?;
        let df = t.dwt(ff)?;
        let mut fused = Vec::with_capacity(4);
        for (b, conv) in self.levels[j].ffm.iter().enumerate() {
            let xc = t.slice(dc, b * cf, cf);
            let xf = t.slice(df, b * cf, cf);
            let cat = t.concat(&[xc, xf])?;
            let y = t.conv(params, cat, conv.w, conv.b, 1)?;
            fused.push(t.leaky(y));
        }
        let stacked = t.concat(&fused)?;
        t.idwt(stacked)
    }

    /// Frequency fusion at level `j` on its own: wavelet-split both inputs,
    /// fuse each band with its own convolution, and synthesise back.
    pub fn ffm_forward(
        &self,
        params: &ParameterStore,
        j: usize,
        f_coarse: &FeatureMap,
        f_fine: &FeatureMap,
    ) -> Result<FeatureMap> {
        if f_coarse.shape() != f_fine.shape() || f_coarse.channels != self.cfg.feature_channels {
            return Err(Error::Shape(format!(
                "fusion inputs {:?} and {:?} with {} feature channels",
                f_coarse.shape(),
                f_fine.shape(),
                self.cfg.feature_channels
            )));
        }
        let mut t = Tape::new();
        let fc = t.input(f_coarse.clone());
        let ff = t.input(f_fine.clone());
        let out = self.ffm(&mut t, params, j, fc, ff)?;
        Ok(t.value(out).clone())
    }

    pub fn forward(&self, params: &ParameterStore, x: &PatchInputs<'_>) -> Result<ForwardPass> {
        self.check_inputs(x)?;
        let p = self.cfg.patch_res;
        let mut data = Vec::with_capacity(INPUT_CHANNELS * p * p);
        data.extend_from_slice(x.rgb.values());
        data.extend_from_slice(x.coarse.values());
        data.extend_from_slice(x.fine.values());
        let mut t = Tape::new();
        let mut h = t.input(FeatureMap {
            channels: INPUT_CHANNELS,
            height: p,
            width: p,
            data,
        });

        let mut enc = Vec::with_capacity(PYRAMID_LEVELS);
        for level in &self.levels {
            let y = t.conv(params, h, level.enc.w, level.enc.b, 2)?;
            h = t.leaky(y);
            enc.push(h);
        }

        let mut reduced = Vec::with_capacity(PYRAMID_LEVELS);
        for (j, level) in self.levels.iter().enumerate() {
            let fc = t.input(x.f_coarse.level(j).clone());
            let ff = t.input(x.f_fine.level(j).clone());
            let fuse = self.ffm(&mut t, params, j, fc, ff)?;
            let mut r = t.concat(&[fuse, fc, enc[j]])?;
            for conv in &level.reduce {
                let y = t.conv(params, r, conv.w, conv.b, 1)?;
                r = t.leaky(y);
            }
            reduced.push(r);
        }

        let mut h = reduced[PYRAMID_LEVELS - 1];
        for j in (0..PYRAMID_LEVELS).rev() {
            if j + 1 < PYRAMID_LEVELS {
                h = t.concat(&[h, reduced[j]])?;
            }
            let up = t.upsample2(h);
            let dec = self.levels[j].dec;
            let y = t.conv(params, up, dec.w, dec.b, 1)?;
            h = t.leaky(y);
        }
        let output = t.conv(params, h, self.head.w, self.head.b, 1)?;
        Ok(ForwardPass { tape: t, output, enc })
    }

    /// Adds the parameter gradient of a scalar objective whose gradient with
    /// respect to the residual is `grad_r`.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        grad_r: &DepthMap,
        params: &ParameterStore,
        grads: &mut Gradients,
    ) -> Result<()> {
        let r = pass.tape.value(pass.output);
        ensure_same_dims(grad_r.dims(), (r.height, r.width), "residual gradient")?;
        let seed = FeatureMap {
            channels: 1,
            height: r.height,
            width: r.width,
            data: grad_r.values().to_vec(),
        };
        pass.tape.backward(params, pass.output, seed, grads);
        Ok(())
    }
}

/// One forward evaluation returning the residual and the encoder pyramid.
pub fn residual_forward(
    net: &ResidualNet,
    params: &ParameterStore,
    inputs: &PatchInputs<'_>,
) -> Result<(DepthMap, FeaturePyramid)> {
    let pass = net.forward(params, inputs)?;
    Ok((pass.residual(), pass.encoder_features()))
}

/// Applies a predicted residual to the coarse ROI.
pub fn refine_patch(coarse_roi: &DepthMap, residual: &DepthMap) -> Result<DepthMap> {
    coarse_roi.zip_with(residual, |c, r| c + r)
}
