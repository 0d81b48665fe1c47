//! A small reverse-mode tape over `channels x height x width` tensors,
//! covering exactly the layers the residual network uses.

use crate::error::{Error, Result};
use crate::fusion::params::{Gradients, ParamId, ParameterStore};
use crate::fusion::wavelet::{haar_dwt, haar_idwt, WaveletBands};
use crate::raster::FeatureMap;

pub const LEAKY_SLOPE: f64 = 0.1;

/// Node handle on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Conv {
        x: Var,
        weight: ParamId,
        bias: ParamId,
        k: usize,
        stride: usize,
    },
    Leaky(Var),
    Concat(Vec<Var>),
    Upsample2(Var),
    Dwt(Var),
    Idwt(Var),
    Slice { x: Var, start: usize, len: usize },
}

#[derive(Debug, Clone)]
struct Node {
    value: FeatureMap,
    op: Op,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: FeatureMap, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &FeatureMap {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, value: FeatureMap) -> Var {
        self.push(value, Op::Input)
    }

    /// `k x k` convolution with zero padding `k / 2`; `weight` has shape
    /// `[out, in, k, k]`.
    pub fn conv(
        &mut self,
        params: &ParameterStore,
        x: Var,
        weight: ParamId,
        bias: ParamId,
        stride: usize,
    ) -> Result<Var> {
        let w = params.get(weight);
        let (cin, h, wd) = self.value(x).shape();
        if w.shape.len() != 4 || w.shape[1] != cin || w.shape[2] != w.shape[3] {
            return Err(Error::Shape(format!(
                "conv `{}` of shape {:?} applied to {cin} channels",
                w.name, w.shape
            )));
        }
        let k = w.shape[2];
        if h == 0 || wd == 0 {
            return Err(Error::Shape(format!("conv `{}` on an empty raster", w.name)));
        }
        let out = conv_forward(self.value(x), &w.values, &params.get(bias).values, w.shape[0], k, stride);
        Ok(self.push(
            out,
            Op::Conv {
                x,
                weight,
                bias,
                k,
                stride,
            },
        ))
    }

    pub fn leaky(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = FeatureMap {
            data: v.data.iter().map(|&a| if a > 0.0 { a } else { LEAKY_SLOPE * a }).collect(),
            ..v.clone()
        };
        self.push(out, Op::Leaky(x))
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let (_, h, w) = self.value(xs[0]).shape();
        let mut data = Vec::new();
        let mut channels = 0;
        for &x in xs {
            let v = self.value(x);
            if (v.height, v.width) != (h, w) {
                return Err(Error::Shape(format!(
                    "concat of {}x{} with {h}x{w}",
                    v.height, v.width
                )));
            }
            channels += v.channels;
            data.extend_from_slice(&v.data);
        }
        Ok(self.push(
            FeatureMap {
                channels,
                height: h,
                width: w,
                data,
            },
            Op::Concat(xs.to_vec()),
        ))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let (c, h, w) = v.shape();
        let (oh, ow) = (2 * h, 2 * w);
        let mut data = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                let src = &v.data[(ch * h + y / 2) * w..];
                let dst = &mut data[(ch * oh + y) * ow..(ch * oh + y + 1) * ow];
                for (xo, d) in dst.iter_mut().enumerate() {
                    *d = src[xo / 2];
                }
            }
        }
        self.push(
            FeatureMap {
                channels: c,
                height: oh,
                width: ow,
                data,
            },
            Op::Upsample2(x),
        )
    }

    /// Haar analysis; output channels are stacked `[LL, LH, HL, HH]`.
    pub fn dwt(&mut self, x: Var) -> Result<Var> {
        let out = haar_dwt(self.value(x))?.stack();
        Ok(self.push(out, Op::Dwt(x)))
    }

    /// Haar synthesis of stacked bands.
    pub fn idwt(&mut self, x: Var) -> Result<Var> {
        let out = haar_idwt(&WaveletBands::unstack(self.value(x))?)?;
        Ok(self.push(out, Op::Idwt(x)))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x);
        let n = v.height * v.width;
        let out = FeatureMap {
            channels: len,
            height: v.height,
            width: v.width,
            data: v.data[start * n..(start + len) * n].to_vec(),
        };
        self.push(out, Op::Slice { x, start, len })
    }

    /// Reverse sweep from `output` seeded with `seed`. Parameter gradients are
    /// added into `grads`; the returned vector holds the gradient reaching
    /// each input node (`None` for intermediate nodes or where nothing flowed).
    pub fn backward(
        &self,
        params: &ParameterStore,
        output: Var,
        seed: FeatureMap,
        grads: &mut Gradients,
    ) -> Vec<Option<FeatureMap>> {
        let mut adj: Vec<Option<FeatureMap>> = vec![None; self.nodes.len()];
        adj[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            if matches!(self.nodes[i].op, Op::Input) {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => unreachable!(),
                Op::Conv {
                    x,
                    weight,
                    bias,
                    k,
                    stride,
                } => {
                    let w = params.get(*weight);
                    let input = self.value(*x);
                    let gin = conv_backward(
                        input,
                        &w.values,
                        &g,
                        *k,
                        *stride,
                        grads.get_mut(*weight),
                    );
                    let gb = grads.get_mut(*bias);
                    let plane = g.height * g.width;
                    for (c, acc) in gb.iter_mut().enumerate() {
                        *acc += g.data[c * plane..(c + 1) * plane].iter().sum::<f64>();
                    }
                    add_adj(&mut adj, *x, gin);
                }
                Op::Leaky(x) => {
                    let input = self.value(*x);
                    let data = g
                        .data
                        .iter()
                        .zip(&input.data)
                        .map(|(&gv, &a)| if a > 0.0 { gv } else { LEAKY_SLOPE * gv })
                        .collect();
                    add_adj(&mut adj, *x, FeatureMap { data, ..g });
                }
                Op::Concat(xs) => {
                    let mut offset = 0;
                    let plane = g.height * g.width;
                    for &x in xs {
                        let c = self.value(x).channels;
                        let part = FeatureMap {
                            channels: c,
                            height: g.height,
                            width: g.width,
                            data: g.data[offset * plane..(offset + c) * plane].to_vec(),
                        };
                        offset += c;
                        add_adj(&mut adj, x, part);
                    }
                }
                Op::Upsample2(x) => {
                    let (c, h, w) = self.value(*x).shape();
                    let ow = 2 * w;
                    let mut data = vec![0.0; c * h * w];
                    for ch in 0..c {
                        for y in 0..2 * h {
                            let src = &g.data[(ch * 2 * h + y) * ow..(ch * 2 * h + y + 1) * ow];
                            let dst = &mut data[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
                            for (xo, &v) in src.iter().enumerate() {
                                dst[xo / 2] += v;
                            }
                        }
                    }
                    add_adj(
                        &mut adj,
                        *x,
                        FeatureMap {
                            channels: c,
                            height: h,
                            width: w,
                            data,
                        },
                    );
                }
                Op::Dwt(x) => {
                    // orthogonal: adjoint of analysis is synthesis
                    let bands = WaveletBands::unstack(&g).expect("stacked bands");
                    add_adj(&mut adj, *x, haar_idwt(&bands).expect("consistent bands"));
                }
                Op::Idwt(x) => {
                    add_adj(&mut adj, *x, haar_dwt(&g).expect("even dims").stack());
                }
                Op::Slice { x, start, len } => {
                    let full = self.value(*x);
                    let plane = full.height * full.width;
                    let mut data = vec![0.0; full.data.len()];
                    data[start * plane..(start + len) * plane].copy_from_slice(&g.data);
                    add_adj(
                        &mut adj,
                        *x,
                        FeatureMap {
                            data,
                            ..full.clone()
                        },
                    );
                }
            }
        }
        adj
    }
}

fn add_adj(adj: &mut [Option<FeatureMap>], x: Var, g: FeatureMap) {
    match &mut adj[x.0] {
        Some(acc) => acc.data.iter_mut().zip(&g.data).for_each(|(a, b)| *a += b),
        slot => *slot = Some(g),
    }
}

/// Output index range `[lo, hi)` whose input tap `o * stride + kk - pad`
/// stays inside `[0, n)`.
fn valid_range(n: usize, n_out: usize, kk: usize, pad: usize, stride: usize) -> (usize, usize) {
    let lo = if kk < pad { (pad - kk).div_ceil(stride) } else { 0 };
    if n + pad <= kk {
        return (0, 0);
    }
    let hi = ((n - 1 + pad - kk) / stride + 1).min(n_out);
    (lo.min(hi), hi)
}

fn out_size(n: usize, k: usize, stride: usize) -> usize {
    (n + 2 * (k / 2) - k) / stride + 1
}

pub(crate) fn conv_forward(
    x: &FeatureMap,
    weight: &[f32],
    bias: &[f32],
    cout: usize,
    k: usize,
    stride: usize,
) -> FeatureMap {
    let (cin, h, w) = x.shape();
    let pad = k / 2;
    let (oh, ow) = (out_size(h, k, stride), out_size(w, k, stride));
    let mut out = vec![0.0; cout * oh * ow];
    for oc in 0..cout {
        let dst = &mut out[oc * oh * ow..(oc + 1) * oh * ow];
        dst.iter_mut().for_each(|v| *v = bias[oc] as f64);
        for ic in 0..cin {
            let src = x.plane(ic);
            for ky in 0..k {
                let (y_lo, y_hi) = valid_range(h, oh, ky, pad, stride);
                for kx in 0..k {
                    let wv = weight[((oc * cin + ic) * k + ky) * k + kx] as f64;
                    if wv == 0.0 {
                        continue;
                    }
                    let (x_lo, x_hi) = valid_range(w, ow, kx, pad, stride);
                    for oy in y_lo..y_hi {
                        let iy = oy * stride + ky - pad;
                        let srow = &src[iy * w..(iy + 1) * w];
                        let drow = &mut dst[oy * ow..(oy + 1) * ow];
                        if stride == 1 {
                            let off = x_lo + kx - pad;
                            for (d, s) in drow[x_lo..x_hi].iter_mut().zip(&srow[off..]) {
                                *d += wv * s;
                            }
                        } else {
                            for ox in x_lo..x_hi {
                                drow[ox] += wv * srow[ox * stride + kx - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    FeatureMap {
        channels: cout,
        height: oh,
        width: ow,
        data: out,
    }
}

/// Returns the input gradient and accumulates the weight gradient.
fn conv_backward(
    x: &FeatureMap,
    weight: &[f32],
    g: &FeatureMap,
    k: usize,
    stride: usize,
    gw: &mut [f64],
) -> FeatureMap {
    let (cin, h, w) = x.shape();
    let (cout, oh, ow) = g.shape();
    let pad = k / 2;
    let mut gin = vec![0.0; cin * h * w];
    for oc in 0..cout {
        let gplane = &g.data[oc * oh * ow..(oc + 1) * oh * ow];
        for ic in 0..cin {
            let src = x.plane(ic);
            let gsrc = &mut gin[ic * h * w..(ic + 1) * h * w];
            for ky in 0..k {
                let (y_lo, y_hi) = valid_range(h, oh, ky, pad, stride);
                for kx in 0..k {
                    let widx = ((oc * cin + ic) * k + ky) * k + kx;
                    let wv = weight[widx] as f64;
                    let (x_lo, x_hi) = valid_range(w, ow, kx, pad, stride);
                    let mut acc = 0.0;
                    for oy in y_lo..y_hi {
                        let iy = oy * stride + ky - pad;
                        let grow = &gplane[oy * ow..(oy + 1) * ow];
                        if stride == 1 {
                            let off = x_lo + kx - pad;
                            let srow = &src[iy * w + off..iy * w + off + (x_hi - x_lo)];
                            for (gv, s) in grow[x_lo..x_hi].iter().zip(srow) {
                                acc += gv * s;
                            }
                            let drow = &mut gsrc[iy * w + off..iy * w + off + (x_hi - x_lo)];
                            for (d, gv) in drow.iter_mut().zip(&grow[x_lo..x_hi]) {
                                *d += wv * gv;
                            }
                        } else {
                            for ox in x_lo..x_hi {
                                let ix = iy * w + ox * stride + kx - pad;
                                acc += grow[ox] * src[ix];
                                gsrc[ix] += wv * grow[ox];
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    FeatureMap {
        channels: cin,
        height: h,
        width: w,
        data: gin,
    }
}
