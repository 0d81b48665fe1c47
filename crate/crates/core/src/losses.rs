//! Training objectives with analytic gradients: the pairwise overlap
//! consistency loss, the composite L1 + L2 + multi-scale gradient loss, its
//! masked form over the reliable region, and the final weighted sum.

use crate::error::{Error, Result};
use crate::raster::{ensure_same_dims, BinaryMask, DepthMap};
use crate::tiling::{OverlapGroup, OverlapRegion};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the consistency term in the final objective.
    pub lambda_con: f64,
    pub w_l1: f64,
    pub w_l2: f64,
    pub w_msg: f64,
    /// Number of scales in the gradient-matching term.
    pub msg_scales: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_con: 4.0,
            w_l1: 1.0,
            w_l2: 1.0,
            w_msg: 5.0,
            msg_scales: 4,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda_con, self.w_l1, self.w_l2, self.w_msg];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if self.msg_scales == 0 {
            return Err(Error::Config("loss.msg_scales must be at least 1".into()));
        }
        Ok(())
    }
}

/// One named component of a loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTerm {
    pub name: String,
    pub weight: f64,
    pub value: f64,
}

/// Scalar loss plus its weighted breakdown.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossValue {
    pub value: f64,
    pub terms: Vec<LossTerm>,
}

impl LossValue {
    fn from_terms(terms: Vec<LossTerm>) -> Self {
        let value = terms.iter().map(|t| t.weight * t.value).sum();
        Self { value, terms }
    }

    /// Unweighted value of the named term, if present.
    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }
}

/// Pairwise squared disagreement over every overlap, each pair averaged over
/// its own region. Returns the loss and one gradient map per group member.
pub fn consistency_loss(
    group: &OverlapGroup,
    preds: &[DepthMap],
    overlaps: &[OverlapRegion],
) -> Result<(LossValue, Vec<DepthMap>)> {
    if preds.len() != 4 {
        return Err(Error::Arity {
            expected: 4,
            got: preds.len(),
        });
    }
    for (pred, rect) in preds.iter().zip(&group.patches) {
        ensure_same_dims(pred.dims(), (rect.h, rect.w), "consistency_loss prediction")?;
    }
    let mut grads: Vec<DepthMap> = preds
        .iter()
        .map(|p| DepthMap::filled(p.height(), p.width(), 0.0))
        .collect();
    let mut terms = Vec::with_capacity(overlaps.len());
    for ov in overlaps {
        let (a, b) = ov.pair;
        let ra = ov.local_rect(group, a);
        let rb = ov.local_rect(group, b);
        let n = ov.rect.area() as f64;
        let mut sum = 0.0;
        for y in 0..ov.rect.h {
            for x in 0..ov.rect.w {
                let (ya, xa, yb, xb) = (ra.y0 + y, ra.x0 + x, rb.y0 + y, rb.x0 + x);
                let d = preds[a.index()].get(ya, xa) - preds[b.index()].get(yb, xb);
                sum += d * d;
                let g = 2.0 * d / n;
                let ga = &mut grads[a.index()];
                ga.set(ya, xa, ga.get(ya, xa) + g);
                let gb = &mut grads[b.index()];
                gb.set(yb, xb, gb.get(yb, xb) - g);
            }
        }
        terms.push(LossTerm {
            name: format!("con_{a:?}{b:?}"),
            weight: 1.0,
            value: sum / n,
        });
    }
    Ok((LossValue::from_terms(terms), grads))
}

/// Subgradient of `|d|` that vanishes at zero.
#[inline]
fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// 2x2 average pooling (floor dims).
fn pool_avg(src: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let i = 2 * y * w + 2 * x;
            out[y * ow + x] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
        }
    }
    (out, oh, ow)
}

fn pool_avg_adjoint(grad: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; h * w];
    for y in 0..oh {
        for x in 0..ow {
            let g = 0.25 * grad[y * ow + x];
            let i = 2 * y * w + 2 * x;
            out[i] += g;
            out[i + 1] += g;
            out[i + w] += g;
            out[i + w + 1] += g;
        }
    }
    out
}

/// 2x2 logical-AND pooling of a validity mask.
fn pool_and(src: &[bool], h: usize, w: usize) -> Vec<bool> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![false; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let i = 2 * y * w + 2 * x;
            out[y * ow + x] = src[i] && src[i + 1] && src[i + w] && src[i + w + 1];
        }
    }
    out
}

/// Forward-difference gradient-matching term on one scale. Returns the term
/// and its gradient with respect to the residual.
fn gradient_term(r: &[f64], valid: &[bool], h: usize, w: usize) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; h * w];
    let n = valid.iter().filter(|&&v| v).count();
    if n == 0 {
        return (0.0, grad);
    }
    let inv = 1.0 / n as f64;
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !valid[i] {
                continue;
            }
            if x + 1 < w && valid[i + 1] {
                let d = r[i + 1] - r[i];
                sum += d.abs();
                let s = sign(d) * inv;
                grad[i + 1] += s;
                grad[i] -= s;
            }
            if y + 1 < h && valid[i + w] {
                let d = r[i + w] - r[i];
                sum += d.abs();
                let s = sign(d) * inv;
                grad[i + w] += s;
                grad[i] -= s;
            }
        }
    }
    (sum * inv, grad)
}

/// `w_l1 * L1 + w_l2 * L2 + w_msg * Lmsg` over the pixels selected by `mask`,
/// with its gradient with respect to `pred`.
///
/// The gradient-matching term sums, over `msg_scales` scales, the masked mean
/// of `|dx r| + |dy r|` on the residual `r = pred - gt` average-pooled by 2 per
/// scale. The mask is pooled with a 2x2 AND, and a difference counts only when
/// both of its pixels are valid. Terms with no valid pixels contribute zero.
pub fn composite_loss(
    pred: &DepthMap,
    gt: &DepthMap,
    mask: &BinaryMask,
    cfg: &LossConfig,
) -> Result<(LossValue, DepthMap)> {
    ensure_same_dims(pred.dims(), gt.dims(), "composite_loss gt")?;
    ensure_same_dims(pred.dims(), mask.dims(), "composite_loss mask")?;
    let (h, w) = pred.dims();
    let resid: Vec<f64> = pred.values().iter().zip(gt.values()).map(|(p, g)| p - g).collect();
    let valid = mask.values();
    let n = mask.count();

    let mut grad = vec![0.0; h * w];
    let (mut l1, mut l2) = (0.0, 0.0);
    if n > 0 {
        let inv = 1.0 / n as f64;
        for i in 0..h * w {
            if valid[i] {
                let d = resid[i];
                l1 += d.abs();
                l2 += d * d;
                grad[i] += (cfg.w_l1 * sign(d) + cfg.w_l2 * 2.0 * d) * inv;
            }
        }
        l1 *= inv;
        l2 *= inv;
    }

    // gradient matching across scales
    let mut msg = 0.0;
    let mut scale_grads: Vec<(Vec<f64>, usize, usize)> = Vec::new();
    let (mut r, mut m, mut sh, mut sw) = (resid, valid.to_vec(), h, w);
    for k in 0..cfg.msg_scales {
        if k > 0 {
            if sh < 2 || sw < 2 {
                break;
            }
            let next_m = pool_and(&m, sh, sw);
            let (next_r, nh, nw) = pool_avg(&r, sh, sw);
            r = next_r;
            m = next_m;
            sh = nh;
            sw = nw;
        }
        let (term, g) = gradient_term(&r, &m, sh, sw);
        msg += term;
        scale_grads.push((g, sh, sw));
    }
    // back through the pooling chain, coarsest scale first
    let mut carry: Option<Vec<f64>> = None;
    for k in (0..scale_grads.len()).rev() {
        let (g, sh, sw) = &scale_grads[k];
        let mut total = g.clone();
        if let Some(c) = carry.take() {
            total.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
        }
        if k > 0 {
            let (ph, pw) = (scale_grads[k - 1].1, scale_grads[k - 1].2);
            debug_assert_eq!((ph / 2, pw / 2), (*sh, *sw));
            carry = Some(pool_avg_adjoint(&total, ph, pw));
        } else {
            grad.iter_mut().zip(&total).for_each(|(a, b)| *a += cfg.w_msg * b);
        }
    }

    let loss = LossValue::from_terms(vec![
        LossTerm {
            name: "l1".into(),
            weight: cfg.w_l1,
            value: l1,
        },
        LossTerm {
            name: "l2".into(),
            weight: cfg.w_l2,
            value: l2,
        },
        LossTerm {
            name: "msg".into(),
            weight: cfg.w_msg,
            value: msg,
        },
    ]);
    Ok((loss, DepthMap::from_raw(h, w, grad)))
}

/// Supervision restricted to the reliable mask; an empty mask yields zero.
pub fn masked_loss(
    d_merged: &DepthMap,
    d_gt: &DepthMap,
    m_bfm: &BinaryMask,
    cfg: &LossConfig,
) -> Result<(LossValue, DepthMap)> {
    composite_loss(d_merged, d_gt, m_bfm, cfg)
}

/// `masked + lambda_con * con`, keeping both breakdowns.
pub fn final_loss(masked: &LossValue, con: &LossValue, cfg: &LossConfig) -> LossValue {
    let mut terms = masked.terms.clone();
    terms.extend(con.terms.iter().map(|t| LossTerm {
        weight: t.weight * cfg.lambda_con,
        ..t.clone()
    }));
    LossValue {
        value: masked.value + cfg.lambda_con * con.value,
        terms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{PatchRect, Rng};
    use crate::tiling::{enumerate_overlaps, make_overlap_group, PatchId};
    use proptest::prelude::*;

    fn random(rng: &mut Rng, h: usize, w: usize) -> DepthMap {
        DepthMap::from_fn(h, w, |_, _| rng.range(0.0, 1.0))
    }

    fn group_6() -> OverlapGroup {
        make_overlap_group(PatchRect::new(0, 0, 10, 10), 6, 6).unwrap()
    }

    /// Direct double loop over every ordered-once pair in region coordinates.
    fn oracle_consistency(g: &OverlapGroup, preds: &[DepthMap]) -> f64 {
        let mut total = 0.0;
        for i in 0..4 {
            for j in i + 1..4 {
                let (pi, pj) = (g.patches[i], g.patches[j]);
                let (mut s, mut n) = (0.0, 0usize);
                for y in 0..g.region.h {
                    for x in 0..g.region.w {
                        if pi.contains(y, x) && pj.contains(y, x) {
                            let d = preds[i].get(y - pi.y0, x - pi.x0)
                                - preds[j].get(y - pj.y0, x - pj.x0);
                            s += d * d;
                            n += 1;
                        }
                    }
                }
                if n > 0 {
                    total += s / n as f64;
                }
            }
        }
        total
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
        num / den
    }

    #[test]
    fn consistency_examples() {
        let g = group_6();
        let ov = enumerate_overlaps(&g);
        let same = vec![DepthMap::filled(6, 6, 0.3); 4];
        assert_eq!(consistency_loss(&g, &same, &ov).unwrap().0.value, 0.0);

        // B shifted by 2 only where it overlaps A, matched elsewhere
        let mut preds = same.clone();
        let ab = ov.iter().find(|o| o.pair == (PatchId::A, PatchId::B)).unwrap();
        let local = ab.local_rect(&g, PatchId::B);
        for y in local.y0..local.bottom() {
            for x in local.x0..local.right() {
                preds[1].set(y, x, 2.3);
            }
        }
        let (loss, _) = consistency_loss(&g, &preds, &ov).unwrap();
        assert!((loss.term("con_AB").unwrap() - 4.0).abs() < 1e-12);
        assert!(consistency_loss(&g, &preds, &[]).unwrap().0.value == 0.0);
    }

    #[test]
    fn consistency_matches_double_loop() {
        let g = group_6();
        let ov = enumerate_overlaps(&g);
        let mut rng = Rng::new(11);
        for _ in 0..50 {
            let preds: Vec<_> = (0..4).map(|_| random(&mut rng, 6, 6)).collect();
            let got = consistency_loss(&g, &preds, &ov).unwrap().0.value;
            assert!((got - oracle_consistency(&g, &preds)).abs() < 1e-12);
        }
    }

    /// Independent straight-line composite loss, including its own pooling.
    fn oracle_composite(p: &DepthMap, g: &DepthMap, m: &BinaryMask, c: &LossConfig) -> f64 {
        let (h, w) = p.dims();
        let mut r = vec![vec![0.0; w]; h];
        let mut v = vec![vec![false; w]; h];
        for y in 0..h {
            for x in 0..w {
                r[y][x] = p.get(y, x) - g.get(y, x);
                v[y][x] = m.get(y, x);
            }
        }
        let n = m.count() as f64;
        let (mut l1, mut l2) = (0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                if v[y][x] {
                    l1 += r[y][x].abs() / n;
                    l2 += r[y][x] * r[y][x] / n;
                }
            }
        }
        if n == 0.0 {
            l1 = 0.0;
            l2 = 0.0;
        }
        let mut msg = 0.0;
        for k in 0..c.msg_scales {
            if k > 0 {
                if r.len() < 2 || r[0].len() < 2 {
                    break;
                }
                let (nh, nw) = (r.len() / 2, r[0].len() / 2);
                let mut nr = vec![vec![0.0; nw]; nh];
                let mut nv = vec![vec![false; nw]; nh];
                for y in 0..nh {
                    for x in 0..nw {
                        nr[y][x] = (r[2 * y][2 * x] + r[2 * y][2 * x + 1] + r[2 * y + 1][2 * x]
                            + r[2 * y + 1][2 * x + 1])
                            / 4.0;
                        nv[y][x] = v[2 * y][2 * x]
                            && v[2 * y][2 * x + 1]
                            && v[2 * y + 1][2 * x]
                            && v[2 * y + 1][2 * x + 1];
                    }
                }
                r = nr;
                v = nv;
            }
            let cnt = v.iter().flatten().filter(|&&b| b).count() as f64;
            if cnt == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for y in 0..r.len() {
                for x in 0..r[0].len() {
                    if x + 1 < r[0].len() && v[y][x] && v[y][x + 1] {
                        s += (r[y][x + 1] - r[y][x]).abs();
                    }
                    if y + 1 < r.len() && v[y][x] && v[y + 1][x] {
                        s += (r[y + 1][x] - r[y][x]).abs();
                    }
                }
            }
            msg += s / cnt;
        }
        c.w_l1 * l1 + c.w_l2 * l2 + c.w_msg * msg
    }

    #[test]
    fn composite_zero_and_constant_offset() {
        let mut rng = Rng::new(2);
        let g = random(&mut rng, 16, 16);
        let full = BinaryMask::filled(16, 16, true);
        let cfg = LossConfig::default();
        let (l, grad) = composite_loss(&g, &g, &full, &cfg).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(grad.values().iter().all(|&v| v == 0.0));

        let c = -0.7;
        let (l, _) = composite_loss(&g.map(|v| v + c), &g, &full, &cfg).unwrap();
        assert!((l.term("l1").unwrap() - 0.7).abs() < 1e-12);
        assert!((l.term("l2").unwrap() - 0.49).abs() < 1e-12);
        assert!(l.term("msg").unwrap().abs() < 1e-12);
        assert!((l.value - (0.7 + 0.49)).abs() < 1e-12);
    }

    #[test]
    fn composite_matches_straight_line_oracle() {
        let mut rng = Rng::new(19);
        let cfg = LossConfig::default();
        for i in 0..50 {
            let (h, w) = (8 + i % 9, 16 - i % 7);
            let p = random(&mut rng, h, w);
            let g = random(&mut rng, h, w);
            let m = BinaryMask::from_fn(h, w, |_, _| rng.bernoulli(0.8));
            let got = composite_loss(&p, &g, &m, &cfg).unwrap().0.value;
            assert!((got - oracle_composite(&p, &g, &m, &cfg)).abs() < 1e-8);
        }
    }

    #[test]
    fn masked_loss_cases() {
        let mut rng = Rng::new(4);
        let cfg = LossConfig::default();
        let g = random(&mut rng, 12, 12);
        let p = random(&mut rng, 12, 12);
        let full = BinaryMask::filled(12, 12, true);
        assert_eq!(
            masked_loss(&p, &g, &full, &cfg).unwrap().0,
            composite_loss(&p, &g, &full, &cfg).unwrap().0
        );
        let empty = BinaryMask::filled(12, 12, false);
        let (l, grad) = masked_loss(&p, &g, &empty, &cfg).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(grad.values().iter().all(|&v| v == 0.0));

        let left = BinaryMask::from_fn(12, 12, |_, x| x < 6);
        let off_right = DepthMap::from_fn(12, 12, |y, x| g.get(y, x) + if x >= 6 { 1.5 } else { 0.0 });
        assert_eq!(masked_loss(&off_right, &g, &left, &cfg).unwrap().0.value, 0.0);
    }

    #[test]
    fn final_loss_weights() {
        let cfg = LossConfig::default();
        let masked = LossValue::from_terms(vec![LossTerm {
            name: "l1".into(),
            weight: 1.0,
            value: 1.0,
        }]);
        let con = LossValue::from_terms(vec![LossTerm {
            name: "con_AB".into(),
            weight: 1.0,
            value: 0.5,
        }]);
        let f = final_loss(&masked, &con, &cfg);
        assert_eq!(f.value, 3.0);
        let sum: f64 = f.terms.iter().map(|t| t.weight * t.value).sum();
        assert_eq!(sum, 3.0);
        assert_eq!(final_loss(&masked, &LossValue::default(), &cfg).value, 1.0);
        let ablate = LossConfig {
            lambda_con: 0.0,
            ..cfg
        };
        assert_eq!(final_loss(&masked, &con, &ablate).value, 1.0);
    }

    fn fd_check(f: impl Fn(&DepthMap) -> f64, x: &DepthMap, analytic: &DepthMap) {
        let step = 1e-3;
        let mut fd = vec![0.0; x.len()];
        for i in 0..x.len() {
            let mut plus = x.clone();
            plus.values_mut()[i] += step;
            let mut minus = x.clone();
            minus.values_mut()[i] -= step;
            fd[i] = (f(&plus) - f(&minus)) / (2.0 * step);
        }
        let e = rel_err(analytic.values(), &fd);
        assert!(e < 1e-4, "relative gradient error {e}");
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let cfg = LossConfig::default();
        let mut rng = Rng::new(8);
        for _ in 0..5 {
            let p = random(&mut rng, 8, 8);
            let g = random(&mut rng, 8, 8);
            let m = BinaryMask::from_fn(8, 8, |_, _| rng.bernoulli(0.85));
            let (_, grad) = composite_loss(&p, &g, &m, &cfg).unwrap();
            fd_check(|q| composite_loss(q, &g, &m, &cfg).unwrap().0.value, &p, &grad);
        }
    }

    #[test]
    fn consistency_gradient_matches_finite_differences() {
        let g = make_overlap_group(PatchRect::new(0, 0, 13, 12), 8, 8).unwrap();
        let ov = enumerate_overlaps(&g);
        let mut rng = Rng::new(9);
        let preds: Vec<_> = (0..4).map(|_| random(&mut rng, 8, 8)).collect();
        let (_, grads) = consistency_loss(&g, &preds, &ov).unwrap();
        for k in 0..4 {
            fd_check(
                |q| {
                    let mut ps = preds.clone();
                    ps[k] = q.clone();
                    consistency_loss(&g, &ps, &ov).unwrap().0.value
                },
                &preds[k],
                &grads[k],
            );
        }
    }

    #[test]
    fn consistency_symmetric_under_relabeling() {
        // mirror the group left-right: A<->B, C<->D with mirrored contents
        let g = make_overlap_group(PatchRect::new(0, 0, 13, 11), 8, 7).unwrap();
        let ov = enumerate_overlaps(&g);
        let mut rng = Rng::new(21);
        let preds: Vec<_> = (0..4).map(|_| random(&mut rng, 7, 8)).collect();
        let flip = |m: &DepthMap| DepthMap::from_fn(7, 8, |y, x| m.get(y, 7 - x));
        let mirrored = vec![flip(&preds[1]), flip(&preds[0]), flip(&preds[3]), flip(&preds[2])];
        let a = consistency_loss(&g, &preds, &ov).unwrap().0.value;
        let b = consistency_loss(&g, &mirrored, &ov).unwrap().0.value;
        assert!((a - b).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn composite_nonnegative_and_shift_invariant(seed in any::<u64>(), c in -5.0f64..5.0) {
            let mut rng = Rng::new(seed);
            let p = random(&mut rng, 9, 11);
            let g = random(&mut rng, 9, 11);
            let m = BinaryMask::from_fn(9, 11, |_, _| rng.bernoulli(0.7));
            let cfg = LossConfig::default();
            let (a, _) = composite_loss(&p, &g, &m, &cfg).unwrap();
            let (b, _) = composite_loss(&p.map(|v| v + c), &g.map(|v| v + c), &m, &cfg).unwrap();
            prop_assert!(a.value >= 0.0);
            for (x, y) in a.terms.iter().zip(&b.terms) {
                prop_assert!((x.value - y.value).abs() < 1e-9);
            }
        }
    }
}
