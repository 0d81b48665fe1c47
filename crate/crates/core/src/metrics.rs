//! Evaluation metrics.
//!
//! Predictions are relative, so `absrel` and `delta1` are meant to be applied
//! after [`align_scale_shift`]. `d3r` and `consistency_error` work on
//! normalised values and need no alignment.

use std::io::Write;

use crate::bfm::dilate;
use crate::error::{Error, Result};
use crate::raster::{ensure_same_dims, BinaryMask, DepthMap, NORM_EPS};
use crate::tiling::{enumerate_overlaps, OverlapGroup};

/// Depth floor applied before ratio metrics.
pub const DEPTH_FLOOR: f64 = 1e-3;
pub const DELTA1_THRESHOLD: f64 = 1.25;
pub const D3R_CELL: usize = 8;
pub const D3R_THRESHOLD: f64 = 0.1;
pub const BR_TOLERANCE: usize = 2;

/// Per-scene metric values; metrics that were not computed stay `None`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub scene_id: String,
    pub absrel: Option<f64>,
    pub delta1: Option<f64>,
    pub d3r: Option<f64>,
    pub br: Option<f64>,
    pub ce: Option<f64>,
    pub pixel_count: usize,
}

pub const CSV_HEADER: [&str; 7] = ["scene_id", "absrel", "delta1", "d3r", "br", "ce", "pixel_count"];

impl MetricReport {
    /// Mean of each metric over the reports that carry it; pixel counts add up.
    pub fn aggregate(id: &str, reports: &[MetricReport]) -> MetricReport {
        let mean = |f: fn(&MetricReport) -> Option<f64>| {
            let v: Vec<f64> = reports.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        MetricReport {
            scene_id: id.to_owned(),
            absrel: mean(|r| r.absrel),
            delta1: mean(|r| r.delta1),
            d3r: mean(|r| r.d3r),
            br: mean(|r| r.br),
            ce: mean(|r| r.ce),
            pixel_count: reports.iter().map(|r| r.pixel_count).sum(),
        }
    }

    fn record(&self) -> Vec<String> {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        vec![
            self.scene_id.clone(),
            f(self.absrel),
            f(self.delta1),
            f(self.d3r),
            f(self.br),
            f(self.ce),
            self.pixel_count.to_string(),
        ]
    }
}

/// Writes the header, one row per report and a final `mean` row.
pub fn write_report_csv(out: impl Write, reports: &[MetricReport]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in reports {
        w.write_record(r.record())?;
    }
    w.write_record(MetricReport::aggregate("mean", reports).record())?;
    w.flush()
}

fn check(pred: &DepthMap, gt: &DepthMap, valid: &BinaryMask) -> Result<usize> {
    ensure_same_dims(pred.dims(), gt.dims(), "metric prediction")?;
    ensure_same_dims(valid.dims(), gt.dims(), "metric mask")?;
    let n = valid.count();
    if n == 0 {
        return Err(Error::Metric("empty valid set".into()));
    }
    Ok(n)
}

/// The `(s, t)` minimising `sum over valid of (s * pred + t - gt)^2`.
pub fn fit_scale_shift(pred: &DepthMap, gt: &DepthMap, valid: &BinaryMask) -> Result<(f64, f64)> {
    let n = check(pred, gt, valid)?;
    if n < 2 {
        return Err(Error::Alignment("fewer than two valid pixels".into()));
    }
    let pairs = || {
        pred.values()
            .iter()
            .zip(gt.values())
            .zip(valid.values())
            .filter(|(_, &m)| m)
            .map(|((&p, &g), _)| (p, g))
    };
    let (sp, sg) = pairs().fold((0.0, 0.0), |(a, b), (p, g)| (a + p, b + g));
    let (mp, mg) = (sp / n as f64, sg / n as f64);
    let (mut spp, mut spg, mut sgg) = (0.0, 0.0, 0.0);
    for (p, g) in pairs() {
        spp += (p - mp) * (p - mp);
        spg += (p - mp) * (g - mg);
        sgg += (g - mg) * (g - mg);
    }
    if sgg <= 0.0 {
        return Err(Error::Alignment("ground truth is constant on the valid set".into()));
    }
    if spp <= 1e-12 * sgg.max(1.0) {
        return Err(Error::Alignment("prediction is constant on the valid set".into()));
    }
    let s = spg / spp;
    Ok((s, mg - s * mp))
}

/// `s * pred + t` with the least-squares scale and shift.
pub fn align_scale_shift(pred: &DepthMap, gt: &DepthMap, valid: &BinaryMask) -> Result<DepthMap> {
    let (s, t) = fit_scale_shift(pred, gt, valid)?;
    Ok(pred.map(|p| s * p + t))
}

/// Masked mean of `|pred - gt| / gt`, with `gt` floored at [`DEPTH_FLOOR`].
pub fn absrel(pred: &DepthMap, gt: &DepthMap, valid: &BinaryMask) -> Result<f64> {
    let n = check(pred, gt, valid)?;
    let mut sum = 0.0;
    for ((&p, &g), &m) in pred.values().iter().zip(gt.values()).zip(valid.values()) {
        if m {
            let g = g.max(DEPTH_FLOOR);
            sum += (p - g).abs() / g;
        }
    }
    Ok(sum / n as f64)
}

/// Masked fraction of pixels with `max(pred / gt, gt / pred) < 1.25`. Both
/// depths are floored at [`DEPTH_FLOOR`], so non-positive predictions count
/// as misses.
pub fn delta1(pred: &DepthMap, gt: &DepthMap, valid: &BinaryMask) -> Result<f64> {
    let n = check(pred, gt, valid)?;
    let mut hits = 0usize;
    for ((&p, &g), &m) in pred.values().iter().zip(gt.values()).zip(valid.values()) {
        if m {
            let (p, g) = (p.max(DEPTH_FLOOR), g.max(DEPTH_FLOOR));
            if (p / g).max(g / p) < DELTA1_THRESHOLD {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / n as f64)
}

fn block_means(d: &DepthMap, cell: usize, by: usize, bx: usize) -> Vec<f64> {
    let crop_h = by * cell;
    let crop_w = bx * cell;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for y in 0..crop_h {
        for x in 0..crop_w {
            lo = lo.min(d.get(y, x));
            hi = hi.max(d.get(y, x));
        }
    }
    let denom = (hi - lo).max(NORM_EPS);
    let mut out = vec![0.0; by * bx];
    for (b, mean) in out.iter_mut().enumerate() {
        let (y0, x0) = ((b / bx) * cell, (b % bx) * cell);
        let mut acc = 0.0;
        for y in y0..y0 + cell {
            for x in x0..x0 + cell {
                acc += (d.get(y, x) - lo) / denom;
            }
        }
        *mean = acc / (cell * cell) as f64;
    }
    out
}

/// Block-pair discontinuity disagreement.
///
/// Both maps are min-max normalised over the whole-cell area and averaged in
/// `cell x cell` blocks (remainder rows and columns are dropped). Every
/// 4-adjacent block pair whose ground-truth means differ by more than
/// `disc_threshold` is a discontinuity; the score is the fraction of
/// discontinuities where the prediction flips the sign of the step or shrinks
/// it below `disc_threshold / 2`. Scenes without discontinuities score 0.
pub fn d3r(pred: &DepthMap, gt: &DepthMap, cell: usize, disc_threshold: f64) -> Result<f64> {
    ensure_same_dims(pred.dims(), gt.dims(), "d3r prediction")?;
    if cell == 0 {
        return Err(Error::Metric("d3r cell size must be positive".into()));
    }
    let (by, bx) = (gt.height() / cell, gt.width() / cell);
    if by * bx < 2 || (by == 0 || bx == 0) {
        return Err(Error::Metric(format!(
            "{}x{} raster holds fewer than two {cell}px blocks",
            gt.height(),
            gt.width()
        )));
    }
    let mp = block_means(pred, cell, by, bx);
    let mg = block_means(gt, cell, by, bx);
    let (mut total, mut bad) = (0usize, 0usize);
    for y in 0..by {
        for x in 0..bx {
            let a = y * bx + x;
            let neighbours = [(x + 1 < bx).then(|| a + 1), (y + 1 < by).then(|| a + bx)];
            for b in neighbours.into_iter().flatten() {
                let dg = mg[b] - mg[a];
                if dg.abs() <= disc_threshold {
                    continue;
                }
                total += 1;
                let dp = mp[b] - mp[a];
                if dp.signum() != dg.signum() || dp.abs() < disc_threshold / 2.0 {
                    bad += 1;
                }
            }
        }
    }
    Ok(if total == 0 { 0.0 } else { bad as f64 / total as f64 })
}

/// Fraction of ground-truth edge pixels with a predicted edge pixel within
/// Chebyshev distance `tol`.
pub fn boundary_recall(pred_edges: &BinaryMask, gt_edges: &BinaryMask, tol: usize) -> Result<f64> {
    ensure_same_dims(pred_edges.dims(), gt_edges.dims(), "boundary_recall")?;
    let n = gt_edges.count();
    if n == 0 {
        return Err(Error::Metric("ground truth has no edge pixels".into()));
    }
    let reach = dilate(pred_edges, 2 * tol + 1, 2 * tol + 1);
    let hit = gt_edges
        .values()
        .iter()
        .zip(reach.values())
        .filter(|(&g, &r)| g && r)
        .count();
    Ok(hit as f64 / n as f64)
}

/// Mean over the group's overlap regions of the RMS difference between the
/// two members' predictions. `preds` are at patch size in the group's frame
/// and are min-max normalised jointly over all four, so a consistent group
/// scores 0 whatever its depth range.
pub fn consistency_error(group: &OverlapGroup, preds: &[DepthMap]) -> Result<f64> {
    if preds.len() != 4 {
        return Err(Error::Arity {
            expected: 4,
            got: preds.len(),
        });
    }
    for (pred, rect) in preds.iter().zip(&group.patches) {
        ensure_same_dims(pred.dims(), (rect.h, rect.w), "consistency_error prediction")?;
    }
    let overlaps = enumerate_overlaps(group);
    if overlaps.is_empty() {
        return Err(Error::Metric("group has no overlapping patches".into()));
    }
    let (lo, hi) = preds.iter().map(DepthMap::min_max).fold(
        (f64::INFINITY, f64::NEG_INFINITY),
        |(a, b), (l, h)| (a.min(l), b.max(h)),
    );
    let denom = (hi - lo).max(NORM_EPS);
    let mut total = 0.0;
    for ov in &overlaps {
        let (a, b) = ov.pair;
        let (ra, rb) = (ov.local_rect(group, a), ov.local_rect(group, b));
        let mut sum = 0.0;
        for y in 0..ov.rect.h {
            for x in 0..ov.rect.w {
                let pa = (preds[a.index()].get(ra.y0 + y, ra.x0 + x) - lo) / denom;
                let pb = (preds[b.index()].get(rb.y0 + y, rb.x0 + x) - lo) / denom;
                sum += (pa - pb) * (pa - pb);
            }
        }
        total += (sum / ov.rect.area() as f64).sqrt();
    }
    Ok(total / overlaps.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{Crop, Rng};
    use crate::tiling::group_with_overlap;
    use proptest::prelude::*;

    fn random(rng: &mut Rng, h: usize, w: usize, lo: f64, hi: f64) -> DepthMap {
        DepthMap::from_fn(h, w, |_, _| rng.range(lo, hi))
    }

    fn all(h: usize, w: usize) -> BinaryMask {
        BinaryMask::filled(h, w, true)
    }

    #[test]
    fn alignment_examples() {
        let mut rng = Rng::new(1);
        let gt = random(&mut rng, 8, 8, 1.0, 5.0);
        let pred = gt.map(|g| 2.0 * g + 1.0);
        let aligned = align_scale_shift(&pred, &gt, &all(8, 8)).unwrap();
        for (a, g) in aligned.values().iter().zip(gt.values()) {
            assert!((a - g).abs() < 1e-12);
        }
        let (s, t) = fit_scale_shift(&gt, &gt, &all(8, 8)).unwrap();
        assert!((s - 1.0).abs() < 1e-12 && t.abs() < 1e-12);
        assert!(matches!(
            fit_scale_shift(&DepthMap::filled(8, 8, 1.0), &gt, &all(8, 8)),
            Err(Error::Alignment(_))
        ));
        let one = BinaryMask::from_fn(8, 8, |y, x| y == 0 && x == 0);
        assert!(matches!(fit_scale_shift(&pred, &gt, &one), Err(Error::Alignment(_))));
    }

    #[test]
    fn alignment_beats_random_probes() {
        let mut rng = Rng::new(2);
        let gt = random(&mut rng, 16, 16, 1.0, 4.0);
        let pred = random(&mut rng, 16, 16, 0.0, 1.0);
        let m = all(16, 16);
        let sse = |s: f64, t: f64| {
            pred.values()
                .iter()
                .zip(gt.values())
                .map(|(p, g)| (s * p + t - g).powi(2))
                .sum::<f64>()
        };
        let (s, t) = fit_scale_shift(&pred, &gt, &m).unwrap();
        let best = sse(s, t);
        for _ in 0..10_000 {
            let (ps, pt) = (s + rng.range(-2.0, 2.0), t + rng.range(-2.0, 2.0));
            assert!(best <= sse(ps, pt) + 1e-12);
        }
    }

    #[test]
    fn absrel_and_delta1_examples() {
        let mut rng = Rng::new(3);
        let gt = random(&mut rng, 8, 8, 1.0, 5.0);
        let m = all(8, 8);
        assert_eq!(absrel(&gt, &gt, &m).unwrap(), 0.0);
        assert!((absrel(&gt.map(|g| 1.1 * g), &gt, &m).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(delta1(&gt, &gt, &m).unwrap(), 1.0);
        assert_eq!(delta1(&gt.map(|g| 1.3 * g), &gt, &m).unwrap(), 0.0);
        let half = DepthMap::from_fn(8, 8, |y, x| gt.get(y, x) * if x < 4 { 1.1 } else { 1.5 });
        assert_eq!(delta1(&half, &gt, &m).unwrap(), 0.5);
        let empty = BinaryMask::filled(8, 8, false);
        assert!(matches!(absrel(&gt, &gt, &empty), Err(Error::Metric(_))));
        assert!(matches!(delta1(&gt, &gt, &empty), Err(Error::Metric(_))));
    }

    fn blocks(values: &[&[f64]], cell: usize) -> DepthMap {
        let (by, bx) = (values.len(), values[0].len());
        DepthMap::from_fn(by * cell, bx * cell, |y, x| values[y / cell][x / cell])
    }

    #[test]
    fn d3r_examples() {
        let gt = blocks(&[&[0.0, 1.0], &[0.0, 0.0]], 8);
        assert_eq!(d3r(&gt, &gt, 8, 0.1).unwrap(), 0.0);
        let flat = DepthMap::filled(16, 16, 2.0);
        let one_step = blocks(&[&[0.0, 0.0], &[0.0, 1.0]], 8);
        // a single step block at (1, 1) touches two neighbours
        assert_eq!(d3r(&flat, &one_step, 8, 0.1).unwrap(), 1.0);
        let gt = blocks(&[&[0.0, 1.0, 0.0, 1.0]], 8);
        let pred = blocks(&[&[0.0, 1.0, 1.0, 1.0]], 8);
        let gt2 = blocks(&[&[0.0, 1.0, 1.0, 0.0]], 8);
        let pred2 = blocks(&[&[0.0, 1.0, 1.0, 1.0]], 8);
        assert_eq!(d3r(&pred2, &gt2, 8, 0.1).unwrap(), 0.5);
        assert!((d3r(&pred, &gt, 8, 0.1).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(matches!(d3r(&flat, &flat, 16, 0.1), Err(Error::Metric(_))));
    }

    #[test]
    fn boundary_recall_examples() {
        let line = |col: usize| BinaryMask::from_fn(20, 20, |_, x| x == col);
        assert_eq!(boundary_recall(&line(10), &line(10), 2).unwrap(), 1.0);
        assert_eq!(boundary_recall(&BinaryMask::filled(20, 20, false), &line(10), 2).unwrap(), 0.0);
        assert_eq!(boundary_recall(&line(13), &line(10), 2).unwrap(), 0.0);
        assert_eq!(boundary_recall(&line(13), &line(10), 3).unwrap(), 1.0);
        assert!(boundary_recall(&line(3), &BinaryMask::filled(20, 20, false), 2).is_err());
    }

    #[test]
    fn consistency_error_examples() {
        let g = group_with_overlap(0, 0, 8, 8, 4).unwrap();
        let scene = DepthMap::from_fn(12, 12, |y, x| 1.0 + 0.1 * y as f64 + 0.05 * x as f64);
        let crops: Vec<DepthMap> = g.patches.iter().map(|r| scene.crop(r).unwrap()).collect();
        assert_eq!(consistency_error(&g, &crops).unwrap(), 0.0);

        let flat: Vec<DepthMap> = (0..4).map(|_| DepthMap::filled(8, 8, 0.0)).collect();
        let mut preds = flat;
        preds[1] = DepthMap::from_fn(8, 8, |_, x| if x < 4 { 0.1 } else { 1.0 });
        // normalised range [0, 1]; only the AB overlap disagrees, by 0.1
        let ce = consistency_error(&g, &preds).unwrap();
        let expected_ab = 0.1;
        // BD overlaps B's rows 4..8 over all columns, half at 0.1 and half at 1.0
        let bd = ((4.0 * 0.01 + 4.0 * 1.0) / 8.0f64).sqrt();
        // BC overlaps B's bottom-left 4x4 only (0.1 there)
        let bc = 0.1;
        assert!((ce - (expected_ab + bd + bc) / 6.0).abs() < 1e-12, "{ce}");
    }

    /// Straight-line oracles for the five metrics on random instances.
    #[test]
    fn metrics_match_brute_force() {
        let mut rng = Rng::new(77);
        for _ in 0..50 {
            let (h, w) = (rng.between(8, 16), rng.between(8, 16));
            let gt = random(&mut rng, h, w, 0.5, 3.0);
            let pred = random(&mut rng, h, w, 0.0, 3.0);
            let m = BinaryMask::from_fn(h, w, |_, _| rng.bernoulli(0.7));
            if m.count() == 0 {
                continue;
            }
            let (mut ar, mut d1, mut n) = (0.0, 0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    if m.get(y, x) {
                        let g = gt.get(y, x).max(1e-3);
                        let p = pred.get(y, x);
                        ar += (p - g).abs() / g;
                        let pp = p.max(1e-3);
                        if (pp / g).max(g / pp) < 1.25 {
                            d1 += 1.0;
                        }
                        n += 1.0;
                    }
                }
            }
            assert!((absrel(&pred, &gt, &m).unwrap() - ar / n).abs() < 1e-8);
            assert!((delta1(&pred, &gt, &m).unwrap() - d1 / n).abs() < 1e-8);

            let pe = BinaryMask::from_fn(h, w, |_, _| rng.bernoulli(0.2));
            let ge = BinaryMask::from_fn(h, w, |_, _| rng.bernoulli(0.2));
            if ge.count() > 0 {
                let tol = rng.between(0, 3);
                let mut hit = 0.0;
                for y in 0..h {
                    for x in 0..w {
                        if !ge.get(y, x) {
                            continue;
                        }
                        let found = (0..h).any(|yy| {
                            (0..w).any(|xx| pe.get(yy, xx) && yy.abs_diff(y) <= tol && xx.abs_diff(x) <= tol)
                        });
                        hit += found as u8 as f64;
                    }
                }
                assert_eq!(boundary_recall(&pe, &ge, tol).unwrap(), hit / ge.count() as f64);
            }

            let cell = 4;
            let (by, bx) = (h / cell, w / cell);
            let norm = |d: &DepthMap| -> Vec<Vec<f64>> {
                let vals: Vec<f64> = (0..by * cell)
                    .flat_map(|y| (0..bx * cell).map(move |x| (y, x)))
                    .map(|(y, x)| d.get(y, x))
                    .collect();
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (0..by)
                    .map(|b_y| {
                        (0..bx)
                            .map(|b_x| {
                                let mut s = 0.0;
                                for y in 0..cell {
                                    for x in 0..cell {
                                        s += (d.get(b_y * cell + y, b_x * cell + x) - lo) / (hi - lo).max(1e-6);
                                    }
                                }
                                s / 16.0
                            })
                            .collect()
                    })
                    .collect()
            };
            let (bp, bg) = (norm(&pred), norm(&gt));
            let fp = |y: usize, x: usize| bp[y][x];
            let fg = |y: usize, x: usize| bg[y][x];
            let (mut tot, mut bad) = (0.0, 0.0);
            for y in 0..by {
                for x in 0..bx {
                    for (ny, nx) in [(y, x + 1), (y + 1, x)] {
                        if ny >= by || nx >= bx {
                            continue;
                        }
                        let dg = fg(ny, nx) - fg(y, x);
                        if dg.abs() > 0.1 {
                            tot += 1.0;
                            let dp = fp(ny, nx) - fp(y, x);
                            if (dp > 0.0) != (dg > 0.0) || dp.abs() < 0.05 {
                                bad += 1.0;
                            }
                        }
                    }
                }
            }
            let want = if tot == 0.0 { 0.0 } else { bad / tot };
            assert!((d3r(&pred, &gt, cell, 0.1).unwrap() - want).abs() < 1e-8);

            let pw = rng.between(4, 8);
            let ov = rng.between(1, pw);
            let g = group_with_overlap(0, 0, pw, pw, ov).unwrap();
            let preds: Vec<DepthMap> = (0..4).map(|_| random(&mut rng, pw, pw, 0.0, 2.0)).collect();
            let lo = preds.iter().flat_map(|p| p.values().to_vec()).fold(f64::INFINITY, f64::min);
            let hi = preds.iter().flat_map(|p| p.values().to_vec()).fold(f64::NEG_INFINITY, f64::max);
            let pos = [(0, 0), (pw - ov, 0), (0, pw - ov), (pw - ov, pw - ov)];
            let mut acc = 0.0;
            let mut pairs = 0.0;
            for i in 0..4 {
                for j in i + 1..4 {
                    let (mut s, mut c) = (0.0, 0.0);
                    let side = 2 * pw - ov;
                    for y in 0..side {
                        for x in 0..side {
                            let inside = |k: usize| {
                                let (px, py) = pos[k];
                                x >= px && x < px + pw && y >= py && y < py + pw
                            };
                            if inside(i) && inside(j) {
                                let a = (preds[i].get(y - pos[i].1, x - pos[i].0) - lo) / (hi - lo);
                                let b = (preds[j].get(y - pos[j].1, x - pos[j].0) - lo) / (hi - lo);
                                s += (a - b) * (a - b);
                                c += 1.0;
                            }
                        }
                    }
                    if c > 0.0 {
                        acc += (s / c as f64).sqrt();
                        pairs += 1.0;
                    }
                }
            }
            assert!((consistency_error(&g, &preds).unwrap() - acc / pairs).abs() < 1e-8);
        }
    }

    #[test]
    fn csv_layout() {
        let r = MetricReport {
            scene_id: "s0".into(),
            absrel: Some(0.5),
            ce: Some(0.25),
            pixel_count: 10,
            ..MetricReport::default()
        };
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &[r.clone(), r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "scene_id,absrel,delta1,d3r,br,ce,pixel_count");
        assert_eq!(lines[1], "s0,0.500000,,,,0.250000,10");
        assert_eq!(lines[3], "mean,0.500000,,,,0.250000,20");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn aligned_absrel_is_affine_invariant(seed in 0u64..1000, a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let mut rng = Rng::new(seed);
            let gt = random(&mut rng, 12, 12, 1.0, 4.0);
            let pred = random(&mut rng, 12, 12, 0.0, 1.0);
            let m = all(12, 12);
            let base = absrel(&align_scale_shift(&pred, &gt, &m).unwrap(), &gt, &m).unwrap();
            let moved = absrel(&align_scale_shift(&pred.map(|p| a * p + b), &gt, &m).unwrap(), &gt, &m).unwrap();
            prop_assert!((base - moved).abs() < 1e-10);
        }

        #[test]
        fn delta1_joint_scale_invariant(seed in 0u64..1000, k in 0.5f64..4.0) {
            let mut rng = Rng::new(seed);
            let gt = random(&mut rng, 10, 10, 1.0, 4.0);
            let pred = random(&mut rng, 10, 10, 1.0, 4.0);
            let m = all(10, 10);
            // powers of two keep the ratios bit-exact
            let k = k.log2().round().exp2();
            prop_assert_eq!(delta1(&pred, &gt, &m).unwrap(), delta1(&pred.map(|v| k * v), &gt.map(|v| k * v), &m).unwrap());
        }

        #[test]
        fn normalized_metrics_joint_affine_invariant(seed in 0u64..1000, a in 0.5f64..3.0, b in -2.0f64..2.0) {
            let mut rng = Rng::new(seed);
            let gt = random(&mut rng, 16, 16, 1.0, 4.0);
            let pred = random(&mut rng, 16, 16, 1.0, 4.0);
            let f = |d: &DepthMap| d.map(|v| a * v + b);
            prop_assert!((d3r(&pred, &gt, 4, 0.1).unwrap() - d3r(&f(&pred), &f(&gt), 4, 0.1).unwrap()).abs() < 1e-10);
            let g = group_with_overlap(0, 0, 8, 8, 3).unwrap();
            let preds: Vec<DepthMap> = (0..4).map(|_| random(&mut rng, 8, 8, 0.0, 1.0)).collect();
            let moved: Vec<DepthMap> = preds.iter().map(f).collect();
            prop_assert!((consistency_error(&g, &preds).unwrap() - consistency_error(&g, &moved).unwrap()).abs() < 1e-10);
        }

        #[test]
        fn boundary_recall_monotone_in_tol(seed in 0u64..1000) {
            let mut rng = Rng::new(seed);
            let pe = BinaryMask::from_fn(16, 16, |_, _| rng.bernoulli(0.1));
            let ge = BinaryMask::from_fn(16, 16, |y, x| y == 8 || x == 3);
            let mut last = 0.0;
            for tol in 0..6 {
                let r = boundary_recall(&pe, &ge, tol).unwrap();
                prop_assert!(r >= last);
                last = r;
            }
        }
    }
}
