//! Patch geometry: inference grids, the 2x2 overlapping training group,
//! overlap enumeration and the averaging merge.

use std::fmt;

use crate::error::{Error, Result};
use crate::raster::{DepthMap, PatchRect};

/// Inference grid layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Geometry(format!("grid {rows}x{cols} has no cells")));
        }
        Ok(Self { rows, cols })
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl std::str::FromStr for GridSpec {
    type Err = Error;

    /// Parses `RxC`, e.g. `4x4`.
    fn from_str(s: &str) -> Result<Self> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Config(format!("grid `{s}` is not of the form RxC")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("grid `{s}` is not of the form RxC")))
        };
        GridSpec::new(parse(r)?, parse(c)?).map_err(|e| Error::Config(e.to_string()))
    }
}

impl serde::Serialize for GridSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for GridSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Splits an image into `rows x cols` disjoint cells, row-major. Cells are
/// `floor(dim / count)` wide; the last row and column absorb the remainder.
pub fn partition_grid(img_w: usize, img_h: usize, grid: GridSpec) -> Result<Vec<PatchRect>> {
    if img_w < grid.cols || img_h < grid.rows {
        return Err(Error::Geometry(format!(
            "{img_w}x{img_h} image cannot hold a {grid} grid"
        )));
    }
    let cw = img_w / grid.cols;
    let ch = img_h / grid.rows;
    let mut rects = Vec::with_capacity(grid.cells());
    for r in 0..grid.rows {
        let h = if r + 1 == grid.rows { img_h - r * ch } else { ch };
        for c in 0..grid.cols {
            let w = if c + 1 == grid.cols { img_w - c * cw } else { cw };
            rects.push(PatchRect::new(c * cw, r * ch, w, h));
        }
    }
    Ok(rects)
}

/// Member of a training group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PatchId {
    A,
    B,
    C,
    D,
}

impl PatchId {
    pub const ALL: [PatchId; 4] = [PatchId::A, PatchId::B, PatchId::C, PatchId::D];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Four overlapping patches tiling a training crop: A top-left, B top-right,
/// C bottom-left, D bottom-right.
///
/// `patches` are expressed in the region's own frame (A starts at the origin);
/// `region` itself lives in the parent image frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverlapGroup {
    pub region: PatchRect,
    pub patches: [PatchRect; 4],
    pub overlap_w: usize,
    pub overlap_h: usize,
}

impl OverlapGroup {
    pub fn patch(&self, id: PatchId) -> PatchRect {
        self.patches[id.index()]
    }

    /// Patch `id` in the parent image frame.
    pub fn patch_in_parent(&self, id: PatchId) -> PatchRect {
        self.region.compose(&self.patch(id))
    }

    pub fn patch_w(&self) -> usize {
        self.patches[0].w
    }

    pub fn patch_h(&self) -> usize {
        self.patches[0].h
    }
}

/// Builds the 2x2 group for a crop. The overlaps follow from the sizes:
/// `overlap_w = 2 * patch_w - region.w`, likewise for height.
pub fn make_overlap_group(region: PatchRect, patch_w: usize, patch_h: usize) -> Result<OverlapGroup> {
    if patch_w == 0 || patch_h == 0 {
        return Err(Error::Geometry("patch size must be positive".into()));
    }
    if region.w < patch_w || region.w > 2 * patch_w || region.h < patch_h || region.h > 2 * patch_h
    {
        return Err(Error::Geometry(format!(
            "region {}x{} (w x h) cannot be tiled by 2x2 patches of {patch_w}x{patch_h}",
            region.w, region.h
        )));
    }
    let (dx, dy) = (region.w - patch_w, region.h - patch_h);
    Ok(OverlapGroup {
        region,
        patches: [
            PatchRect::new(0, 0, patch_w, patch_h),
            PatchRect::new(dx, 0, patch_w, patch_h),
            PatchRect::new(0, dy, patch_w, patch_h),
            PatchRect::new(dx, dy, patch_w, patch_h),
        ],
        overlap_w: 2 * patch_w - region.w,
        overlap_h: 2 * patch_h - region.h,
    })
}

/// Group whose patches overlap by `overlap` pixels in both axes, anchored at
/// `(x0, y0)` in the parent frame.
pub fn group_with_overlap(
    x0: usize,
    y0: usize,
    patch_w: usize,
    patch_h: usize,
    overlap: usize,
) -> Result<OverlapGroup> {
    if overlap > patch_w || overlap > patch_h {
        return Err(Error::Geometry(format!(
            "overlap {overlap} exceeds patch {patch_w}x{patch_h}"
        )));
    }
    let region = PatchRect::new(x0, y0, 2 * patch_w - overlap, 2 * patch_h - overlap);
    make_overlap_group(region, patch_w, patch_h)
}

/// Intersection of two group members, in region coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OverlapRegion {
    pub pair: (PatchId, PatchId),
    pub rect: PatchRect,
}

impl OverlapRegion {
    /// The overlap in the local frame of member `id`.
    pub fn local_rect(&self, group: &OverlapGroup, id: PatchId) -> PatchRect {
        self.rect.relative_to(&group.patch(id))
    }
}

/// Every unordered pair of members with a nonempty intersection.
pub fn enumerate_overlaps(group: &OverlapGroup) -> Vec<OverlapRegion> {
    let mut out = Vec::with_capacity(6);
    for (i, &a) in PatchId::ALL.iter().enumerate() {
        for &b in &PatchId::ALL[i + 1..] {
            if let Some(rect) = group.patch(a).intersect(&group.patch(b)) {
                out.push(OverlapRegion { pair: (a, b), rect });
            }
        }
    }
    out
}

/// Running sum and count planes for the averaging merge. Accumulators over
/// disjoint patch subsets combine with [`MergeAccumulator::absorb`] in any
/// order.
#[derive(Debug, Clone)]
pub struct MergeAccumulator {
    height: usize,
    width: usize,
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl MergeAccumulator {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            sum: vec![0.0; height * width],
            count: vec![0; height * width],
        }
    }

    pub fn add(&mut self, rect: &PatchRect, depth: &DepthMap) -> Result<()> {
        if depth.dims() != (rect.h, rect.w) {
            return Err(Error::Shape(format!(
                "patch depth {}x{} does not match rect {rect}",
                depth.height(),
                depth.width()
            )));
        }
        rect.check_within(self.height, self.width)?;
        for y in 0..rect.h {
            let row = (rect.y0 + y) * self.width + rect.x0;
            for x in 0..rect.w {
                self.sum[row + x] += depth.get(y, x);
                self.count[row + x] += 1;
            }
        }
        Ok(())
    }

    pub fn absorb(&mut self, other: &MergeAccumulator) -> Result<()> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::Shape("merge accumulators differ in size".into()));
        }
        self.sum.iter_mut().zip(&other.sum).for_each(|(a, b)| *a += b);
        self.count.iter_mut().zip(&other.count).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// Per-pixel average; fails on the first uncovered pixel.
    pub fn finish(&self) -> Result<DepthMap> {
        if let Some(i) = self.count.iter().position(|&c| c == 0) {
            return Err(Error::Coverage {
                y: i / self.width,
                x: i % self.width,
            });
        }
        let data = self
            .sum
            .iter()
            .zip(&self.count)
            .map(|(&s, &c)| s / c as f64)
            .collect();
        Ok(DepthMap::from_raw(self.height, self.width, data))
    }

    /// Number of contributing patches per pixel.
    pub fn counts(&self) -> &[u32] {
        &self.count
    }
}

/// Averages overlapping patch depths: each canvas pixel takes the mean of the
/// patches that contain it.
pub fn merge_depths(
    patches: &[(PatchRect, DepthMap)],
    canvas_w: usize,
    canvas_h: usize,
) -> Result<DepthMap> {
    let mut acc = MergeAccumulator::new(canvas_h, canvas_w);
    for (rect, depth) in patches {
        acc.add(rect, depth)?;
    }
    acc.finish()
}

/// Per-pixel patch counts for a set of rectangles on a canvas.
pub fn coverage_counts(rects: &[PatchRect], canvas_w: usize, canvas_h: usize) -> Vec<u32> {
    let mut count = vec![0u32; canvas_w * canvas_h];
    for r in rects {
        for y in r.y0..r.bottom().min(canvas_h) {
            for x in r.x0..r.right().min(canvas_w) {
                count[y * canvas_w + x] += 1;
            }
        }
    }
    count
}

/// Places working-resolution patches into a `rows * patch_h` by
/// `cols * patch_w` canvas. Each patch is resized to its grid cell first.
pub fn reassemble_canvas(grid: GridSpec, refined: &[DepthMap]) -> Result<DepthMap> {
    if refined.len() != grid.cells() {
        return Err(Error::Arity {
            expected: grid.cells(),
            got: refined.len(),
        });
    }
    let (ph, pw) = refined[0].dims();
    if let Some(bad) = refined.iter().find(|m| m.dims() != (ph, pw)) {
        return Err(Error::Shape(format!(
            "refined patches must share one size: {ph}x{pw} vs {}x{}",
            bad.height(),
            bad.width()
        )));
    }
    let (canvas_h, canvas_w) = (grid.rows * ph, grid.cols * pw);
    let cells = partition_grid(canvas_w, canvas_h, grid)?;
    let mut canvas = DepthMap::filled(canvas_h, canvas_w, 0.0);
    for (cell, patch) in cells.iter().zip(refined) {
        canvas.paste(&patch.resize_bilinear(cell.h, cell.w), cell.y0, cell.x0);
    }
    Ok(canvas)
}

/// Inference reassembly: build the canvas of refined patches, then resize it
/// bilinearly to the original image size.
pub fn reassemble_inference(
    out_h: usize,
    out_w: usize,
    grid: GridSpec,
    refined: &[DepthMap],
) -> Result<DepthMap> {
    Ok(reassemble_canvas(grid, refined)?.resize_bilinear(out_h, out_w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Rng;
    use proptest::prelude::*;

    fn grid(r: usize, c: usize) -> GridSpec {
        GridSpec::new(r, c).unwrap()
    }

    #[test]
    fn reference_inference_grid() {
        let rects = partition_grid(2072, 2072, grid(4, 4)).unwrap();
        assert_eq!(rects.len(), 16);
        assert!(rects.iter().all(|r| r.w == 518 && r.h == 518));
    }

    #[test]
    fn single_cell_grid() {
        assert_eq!(
            partition_grid(37, 21, grid(1, 1)).unwrap(),
            vec![PatchRect::full(21, 37)]
        );
    }

    #[test]
    fn remainder_goes_to_last_cells() {
        let rects = partition_grid(100, 60, grid(2, 3)).unwrap();
        let widths: Vec<usize> = rects[..3].iter().map(|r| r.w).collect();
        let heights: Vec<usize> = rects.iter().step_by(3).map(|r| r.h).collect();
        assert_eq!(widths, vec![33, 33, 34]);
        assert_eq!(heights, vec![30, 30]);
        // pixel coverage oracle
        let counts = coverage_counts(&rects, 100, 60);
        assert!(counts.iter().all(|&c| c == 1));
    }

    #[test]
    fn degenerate_grid_rejected() {
        assert!(partition_grid(3, 10, grid(2, 4)).is_err());
        assert!(GridSpec::new(0, 2).is_err());
        assert_eq!("5x3".parse::<GridSpec>().unwrap(), grid(5, 3));
        assert!("5by3".parse::<GridSpec>().is_err());
    }

    #[test]
    fn exhaustive_partition_tiles_exactly() {
        for w in 1..=64 {
            for h in 1..=64 {
                for rows in 1..=4.min(h) {
                    for cols in 1..=4.min(w) {
                        let rects = partition_grid(w, h, grid(rows, cols)).unwrap();
                        let area: usize = rects.iter().map(PatchRect::area).sum();
                        assert_eq!(area, w * h);
                        for (i, a) in rects.iter().enumerate() {
                            assert!(a.check_within(h, w).is_ok());
                            for b in &rects[i + 1..] {
                                assert!(a.intersect(b).is_none());
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn reference_training_group() {
        let g = make_overlap_group(PatchRect::new(0, 0, 1505, 846), 960, 540).unwrap();
        assert_eq!((g.overlap_w, g.overlap_h), (415, 234));
        let overlaps = enumerate_overlaps(&g);
        assert_eq!(overlaps.len(), 6);
        for o in &overlaps {
            // intersection oracle: overlap extents per axis
            let (a, b) = (g.patch(o.pair.0), g.patch(o.pair.1));
            let ow = if a.x0 == b.x0 { 960 } else { 415 };
            let oh = if a.y0 == b.y0 { 540 } else { 234 };
            assert_eq!((o.rect.w, o.rect.h), (ow, oh), "{:?}", o.pair);
        }
    }

    #[test]
    fn zero_overlap_quadrants() {
        let g = make_overlap_group(PatchRect::new(3, 4, 20, 12), 10, 6).unwrap();
        assert_eq!((g.overlap_w, g.overlap_h), (0, 0));
        assert!(enumerate_overlaps(&g).is_empty());
        assert_eq!(g.patch_in_parent(PatchId::D), PatchRect::new(13, 10, 10, 6));
    }

    #[test]
    fn small_group_overlaps() {
        use PatchId::*;
        let g = make_overlap_group(PatchRect::new(0, 0, 10, 10), 6, 6).unwrap();
        let dims: Vec<_> = enumerate_overlaps(&g)
            .iter()
            .map(|o| (o.pair, o.rect.w, o.rect.h))
            .collect();
        assert_eq!(
            dims,
            vec![
                ((A, B), 2, 6),
                ((A, C), 6, 2),
                ((A, D), 2, 2),
                ((B, C), 2, 2),
                ((B, D), 6, 2),
                ((C, D), 2, 6),
            ]
        );
    }

    #[test]
    fn horizontal_only_overlap() {
        use PatchId::*;
        let g = make_overlap_group(PatchRect::new(0, 0, 10, 12), 6, 6).unwrap();
        assert_eq!(g.overlap_h, 0);
        let pairs: Vec<_> = enumerate_overlaps(&g).iter().map(|o| o.pair).collect();
        assert_eq!(pairs, vec![(A, B), (C, D)]);
    }

    #[test]
    fn invalid_group_rejected() {
        assert!(make_overlap_group(PatchRect::new(0, 0, 5, 10), 6, 6).is_err());
        assert!(make_overlap_group(PatchRect::new(0, 0, 13, 10), 6, 6).is_err());
    }

    #[test]
    fn merge_single_patch_identity() {
        let d = DepthMap::from_fn(4, 5, |y, x| (y * 5 + x) as f64);
        let m = merge_depths(&[(PatchRect::full(4, 5), d.clone())], 5, 4).unwrap();
        assert_eq!(m, d);
    }

    #[test]
    fn merge_two_patch_strip() {
        let a = (PatchRect::new(0, 0, 4, 2), DepthMap::filled(2, 4, 1.0));
        let b = (PatchRect::new(2, 0, 4, 2), DepthMap::filled(2, 4, 3.0));
        let m = merge_depths(&[a, b], 6, 2).unwrap();
        for y in 0..2 {
            let row: Vec<f64> = (0..6).map(|x| m.get(y, x)).collect();
            assert_eq!(row, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        }
    }

    #[test]
    fn merge_four_patch_group_matches_counting_oracle() {
        let g = make_overlap_group(PatchRect::new(0, 0, 10, 10), 6, 6).unwrap();
        let vals = [1.0, 2.0, 5.0, 11.0];
        let patches: Vec<_> = PatchId::ALL
            .iter()
            .map(|&id| (g.patch(id), DepthMap::filled(6, 6, vals[id.index()])))
            .collect();
        let m = merge_depths(&patches, 10, 10).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                let members: Vec<f64> = PatchId::ALL
                    .iter()
                    .filter(|&&id| g.patch(id).contains(y, x))
                    .map(|&id| vals[id.index()])
                    .collect();
                assert!(matches!(members.len(), 1 | 2 | 4));
                let want = members.iter().sum::<f64>() / members.len() as f64;
                assert_eq!(m.get(y, x), want);
            }
        }
        assert_eq!(m.get(5, 5), (1.0 + 2.0 + 5.0 + 11.0) / 4.0);
    }

    #[test]
    fn merge_reports_uncovered_pixel() {
        let a = (PatchRect::new(0, 0, 2, 2), DepthMap::filled(2, 2, 1.0));
        let err = merge_depths(&[a], 3, 2).unwrap_err();
        assert!(matches!(err, Error::Coverage { y: 0, x: 2 }));
    }

    #[test]
    fn reassemble_examples() {
        let r = DepthMap::from_fn(8, 8, |y, x| (y + 2 * x) as f64);
        let out = reassemble_inference(13, 11, grid(1, 1), std::slice::from_ref(&r)).unwrap();
        assert_eq!(out, r.resize_bilinear(13, 11));

        let constant = vec![DepthMap::filled(8, 8, 2.5); 9];
        let out = reassemble_inference(30, 20, grid(3, 3), &constant).unwrap();
        assert!(out.values().iter().all(|&v| (v - 2.5).abs() < 1e-12));

        let mosaic: Vec<_> = (0..16)
            .map(|i| DepthMap::filled(4, 4, i as f64))
            .collect();
        let canvas = reassemble_canvas(grid(4, 4), &mosaic).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(canvas.get(y, x), (4 * (y / 4) + x / 4) as f64);
            }
        }
        assert!(matches!(
            reassemble_canvas(grid(4, 4), &mosaic[..15]),
            Err(Error::Arity { expected: 16, got: 15 })
        ));
    }

    proptest! {
        #[test]
        fn group_count_plane_sums_to_four_patches(pw in 1usize..30, ph in 1usize..30, fx in 0.0f64..1.0, fy in 0.0f64..1.0) {
            let rw = pw + (fx * pw as f64) as usize;
            let rh = ph + (fy * ph as f64) as usize;
            let g = make_overlap_group(PatchRect::new(0, 0, rw, rh), pw, ph).unwrap();
            let counts = coverage_counts(&g.patches, rw, rh);
            prop_assert!(counts.iter().all(|&c| c >= 1));
            prop_assert_eq!(counts.iter().map(|&c| c as usize).sum::<usize>(), 4 * pw * ph);
            for o in enumerate_overlaps(&g) {
                for id in [o.pair.0, o.pair.1] {
                    let local = o.local_rect(&g, id);
                    prop_assert!(local.check_within(ph, pw).is_ok());
                }
            }
        }

        #[test]
        fn merge_permutation_invariant_and_constant(seed in any::<u64>()) {
            let g = make_overlap_group(PatchRect::new(0, 0, 9, 7), 5, 4).unwrap();
            let mut rng = Rng::new(seed);
            let mut patches: Vec<_> = g.patches.iter().map(|r| {
                (*r, DepthMap::from_fn(r.h, r.w, |_, _| rng.range(0.0, 4.0)))
            }).collect();
            let forward = merge_depths(&patches, 9, 7).unwrap();
            patches.reverse();
            patches.swap(0, 2);
            let shuffled = merge_depths(&patches, 9, 7).unwrap();
            for (a, b) in forward.values().iter().zip(shuffled.values()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let same: Vec<_> = g.patches.iter().map(|r| (*r, DepthMap::filled(r.h, r.w, 0.75))).collect();
            prop_assert!(merge_depths(&same, 9, 7).unwrap().values().iter().all(|&v| v == 0.75));
        }
    }
}
