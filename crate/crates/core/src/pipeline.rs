//! Scene-level plumbing between the backbone, the network and the metrics:
//! per-patch input assembly, grid inference, and consistency probes.

use crate::backbone::{Backbone, BackboneOutput, OracleBackbone, OracleConfig};
use crate::bfm::{bfm_components, BfmConfig, BfmMasks};
use crate::data::{depth_edges, Scene};
use crate::error::Result;
use crate::fusion::{refine_patch, ForwardPass, NetConfig, ParameterStore, PatchInputs, ResidualNet};
use crate::metrics::{absrel, align_scale_shift, boundary_recall, consistency_error, d3r, delta1, MetricReport};
use crate::raster::{mix_seed, BinaryMask, Crop, DepthMap, FeaturePyramid, PatchRect, RgbImage, PYRAMID_LEVELS};
use crate::tiling::{group_with_overlap, partition_grid, reassemble_canvas, GridSpec, OverlapGroup};

const INFER_TAG: u64 = 0x1f3e;
const GROUP_TAG: u64 = 0xce;

/// A scene with its backbone outputs and supervision masks computed once.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub id: String,
    pub scene: Scene,
    pub backbone: OracleBackbone,
    pub coarse: BackboneOutput,
    /// Min-max normalised labeled depth, the training target.
    pub target: DepthMap,
    /// Bias-free masks of the full frame.
    pub masks: BfmMasks,
}

/// Owned network inputs for one patch.
#[derive(Debug, Clone)]
pub struct PatchData {
    pub rect: PatchRect,
    pub rgb: RgbImage,
    pub coarse: DepthMap,
    pub fine: DepthMap,
    pub f_coarse: FeaturePyramid,
    pub f_fine: FeaturePyramid,
}

impl PatchData {
    pub fn inputs(&self) -> PatchInputs<'_> {
        PatchInputs {
            rgb: &self.rgb,
            coarse: &self.coarse,
            fine: &self.fine,
            f_coarse: &self.f_coarse,
            f_fine: &self.f_fine,
        }
    }
}

impl PreparedScene {
    pub fn new(id: &str, scene: Scene, oracle: &OracleConfig, bfm: &BfmConfig) -> Result<Self> {
        let backbone = OracleBackbone::for_scene(scene.depth_true.clone(), oracle.clone())?;
        let coarse = backbone.coarse(&scene.image)?;
        let dims = scene.depth_true.dims();
        let coarse_full = coarse.depth.roi(dims, &PatchRect::full(dims.0, dims.1), dims)?;
        let masks = bfm_components(&coarse_full, &scene.depth_labeled, bfm)?;
        let target = scene.depth_labeled.minmax_normalize();
        Ok(Self {
            id: id.to_owned(),
            scene,
            backbone,
            coarse,
            target,
            masks,
        })
    }

    /// `(height, width)` of the scene.
    pub fn dims(&self) -> (usize, usize) {
        self.scene.depth_true.dims()
    }

    /// Coarse depth over `rect`, resampled to `res x res`.
    pub fn coarse_roi(&self, rect: &PatchRect, res: usize) -> Result<DepthMap> {
        self.coarse.depth.roi(self.dims(), rect, (res, res))
    }

    /// Network inputs for `rect`; `index` selects the fine prediction's
    /// per-patch jitter.
    pub fn patch(&self, rect: &PatchRect, index: u64, cfg: &NetConfig) -> Result<PatchData> {
        let p = cfg.patch_res;
        let dims = self.dims();
        let rgb = self.scene.image.crop(rect)?.resize_bilinear(p, p);
        let coarse = self.coarse_roi(rect, p)?;
        let fine_out = self.backbone.fine(&self.scene.image, rect, index)?;
        let fine = fine_out.depth.resize_bilinear(p, p);
        let mut fc = Vec::with_capacity(PYRAMID_LEVELS);
        let mut ff = Vec::with_capacity(PYRAMID_LEVELS);
        for j in 0..PYRAMID_LEVELS {
            let s = cfg.level_res(j);
            fc.push(self.coarse.features.level(j).roi(dims, rect, (s, s))?);
            ff.push(fine_out.features.level(j).resize_bilinear(s, s));
        }
        Ok(PatchData {
            rect: *rect,
            rgb,
            coarse,
            fine,
            f_coarse: FeaturePyramid::new(fc)?,
            f_fine: FeaturePyramid::new(ff)?,
        })
    }
}

/// A refined patch: the forward record, the coarse ROI and `coarse + R`.
#[derive(Debug, Clone)]
pub struct RefinedPatch {
    pub data: PatchData,
    pub pass: ForwardPass,
    pub refined: DepthMap,
}

pub fn refine(net: &ResidualNet, params: &ParameterStore, data: PatchData) -> Result<RefinedPatch> {
    let pass = net.forward(params, &data.inputs())?;
    let refined = refine_patch(&data.coarse, &pass.residual())?;
    Ok(RefinedPatch { data, pass, refined })
}

/// Grid inference products.
#[derive(Debug, Clone)]
pub struct Inference {
    /// Refined patches placed on the `rows * P x cols * P` canvas.
    pub canvas: DepthMap,
    /// The same canvas built from the coarse ROIs alone.
    pub coarse_canvas: DepthMap,
    /// Canvas of residuals.
    pub residual_canvas: DepthMap,
    /// `canvas` resized to the scene size.
    pub depth: DepthMap,
}

/// One refinement pass per grid cell, then reassembly.
pub fn infer_scene(net: &ResidualNet, params: &ParameterStore, prep: &PreparedScene, grid: GridSpec) -> Result<Inference> {
    let (h, w) = prep.dims();
    let cells = partition_grid(w, h, grid)?;
    let mut refined = Vec::with_capacity(cells.len());
    let mut coarse = Vec::with_capacity(cells.len());
    let mut residual = Vec::with_capacity(cells.len());
    for (k, cell) in cells.iter().enumerate() {
        let data = prep.patch(cell, mix_seed(&[INFER_TAG, k as u64]), net.config())?;
        let r = refine(net, params, data)?;
        residual.push(r.pass.residual());
        coarse.push(r.data.coarse);
        refined.push(r.refined);
    }
    let canvas = reassemble_canvas(grid, &refined)?;
    Ok(Inference {
        depth: canvas.resize_bilinear(h, w),
        coarse_canvas: reassemble_canvas(grid, &coarse)?,
        residual_canvas: reassemble_canvas(grid, &residual)?,
        canvas,
    })
}

/// The four corner-anchored groups used to probe consistency.
pub fn probe_groups(dims: (usize, usize), patch: usize, overlap: usize) -> Result<Vec<OverlapGroup>> {
    let side = 2 * patch - overlap;
    let (h, w) = dims;
    let (xr, yr) = (w.saturating_sub(side), h.saturating_sub(side));
    [(0, 0), (xr, 0), (0, yr), (xr, yr)]
        .into_iter()
        .map(|(x, y)| group_with_overlap(x, y, patch, patch, overlap))
        .collect()
}

/// Refines the four members of `group` independently and returns them at
/// patch size in the group's frame.
pub fn refine_group(
    net: &ResidualNet,
    params: &ParameterStore,
    prep: &PreparedScene,
    group: &OverlapGroup,
    tag: u64,
) -> Result<Vec<DepthMap>> {
    group
        .patches
        .iter()
        .enumerate()
        .map(|(i, local)| {
            let rect = group.region.compose(local);
            let data = prep.patch(&rect, mix_seed(&[GROUP_TAG, tag, i as u64]), net.config())?;
            Ok(refine(net, params, data)?.refined.resize_bilinear(local.h, local.w))
        })
        .collect()
}

/// Mean consistency error over the probe groups of a scene.
pub fn scene_consistency(
    net: &ResidualNet,
    params: &ParameterStore,
    prep: &PreparedScene,
    patch: usize,
    overlap: usize,
) -> Result<f64> {
    let groups = probe_groups(prep.dims(), patch, overlap)?;
    let mut total = 0.0;
    for (g, group) in groups.iter().enumerate() {
        let preds = refine_group(net, params, prep, group, g as u64)?;
        total += consistency_error(group, &preds)?;
    }
    Ok(total / groups.len() as f64)
}

/// Evaluation knobs for [`evaluate_scene`].
#[derive(Debug, Clone, Copy)]
pub struct EvalSpec {
    pub grid: GridSpec,
    pub patch: usize,
    pub ce_overlap: usize,
    pub br_tolerance: usize,
    pub d3r_cell: usize,
    pub d3r_threshold: f64,
}

/// Metrics of one scene plus the transparent-region probe.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneEval {
    pub report: MetricReport,
    /// AbsRel inside the transparent mask, against `depth_true`.
    pub absrel_transparent: Option<f64>,
    /// AbsRel outside the transparent mask, against `depth_true`.
    pub absrel_opaque: Option<f64>,
    pub transparent_pixels: usize,
}

/// Grid inference scored against `depth_true`. AbsRel and delta1 are
/// computed after a least-squares scale and shift fit over the whole frame.
pub fn evaluate_scene(
    net: &ResidualNet,
    params: &ParameterStore,
    prep: &PreparedScene,
    spec: &EvalSpec,
) -> Result<SceneEval> {
    let inf = infer_scene(net, params, prep, spec.grid)?;
    evaluate_prediction(prep, &inf.depth, Some(scene_consistency(net, params, prep, spec.patch, spec.ce_overlap)?), spec)
}

/// Scores an already computed full-frame prediction.
pub fn evaluate_prediction(prep: &PreparedScene, pred: &DepthMap, ce: Option<f64>, spec: &EvalSpec) -> Result<SceneEval> {
    let gt = &prep.scene.depth_true;
    let (h, w) = gt.dims();
    let all = BinaryMask::filled(h, w, true);
    let aligned = align_scale_shift(pred, gt, &all)?;
    let transparent = &prep.scene.transparent_mask;
    let opaque = transparent.not();
    let masked = |m: &BinaryMask| (m.count() > 0).then(|| absrel(&aligned, gt, m)).transpose();
    let br = if prep.scene.object_edges.count() > 0 {
        Some(boundary_recall(&depth_edges(&aligned), &prep.scene.object_edges, spec.br_tolerance)?)
    } else {
        None
    };
    Ok(SceneEval {
        report: MetricReport {
            scene_id: prep.id.clone(),
            absrel: Some(absrel(&aligned, gt, &all)?),
            delta1: Some(delta1(&aligned, gt, &all)?),
            d3r: Some(d3r(pred, gt, spec.d3r_cell, spec.d3r_threshold)?),
            br,
            ce,
            pixel_count: h * w,
        },
        absrel_transparent: masked(transparent)?,
        absrel_opaque: masked(&opaque)?,
        transparent_pixels: transparent.count(),
    })
}
