//! Grouped patch training: crop a region, refine its four overlapping
//! patches, supervise the merged depth on the reliable mask, tie the patches
//! together on their overlaps, and apply momentum SGD.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fusion::params::{read_records, write_record, CHECKPOINT_MAGIC};
use crate::fusion::{Gradients, ParameterStore, ResidualNet};
use crate::losses::{composite_loss, consistency_loss, final_loss, LossValue};
use crate::pipeline::{refine, PreparedScene};
use crate::raster::{mix_seed, resize_plane_adjoint, BinaryMask, Crop, DepthMap, Rng};
use crate::tiling::{coverage_counts, enumerate_overlaps, group_with_overlap, merge_depths, OverlapGroup};

const ORDER_STREAM: u64 = 0x0e0c;
const CROP_STREAM: u64 = 0xc409;

/// Per-step training record; one CSV row each.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    pub masked: f64,
    pub l1: f64,
    pub l2: f64,
    pub msg: f64,
    pub con: f64,
    /// Fraction of supervised pixels in the used crops.
    pub reliable: f64,
    pub samples: u64,
    pub skipped: u64,
}

const LOG_FIELDS: usize = 10;

impl StepLog {
    fn to_array(self) -> [f64; LOG_FIELDS] {
        [
            self.step as f64,
            self.loss,
            self.masked,
            self.l1,
            self.l2,
            self.msg,
            self.con,
            self.reliable,
            self.samples as f64,
            self.skipped as f64,
        ]
    }

    fn from_array(a: &[f64]) -> Self {
        Self {
            step: a[0] as u64,
            loss: a[1],
            masked: a[2],
            l1: a[3],
            l2: a[4],
            msg: a[5],
            con: a[6],
            reliable: a[7],
            samples: a[8] as u64,
            skipped: a[9] as u64,
        }
    }
}

/// Everything needed to resume training exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub params: ParameterStore,
    /// Momentum buffers, one per parameter.
    pub velocity: Vec<Vec<f32>>,
    pub history: Vec<StepLog>,
}

fn f64_to_words(v: f64) -> [f32; 2] {
    let b = v.to_bits();
    [f32::from_bits(b as u32), f32::from_bits((b >> 32) as u32)]
}

fn words_to_f64(w: &[f32]) -> f64 {
    f64::from_bits(w[0].to_bits() as u64 | (w[1].to_bits() as u64) << 32)
}

impl TrainState {
    pub fn new(params: ParameterStore) -> Self {
        let velocity = params.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            step: 0,
            params,
            velocity,
            history: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.params.write_to(&mut out).expect("writing to memory");
        for (p, v) in self.params.params().iter().zip(&self.velocity) {
            write_record(&mut out, &format!("momentum:{}", p.name), &p.shape, v).expect("writing to memory");
        }
        write_record(&mut out, "meta:step", &[2], &f64_to_words(self.step as f64)).expect("writing to memory");
        let hist: Vec<f32> = self
            .history
            .iter()
            .flat_map(|h| h.to_array())
            .flat_map(f64_to_words)
            .collect();
        write_record(&mut out, "meta:history", &[self.history.len(), 2 * LOG_FIELDS], &hist)
            .expect("writing to memory");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut params = ParameterStore::new(0);
        let mut velocity = Vec::new();
        let mut step = None;
        let mut history = Vec::new();
        for rec in read_records(bytes)? {
            if let Some(name) = rec.name.strip_prefix("momentum:") {
                let id = params
                    .id(name)
                    .ok_or_else(|| Error::Checkpoint(format!("momentum for unknown parameter `{name}`")))?;
                if params.get(id).shape != rec.shape {
                    return Err(Error::Checkpoint(format!("momentum `{name}` has the wrong shape")));
                }
                velocity.push(rec.values);
            } else if rec.name == "meta:step" {
                step = Some(words_to_f64(&rec.values) as u64);
            } else if rec.name == "meta:history" {
                history = rec
                    .values
                    .chunks(2 * LOG_FIELDS)
                    .map(|row| StepLog::from_array(&row.chunks(2).map(words_to_f64).collect::<Vec<_>>()))
                    .collect();
            } else {
                params.add(&rec.name, &rec.shape, rec.values)?;
            }
        }
        let step = step.ok_or_else(|| Error::Checkpoint("training state lacks meta:step".into()))?;
        if velocity.len() != params.len() {
            return Err(Error::Checkpoint("momentum records do not cover every parameter".into()));
        }
        Ok(Self {
            step,
            params,
            velocity,
            history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Reads parameters from either a bare parameter file or a training state.
pub fn load_parameters(path: &Path) -> Result<ParameterStore> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a PRO1 checkpoint", path.display())));
    }
    let mut store = ParameterStore::new(0);
    for rec in read_records(&bytes)? {
        if !rec.name.contains(':') {
            store.add(&rec.name, &rec.shape, rec.values)?;
        }
    }
    Ok(store)
}

/// Indices of the scenes used for training. With masking enabled, scenes
/// whose whole frame would be discarded are left out.
pub fn eligible_scenes(scenes: &[PreparedScene], cfg: &RunConfig) -> Vec<usize> {
    (0..scenes.len())
        .filter(|&i| !cfg.train.use_bfm || !crate::bfm::should_discard_sample(&scenes[i].masks.unreliable, &cfg.bfm))
        .collect()
}

/// Optimizer steps for the configured number of epochs.
pub fn total_steps(n_scenes: usize, cfg: &RunConfig) -> u64 {
    let per = cfg.samples_per_step();
    (cfg.train.epochs * n_scenes).div_ceil(per) as u64
}

fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut rng = Rng::with_stream(mix_seed(&[seed, epoch]), ORDER_STREAM);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.below(i + 1));
    }
    order
}

/// Seed identifying the `i`-th sample of `step`.
pub fn sample_seed(seed: u64, step: u64, i: usize, per_step: usize) -> u64 {
    mix_seed(&[seed, step * per_step as u64 + i as u64])
}

/// Result of one training sample.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub loss: LossValue,
    pub masked: LossValue,
    pub con: LossValue,
    pub reliable: f64,
    pub group: OverlapGroup,
}

/// Draws a crop, discarding crops whose unreliable fraction is too high when
/// masking is on. `None` when every attempt was discarded.
pub fn draw_crop(prep: &PreparedScene, cfg: &RunConfig, sample_seed: u64) -> Result<Option<OverlapGroup>> {
    let mut rng = Rng::with_stream(sample_seed, CROP_STREAM);
    let [lo, hi] = cfg.train.crop_scale;
    let scale = if lo == hi { lo } else { rng.range(lo, hi) };
    let tp = ((cfg.crop_patch() as f64 * scale).round() as usize).max(1);
    let overlap = ((cfg.train.overlap as f64 * scale).round() as usize).min(tp);
    let side = 2 * tp - overlap;
    let (h, w) = prep.dims();
    if side > h || side > w {
        return Err(Error::Geometry(format!("training crop {side}px exceeds scene {h}x{w}")));
    }
    for _ in 0..=cfg.train.max_resample {
        let x0 = rng.below(w - side + 1);
        let y0 = rng.below(h - side + 1);
        let group = group_with_overlap(x0, y0, tp, tp, overlap)?;
        if cfg.train.use_bfm {
            let unreliable = prep.masks.unreliable.crop(&group.region)?;
            if crate::bfm::should_discard_sample(&unreliable, &cfg.bfm) {
                continue;
            }
        }
        return Ok(Some(group));
    }
    Ok(None)
}

/// Forward and backward for one group, adding parameter gradients to `grads`.
pub fn train_sample(
    net: &ResidualNet,
    params: &ParameterStore,
    prep: &PreparedScene,
    group: &OverlapGroup,
    cfg: &RunConfig,
    sample_seed: u64,
    grads: &mut Gradients,
) -> Result<SampleOutcome> {
    let p = net.config().patch_res;
    let tp = group.patch_w();
    let region = group.region;
    let mut passes = Vec::with_capacity(4);
    let mut preds = Vec::with_capacity(4);
    for (k, local) in group.patches.iter().enumerate() {
        let rect = region.compose(local);
        let data = prep.patch(&rect, mix_seed(&[sample_seed, k as u64]), net.config())?;
        let r = refine(net, params, data)?;
        preds.push(r.refined.resize_bilinear(tp, tp));
        passes.push(r.pass);
    }
    let placed: Vec<_> = group.patches.iter().copied().zip(preds.iter().cloned()).collect();
    let merged = merge_depths(&placed, region.w, region.h)?;
    let target = prep.target.crop(&region)?;
    let mask = if cfg.train.use_bfm {
        prep.masks.reliable.crop(&region)?
    } else {
        BinaryMask::filled(region.h, region.w, true)
    };
    let (masked, g_merged) = composite_loss(&merged, &target, &mask, &cfg.loss)?;
    let (con, g_con) = consistency_loss(group, &preds, &enumerate_overlaps(group))?;
    let loss = final_loss(&masked, &con, &cfg.loss);
    if !loss.value.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss {} on scene {} (sample seed {sample_seed:#018x}, crop {region})",
            loss.value, prep.id
        )));
    }
    let counts = coverage_counts(&group.patches, region.w, region.h);
    for (k, local) in group.patches.iter().enumerate() {
        let mut g = g_con[k].map(|v| cfg.loss.lambda_con * v);
        for y in 0..tp {
            for x in 0..tp {
                let i = (local.y0 + y) * region.w + local.x0 + x;
                g.set(y, x, g.get(y, x) + g_merged.values()[i] / counts[i] as f64);
            }
        }
        let g = if tp == p {
            g
        } else {
            DepthMap::new(p, p, resize_plane_adjoint(g.values(), p, p, tp, tp))?
        };
        net.backward(&passes[k], &g, params, grads)?;
    }
    Ok(SampleOutcome {
        loss,
        masked,
        con,
        reliable: mask.mean(),
        group: *group,
    })
}

/// One optimizer step over `batch_size * accum_steps` samples drawn from
/// `eligible`. Gradients are averaged over the samples actually used.
pub fn train_step(
    state: &mut TrainState,
    net: &ResidualNet,
    scenes: &[PreparedScene],
    eligible: &[usize],
    cfg: &RunConfig,
) -> Result<StepLog> {
    if eligible.is_empty() {
        return Err(Error::Data("no training scene passes the sample filter".into()));
    }
    let per = cfg.samples_per_step();
    let n = eligible.len() as u64;
    let mut log = StepLog {
        step: state.step,
        ..StepLog::default()
    };
    let mut total = state.params.zero_gradients();
    for micro in 0..cfg.train.accum_steps {
        let mut grads = state.params.zero_gradients();
        for b in 0..cfg.train.batch_size {
            let i = micro * cfg.train.batch_size + b;
            let s = state.step * per as u64 + i as u64;
            let order = epoch_order(cfg.seed, s / n, eligible.len());
            let prep = &scenes[eligible[order[(s % n) as usize]]];
            let seed = sample_seed(cfg.seed, state.step, i, per);
            let Some(group) = draw_crop(prep, cfg, seed)? else {
                log.skipped += 1;
                continue;
            };
            let out = train_sample(net, &state.params, prep, &group, cfg, seed, &mut grads)?;
            log.samples += 1;
            log.loss += out.loss.value;
            log.masked += out.masked.value;
            log.l1 += out.masked.term("l1").unwrap_or(0.0);
            log.l2 += out.masked.term("l2").unwrap_or(0.0);
            log.msg += out.masked.term("msg").unwrap_or(0.0);
            log.con += out.con.value;
            log.reliable += out.reliable;
        }
        total.add(&grads);
    }
    if log.samples > 0 {
        let inv = 1.0 / log.samples as f64;
        total.scale(inv);
        for v in [&mut log.loss, &mut log.masked, &mut log.l1, &mut log.l2, &mut log.msg, &mut log.con, &mut log.reliable] {
            *v *= inv;
        }
        apply_momentum(state, &total, cfg.train.learning_rate, cfg.train.momentum);
    }
    state.step += 1;
    state.history.push(log);
    Ok(log)
}

/// `v = mu * v + g; p -= lr * v`, in single precision.
pub fn apply_momentum(state: &mut TrainState, grads: &Gradients, lr: f64, mu: f64) {
    let (lr, mu) = (lr as f32, mu as f32);
    let ids: Vec<_> = state.params.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let vel = &mut state.velocity[k];
        let g = grads.get(id);
        let p = state.params.values_mut(id);
        for ((p, v), g) in p.iter_mut().zip(vel.iter_mut()).zip(g) {
            *v = mu * *v + *g as f32;
            *p -= lr * *v;
        }
    }
}

pub fn write_loss_csv(history: &[StepLog], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for h in history {
        w.serialize(h).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Data(e.to_string()))?;
    Ok(())
}

/// Where training writes its artifacts; `None` keeps everything in memory.
pub struct TrainOutput<'a> {
    pub dir: Option<&'a Path>,
    /// Called after each step, for progress reporting.
    pub on_step: &'a mut dyn FnMut(&StepLog, u64),
}

/// Runs the configured number of epochs from `state` onwards. Writes
/// `loss.csv`, `final.pro` and periodic `checkpoints/step_NNNNNN.pro` when an
/// output directory is given.
pub fn train(
    cfg: &RunConfig,
    scenes: &[PreparedScene],
    mut state: TrainState,
    out: TrainOutput<'_>,
) -> Result<TrainState> {
    cfg.validate()?;
    let net = ResidualNet::bind(&cfg.net, &state.params)?;
    let eligible = eligible_scenes(scenes, cfg);
    let steps = total_steps(eligible.len(), cfg);
    if let Some(dir) = out.dir {
        std::fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))?;
    }
    while state.step < steps {
        let log = train_step(&mut state, &net, scenes, &eligible, cfg)?;
        (out.on_step)(&log, steps);
        if let Some(dir) = out.dir {
            let every = cfg.train.checkpoint_every as u64;
            if every > 0 && state.step % every == 0 {
                state.save(&dir.join(format!("checkpoints/step_{:06}.pro", state.step)))?;
            }
        }
    }
    if let Some(dir) = out.dir {
        state.save(&dir.join("final.pro"))?;
        let path = dir.join("loss.csv");
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_loss_csv(&state.history, std::io::BufWriter::new(file))?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_scene, GenConfig};
    use crate::fusion::NetConfig;

    fn tiny_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.net = NetConfig {
            base_channels: 2,
            feature_channels: 2,
            patch_res: 64,
        };
        cfg.oracle.working_res = 64;
        cfg.oracle.feature_channels = 2;
        cfg.gen.size = 128;
        cfg.train.overlap = 28;
        cfg.train.batch_size = 2;
        cfg.train.accum_steps = 1;
        cfg.train.epochs = 1;
        cfg.bfm.dilate_kh = 3;
        cfg.bfm.dilate_kw = 5;
        cfg
    }

    fn scenes(cfg: &RunConfig, n: u64) -> Vec<PreparedScene> {
        (0..n)
            .map(|k| {
                let scene = generate_scene(&GenConfig {
                    seed: 100 + k,
                    ..cfg.gen.clone()
                })
                .unwrap();
                PreparedScene::new(&format!("s{k}"), scene, &cfg.oracle, &cfg.bfm).unwrap()
            })
            .collect()
    }

    fn init(cfg: &RunConfig) -> (ResidualNet, TrainState) {
        let (net, params) = ResidualNet::init(&cfg.net, cfg.seed).unwrap();
        (net, TrainState::new(params))
    }

    #[test]
    fn state_round_trips_exactly() {
        let cfg = tiny_cfg();
        let sc = scenes(&cfg, 2);
        let (net, mut state) = init(&cfg);
        let el = eligible_scenes(&sc, &cfg);
        train_step(&mut state, &net, &sc, &el, &cfg).unwrap();
        state.history.push(StepLog {
            loss: f64::NAN,
            ..StepLog::default()
        });
        let back = TrainState::from_bytes(&state.to_bytes()).unwrap();
        assert_eq!(back.to_bytes(), state.to_bytes());
        assert_eq!(back.step, 1);
        assert_eq!(back.params.params(), state.params.params());
        assert_eq!(back.velocity, state.velocity);
        assert_eq!(back.history[0], state.history[0]);
        assert!(back.history[1].loss.is_nan());
        assert_eq!(load_parameters_bytes(&state.to_bytes()).params(), state.params.params());
    }

    fn load_parameters_bytes(b: &[u8]) -> ParameterStore {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.pro");
        std::fs::write(&p, b).unwrap();
        load_parameters(&p).unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let mut cfg = tiny_cfg();
        cfg.train.learning_rate = 0.0;
        let sc = scenes(&cfg, 2);
        let (net, mut state) = init(&cfg);
        let before = state.params.clone();
        let log = train_step(&mut state, &net, &sc, &eligible_scenes(&sc, &cfg), &cfg).unwrap();
        assert!(log.loss.is_finite() && log.loss > 0.0);
        assert_eq!(state.params.params(), before.params());
    }

    #[test]
    fn first_step_loss_is_the_identity_baseline() {
        let cfg = tiny_cfg();
        let sc = scenes(&cfg, 2);
        let (net, mut state) = init(&cfg);
        let el = eligible_scenes(&sc, &cfg);
        let log = train_step(&mut state, &net, &sc, &el, &cfg).unwrap();
        // a zero head refines nothing, so overlaps agree and the loss is the
        // coarse-versus-target loss of the drawn crops
        assert_eq!(log.con, 0.0);
        let mut expect = 0.0;
        for i in 0..2 {
            let order = epoch_order(cfg.seed, 0, el.len());
            let prep = &sc[el[order[i]]];
            let seed = sample_seed(cfg.seed, 0, i, 2);
            let g = draw_crop(prep, &cfg, seed).unwrap().unwrap();
            let coarse = prep.coarse.depth.roi(prep.dims(), &g.region, (g.region.h, g.region.w)).unwrap();
            let mask = prep.masks.reliable.crop(&g.region).unwrap();
            let target = prep.target.crop(&g.region).unwrap();
            expect += composite_loss(&coarse, &target, &mask, &cfg.loss).unwrap().0.value;
        }
        assert!((log.loss - expect / 2.0).abs() < 1e-12, "{} vs {}", log.loss, expect / 2.0);
    }

    #[test]
    fn accumulation_matches_a_larger_batch() {
        let mut a = tiny_cfg();
        a.train.batch_size = 4;
        a.train.accum_steps = 1;
        let mut b = a.clone();
        b.train.batch_size = 2;
        b.train.accum_steps = 2;
        let sc = scenes(&a, 3);
        let el = eligible_scenes(&sc, &a);
        let (net, mut sa) = init(&a);
        let mut sb = sa.clone();
        for _ in 0..2 {
            train_step(&mut sa, &net, &sc, &el, &a).unwrap();
            train_step(&mut sb, &net, &sc, &el, &b).unwrap();
        }
        for (pa, pb) in sa.params.params().iter().zip(sb.params.params()) {
            for (x, y) in pa.values.iter().zip(&pb.values) {
                assert!((x - y).abs() <= 1e-6, "{}", pa.name);
            }
        }
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let mut cfg = tiny_cfg();
        cfg.train.epochs = 2;
        cfg.train.batch_size = 1;
        let sc = scenes(&cfg, 2);
        let noop = &mut |_: &StepLog, _: u64| {};
        let (_, s0) = init(&cfg);
        let full = train(&cfg, &sc, s0.clone(), TrainOutput { dir: None, on_step: noop }).unwrap();
        assert_eq!(full.step, 4);
        let again = train(&cfg, &sc, s0.clone(), TrainOutput { dir: None, on_step: noop }).unwrap();
        assert_eq!(full.to_bytes(), again.to_bytes());
        let mut half_cfg = cfg.clone();
        half_cfg.train.epochs = 1;
        let half = train(&half_cfg, &sc, s0, TrainOutput { dir: None, on_step: noop }).unwrap();
        let resumed = TrainState::from_bytes(&half.to_bytes()).unwrap();
        let resumed = train(&cfg, &sc, resumed, TrainOutput { dir: None, on_step: noop }).unwrap();
        assert_eq!(resumed.to_bytes(), full.to_bytes());
    }

    #[test]
    fn epoch_order_is_a_permutation() {
        for e in 0..5 {
            let mut o = epoch_order(9, e, 17);
            o.sort_unstable();
            assert_eq!(o, (0..17).collect::<Vec<_>>());
        }
        assert_ne!(epoch_order(9, 0, 17), epoch_order(9, 1, 17));
    }

    #[test]
    fn crops_over_bad_regions_are_redrawn() {
        let mut cfg = tiny_cfg();
        let mut sc = scenes(&cfg, 1);
        let prep = &mut sc[0];
        let (h, w) = prep.dims();
        prep.masks.unreliable = BinaryMask::from_fn(h, w, |_, x| x < 64);
        let side = 2 * 64 - cfg.train.overlap;
        for s in 0..20 {
            if let Some(g) = draw_crop(prep, &cfg, s).unwrap() {
                let frac = prep.masks.unreliable.crop(&g.region).unwrap().mean();
                assert!(frac <= 0.5);
                assert_eq!(g.region.w, side);
            }
        }
        prep.masks.unreliable = BinaryMask::filled(h, w, true);
        assert!(draw_crop(prep, &cfg, 0).unwrap().is_none());
        cfg.train.use_bfm = false;
        assert!(draw_crop(prep, &cfg, 0).unwrap().is_some());
    }

    #[test]
    fn scaled_crops_keep_the_overlap_ratio() {
        let mut cfg = tiny_cfg();
        cfg.train.crop_scale = [0.75, 1.25];
        cfg.train.use_bfm = false;
        let sc = scenes(&cfg, 1);
        let mut sizes = std::collections::BTreeSet::new();
        for s in 0..40 {
            let g = draw_crop(&sc[0], &cfg, s).unwrap().unwrap();
            let tp = g.patch_w();
            assert!((48..=80).contains(&tp));
            let ratio = g.overlap_w as f64 / tp as f64;
            assert!((ratio - 28.0 / 64.0).abs() < 0.02, "{ratio}");
            sizes.insert(tp);
        }
        assert!(sizes.len() > 5);
        // off-size patches go through the resize adjoint
        let (net, mut state) = init(&cfg);
        let el = eligible_scenes(&sc, &cfg);
        for _ in 0..2 {
            assert!(train_step(&mut state, &net, &sc, &el, &cfg).unwrap().loss.is_finite());
        }
    }

    #[test]
    fn loss_csv_has_one_row_per_step() {
        let logs = vec![StepLog::default(); 3];
        let mut buf = Vec::new();
        write_loss_csv(&logs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("step,loss,masked,l1,l2,msg,con,reliable,samples,skipped"));
    }
}
