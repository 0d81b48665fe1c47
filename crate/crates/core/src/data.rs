//! Synthetic scenes with transparent-object label bias, and raster file I/O.
//!
//! A scene is a slanted background plane with boxes, spheres and tilted
//! plates composited in front of it. Transparent primitives appear in the
//! image (tinted, with a bright rim) and in `depth_true`, but `depth_labeled`
//! records whatever opaque surface lies behind them, the way real datasets
//! mislabel glass.

use std::io::{BufRead, Cursor};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bfm::dilate;
use crate::error::{Error, Result};
use crate::raster::{BinaryMask, DepthMap, RgbImage, Rng};

/// Relative depth step that counts as an object edge.
pub const EDGE_JUMP: f64 = 0.02;
const TINT: [f64; 3] = [0.15, 0.85, 0.95];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub size: usize,
    pub min_primitives: usize,
    pub max_primitives: usize,
    pub transparent_prob: f64,
    /// Amplitude of the procedural surface texture.
    pub texture: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            size: 512,
            min_primitives: 3,
            max_primitives: 7,
            transparent_prob: 0.2,
            texture: 0.15,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 || self.size % 4 != 0 {
            return Err(Error::Config(format!("gen.size {} must be a multiple of 4, at least 16", self.size)));
        }
        if self.min_primitives > self.max_primitives {
            return Err(Error::Config("gen.min_primitives exceeds gen.max_primitives".into()));
        }
        if !(0.0..=1.0).contains(&self.transparent_prob) {
            return Err(Error::Config("gen.transparent_prob must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.texture) {
            return Err(Error::Config("gen.texture must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub image: RgbImage,
    /// Physically correct depth.
    pub depth_true: DepthMap,
    /// Depth as a biased annotator would record it.
    pub depth_labeled: DepthMap,
    pub object_edges: BinaryMask,
    pub transparent_mask: BinaryMask,
    pub seed: u64,
}

#[derive(Debug, Clone)]
enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Disc { cx: f64, cy: f64, r: f64, bulge: f64 },
    Plate { cx: f64, cy: f64, hw: f64, hh: f64, cos: f64, sin: f64 },
}

#[derive(Debug, Clone)]
struct Primitive {
    shape: Shape,
    z: f64,
    slope: (f64, f64),
    color: [f64; 3],
    transparent: bool,
    freq: f64,
}

impl Primitive {
    /// Depth at pixel centre `(x, y)` if covered.
    fn depth_at(&self, x: f64, y: f64, size: f64) -> Option<f64> {
        let plane = |cx: f64, cy: f64| self.z + self.slope.0 * (x - cx) / size + self.slope.1 * (y - cy) / size;
        match self.shape {
            Shape::Rect { x0, y0, x1, y1 } => {
                (x >= x0 && x < x1 && y >= y0 && y < y1).then(|| plane((x0 + x1) / 2.0, (y0 + y1) / 2.0))
            }
            Shape::Disc { cx, cy, r, bulge } => {
                let rho2 = ((x - cx).powi(2) + (y - cy).powi(2)) / (r * r);
                (rho2 < 1.0).then(|| self.z - bulge * (1.0 - rho2).sqrt())
            }
            Shape::Plate { cx, cy, hw, hh, cos, sin } => {
                let (dx, dy) = (x - cx, y - cy);
                let (u, v) = (cos * dx + sin * dy, -sin * dx + cos * dy);
                (u.abs() < hw && v.abs() < hh).then(|| plane(cx, cy))
            }
        }
    }
}

fn random_primitive(rng: &mut Rng, size: f64, transparent_prob: f64) -> Primitive {
    let cx = rng.range(0.1, 0.9) * size;
    let cy = rng.range(0.1, 0.9) * size;
    let shape = match rng.below(3) {
        0 => {
            let (hw, hh) = (rng.range(0.06, 0.2) * size, rng.range(0.06, 0.2) * size);
            Shape::Rect {
                x0: cx - hw,
                y0: cy - hh,
                x1: cx + hw,
                y1: cy + hh,
            }
        }
        1 => Shape::Disc {
            cx,
            cy,
            r: rng.range(0.06, 0.18) * size,
            bulge: rng.range(0.2, 0.6),
        },
        _ => {
            let angle = rng.range(0.0, std::f64::consts::PI);
            Shape::Plate {
                cx,
                cy,
                hw: rng.range(0.08, 0.25) * size,
                hh: rng.range(0.04, 0.12) * size,
                cos: angle.cos(),
                sin: angle.sin(),
            }
        }
    };
    Primitive {
        shape,
        z: rng.range(2.0, 5.0),
        slope: (rng.range(-1.0, 1.0), rng.range(-1.0, 1.0)),
        color: [rng.range(0.1, 0.9), rng.range(0.1, 0.9), rng.range(0.1, 0.9)],
        transparent: rng.bernoulli(transparent_prob),
        freq: rng.range(4.0, 16.0),
    }
}

fn texture(x: f64, y: f64, size: f64, freq: f64, phase: f64) -> f64 {
    let (u, v) = (x / size, y / size);
    0.5 * ((freq * u * std::f64::consts::TAU + phase).sin() * (0.7 * freq * v * std::f64::consts::TAU).cos())
}

pub fn generate_scene(cfg: &GenConfig) -> Result<Scene> {
    cfg.validate()?;
    let n = cfg.size;
    let size = n as f64;
    let mut rng = Rng::new(cfg.seed);
    let bg_z = rng.range(7.0, 9.0);
    let bg_slope = (rng.range(-1.5, 1.5), rng.range(-1.5, 1.5));
    let bg_color = [rng.range(0.3, 0.7), rng.range(0.3, 0.7), rng.range(0.3, 0.7)];
    let bg_phase = rng.range(0.0, 6.0);
    let count = rng.between(cfg.min_primitives, cfg.max_primitives);
    let prims: Vec<Primitive> = (0..count).map(|_| random_primitive(&mut rng, size, cfg.transparent_prob)).collect();

    let mut depth_true = vec![0.0; n * n];
    let mut depth_labeled = vec![0.0; n * n];
    let mut transparent = vec![false; n * n];
    let mut image = vec![0.0; 3 * n * n];
    // per transparent primitive coverage, for the rim cue
    let mut covers: Vec<(usize, BinaryMask)> = Vec::new();
    for (k, p) in prims.iter().enumerate() {
        if p.transparent {
            covers.push((k, BinaryMask::filled(n, n, false)));
        }
    }
    let mut front_glass: Vec<Option<usize>> = vec![None; n * n];

    for y in 0..n {
        for x in 0..n {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let i = y * n + x;
            let bg = bg_z + bg_slope.0 * (fx / size - 0.5) + bg_slope.1 * (fy / size - 0.5);
            let mut opaque = (bg, None::<usize>);
            let mut glass: Option<(f64, usize)> = None;
            for (k, p) in prims.iter().enumerate() {
                let Some(d) = p.depth_at(fx, fy, size) else { continue };
                if p.transparent {
                    if let Some((_, mask)) = covers.iter_mut().find(|(idx, _)| *idx == k) {
                        mask.set(y, x, true);
                    }
                    if glass.is_none_or(|(g, _)| d < g) {
                        glass = Some((d, k));
                    }
                } else if d < opaque.0 {
                    opaque = (d, Some(k));
                }
            }
            depth_labeled[i] = opaque.0;
            depth_true[i] = opaque.0;
            let (base, freq, phase) = match opaque.1 {
                Some(k) => (prims[k].color, prims[k].freq, k as f64),
                None => (bg_color, 6.0, bg_phase),
            };
            let shade = 1.0 - 0.04 * opaque.0;
            let tex = cfg.texture * texture(fx, fy, size, freq, phase);
            let mut rgb = base.map(|c| (c * shade + tex).clamp(0.0, 1.0));
            if let Some((d, k)) = glass {
                if d < opaque.0 {
                    depth_true[i] = d;
                    transparent[i] = true;
                    front_glass[i] = Some(k);
                    rgb = [0, 1, 2].map(|c| 0.35 * rgb[c] + 0.65 * TINT[c]);
                }
            }
            for (c, v) in rgb.iter().enumerate() {
                image[c * n * n + i] = *v;
            }
        }
    }

    for (k, cover) in &covers {
        let rim = dilate(&cover.not(), 5, 5);
        for i in 0..n * n {
            if front_glass[i] == Some(*k) && rim.values()[i] {
                for c in 0..3 {
                    image[c * n * n + i] = 1.0;
                }
            }
        }
    }

    let depth_true = DepthMap::new(n, n, depth_true)?;
    let object_edges = depth_edges(&depth_true);
    Ok(Scene {
        image: RgbImage::new(n, n, image)?,
        depth_true,
        depth_labeled: DepthMap::new(n, n, depth_labeled)?,
        object_edges,
        transparent_mask: BinaryMask::new(n, n, transparent)?,
        seed: cfg.seed,
    })
}

/// Pixels whose depth differs from a 4-neighbour by more than [`EDGE_JUMP`]
/// relative to the nearer of the two.
pub fn depth_edges(d: &DepthMap) -> BinaryMask {
    let (h, w) = d.dims();
    let mut m = BinaryMask::filled(h, w, false);
    for y in 0..h {
        for x in 0..w {
            let a = d.get(y, x);
            for (yy, xx) in [(y, x + 1), (y + 1, x)] {
                if yy >= h || xx >= w {
                    continue;
                }
                let b = d.get(yy, xx);
                if (a - b).abs() > EDGE_JUMP * a.min(b) {
                    m.set(y, x, true);
                    m.set(yy, xx, true);
                }
            }
        }
    }
    m
}

// ---- PFM ----

pub fn encode_pfm(map: &DepthMap) -> Vec<u8> {
    let (h, w) = map.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * h * w);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(map.get(y, x) as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<DepthMap> {
    let mut cur = Cursor::new(bytes);
    let mut line = |what: &str| -> Result<(usize, String)> {
        let at = cur.position() as usize;
        let mut buf = Vec::new();
        cur.read_until(b'\n', &mut buf).map_err(|_| parse(at, "unreadable header"))?;
        if buf.last() != Some(&b'\n') {
            return Err(parse(at, &format!("truncated header, missing {what}")));
        }
        buf.pop();
        let s = String::from_utf8(buf).map_err(|_| parse(at, "header is not ASCII"))?;
        Ok((at, s.trim().to_owned()))
    };
    let (at, magic) = line("magic")?;
    match magic.as_str() {
        "Pf" => {}
        "PF" => return Err(parse(at, "unsupported channel count")),
        _ => return Err(parse(at, "not a PFM file")),
    }
    let (at, dims) = line("dimensions")?;
    let parts: Vec<usize> = dims
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse(at, "bad dimensions")))
        .collect::<Result<_>>()?;
    let [w, h] = parts[..] else {
        return Err(parse(at, "bad dimensions"));
    };
    let (at, scale) = line("scale")?;
    let scale: f64 = scale.parse().map_err(|_| parse(at, "bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(parse(at, "bad scale"));
    }
    let start = cur.position() as usize;
    let need = 4 * w * h;
    if bytes.len() - start < need {
        return Err(parse(bytes.len(), &format!("truncated payload, expected {need} bytes")));
    }
    let mut data = vec![0.0; w * h];
    for (k, chunk) in bytes[start..start + need].chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().expect("4-byte chunk");
        let v = if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row, x) = (k / w, k % w);
        data[(h - 1 - row) * w + x] = v as f64;
    }
    DepthMap::new(h, w, data)
}

fn parse(offset: usize, msg: &str) -> Error {
    Error::Parse {
        offset,
        msg: msg.to_owned(),
    }
}

pub fn write_pfm(map: &DepthMap, path: &Path) -> Result<()> {
    std::fs::write(path, encode_pfm(map)).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<DepthMap> {
    decode_pfm(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

// ---- PNG ----

fn png_error(e: impl std::fmt::Display) -> Error {
    parse(0, &format!("malformed PNG: {e}"))
}

fn encode_png(w: usize, h: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header().map_err(png_error)?;
        writer.write_image_data(data).map_err(png_error)?;
        writer.finish().map_err(png_error)?;
    }
    Ok(out)
}

fn decode_png(bytes: &[u8]) -> Result<(usize, usize, png::ColorType, png::BitDepth, Vec<u8>)> {
    let dec = png::Decoder::new(Cursor::new(bytes));
    let mut reader = dec.read_info().map_err(png_error)?;
    let size = reader.output_buffer_size().ok_or_else(|| png_error("image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_error)?;
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, info.color_type, info.bit_depth, buf))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Sidecar path holding the `(min, max)` range of a 16-bit depth PNG.
pub fn range_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".range");
    PathBuf::from(s)
}

/// 16-bit quantisation of `map` over its own range; a constant map is
/// stored as all-zero codes.
pub fn write_png16(map: &DepthMap, path: &Path) -> Result<()> {
    let (lo, hi) = map.min_max();
    let span = hi - lo;
    let mut data = Vec::with_capacity(2 * map.len());
    for &v in map.values() {
        let code = if span > 0.0 { ((v - lo) / span * 65535.0).round() as u16 } else { 0 };
        data.extend_from_slice(&code.to_be_bytes());
    }
    let (h, w) = map.dims();
    write_bytes(path, &encode_png(w, h, png::ColorType::Grayscale, png::BitDepth::Sixteen, &data)?)?;
    write_bytes(&range_sidecar(path), format!("{lo:?} {hi:?}\n").as_bytes())
}

pub fn read_png16(path: &Path) -> Result<DepthMap> {
    let sidecar = range_sidecar(path);
    let text = String::from_utf8(read_bytes(&sidecar)?).map_err(|_| parse(0, "range sidecar is not UTF-8"))?;
    let nums: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse(0, "bad range sidecar")))
        .collect::<Result<_>>()?;
    let [lo, hi] = nums[..] else {
        return Err(parse(0, "range sidecar needs two numbers"));
    };
    let (w, h, color, depth, buf) = decode_png(&read_bytes(path)?)?;
    if color != png::ColorType::Grayscale || depth != png::BitDepth::Sixteen {
        return Err(parse(0, "expected a 16-bit grayscale PNG"));
    }
    let data = buf
        .chunks_exact(2)
        .map(|c| lo + (hi - lo) * u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
        .collect();
    DepthMap::new(h, w, data)
}

pub fn write_png_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let data: Vec<u8> = mask.values().iter().map(|&b| if b { 255 } else { 0 }).collect();
    let (h, w) = mask.dims();
    write_bytes(path, &encode_png(w, h, png::ColorType::Grayscale, png::BitDepth::Eight, &data)?)
}

pub fn read_png_mask(path: &Path) -> Result<BinaryMask> {
    let (w, h, color, depth, buf) = decode_png(&read_bytes(path)?)?;
    if color != png::ColorType::Grayscale || depth != png::BitDepth::Eight {
        return Err(parse(0, "expected an 8-bit grayscale mask PNG"));
    }
    BinaryMask::new(h, w, buf.iter().map(|&v| v >= 128).collect())
}

pub fn write_png_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    let (h, w) = img.dims();
    let mut data = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            data.extend(img.get(y, x).map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
    }
    write_bytes(path, &encode_png(w, h, png::ColorType::Rgb, png::BitDepth::Eight, &data)?)
}

pub fn read_png_rgb(path: &Path) -> Result<RgbImage> {
    let (w, h, color, depth, buf) = decode_png(&read_bytes(path)?)?;
    if color != png::ColorType::Rgb || depth != png::BitDepth::Eight {
        return Err(parse(0, "expected an 8-bit RGB PNG"));
    }
    let mut img = RgbImage::filled(h, w, [0.0; 3]);
    for (i, px) in buf.chunks_exact(3).enumerate() {
        img.set(i / w, i % w, [px[0], px[1], px[2]].map(|v| v as f64 / 255.0));
    }
    Ok(img)
}

/// Depth as an 8-bit grey preview, near = bright.
pub fn write_png_preview(map: &DepthMap, path: &Path) -> Result<()> {
    let norm = map.minmax_normalize();
    let data: Vec<u8> = norm.values().iter().map(|v| ((1.0 - v) * 255.0).round() as u8).collect();
    let (h, w) = map.dims();
    write_bytes(path, &encode_png(w, h, png::ColorType::Grayscale, png::BitDepth::Eight, &data)?)
}

// ---- dataset layout ----

pub const MANIFEST: &str = "manifest.csv";

/// One manifest row; paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scene_id: String,
    pub seed: u64,
    pub image: String,
    pub depth_true: String,
    pub depth_labeled: String,
    pub edges: String,
    pub transparent: String,
}

impl ManifestEntry {
    pub fn for_scene(scene_id: &str, seed: u64) -> Self {
        let p = |f: &str| format!("{scene_id}/{f}");
        Self {
            scene_id: scene_id.to_owned(),
            seed,
            image: p("image.png"),
            depth_true: p("depth_true.pfm"),
            depth_labeled: p("depth_labeled.pfm"),
            edges: p("edges.png"),
            transparent: p("transparent.png"),
        }
    }
}

pub fn write_scene(root: &Path, entry: &ManifestEntry, scene: &Scene) -> Result<()> {
    let dir = root.join(&entry.scene_id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_png_rgb(&scene.image, &root.join(&entry.image))?;
    write_pfm(&scene.depth_true, &root.join(&entry.depth_true))?;
    write_pfm(&scene.depth_labeled, &root.join(&entry.depth_labeled))?;
    write_png_mask(&scene.object_edges, &root.join(&entry.edges))?;
    write_png_mask(&scene.transparent_mask, &root.join(&entry.transparent))
}

pub fn read_scene(root: &Path, entry: &ManifestEntry) -> Result<Scene> {
    Ok(Scene {
        image: read_png_rgb(&root.join(&entry.image))?,
        depth_true: read_pfm(&root.join(&entry.depth_true))?,
        depth_labeled: read_pfm(&root.join(&entry.depth_labeled))?,
        object_edges: read_png_mask(&root.join(&entry.edges))?,
        transparent_mask: read_png_mask(&root.join(&entry.transparent))?,
        seed: entry.seed,
    })
}

pub fn write_manifest(root: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let path = root.join(MANIFEST);
    let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    if entries.is_empty() {
        w.write_record(["scene_id", "seed", "image", "depth_true", "depth_labeled", "edges", "transparent"])
            .map_err(csv_err)?;
    }
    for e in entries {
        w.serialize(e).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    let path = root.join(MANIFEST);
    let mut r = csv::Reader::from_path(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Data(format!("{}: {e}", path.display()))))
        .collect()
}

/// Writes a manifest plus its scenes in memory order.
pub fn write_dataset(root: &Path, scenes: &[(ManifestEntry, Scene)]) -> Result<()> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for (entry, scene) in scenes {
        write_scene(root, entry, scene)?;
    }
    let entries: Vec<ManifestEntry> = scenes.iter().map(|(e, _)| e.clone()).collect();
    write_manifest(root, &entries)
}

pub fn load_dataset(root: &Path) -> Result<Vec<(ManifestEntry, Scene)>> {
    read_manifest(root)?
        .into_iter()
        .map(|e| {
            let s = read_scene(root, &e)?;
            Ok((e, s))
        })
        .collect()
}

/// Deterministic scene seeds: scene `k` of a dataset seeded with `seed`.
pub fn scene_seed(seed: u64, k: usize) -> u64 {
    crate::raster::mix_seed(&[seed, k as u64, 0x5ce7e])
}

/// `count` scenes from `cfg`, scene `k` seeded by [`scene_seed`].
pub fn generate_scenes(cfg: &GenConfig, count: usize) -> Result<Vec<(ManifestEntry, Scene)>> {
    (0..count)
        .map(|k| {
            let seed = scene_seed(cfg.seed, k);
            let scene = generate_scene(&GenConfig { seed, ..cfg.clone() })?;
            Ok((ManifestEntry::for_scene(&format!("scene_{k:04}"), seed), scene))
        })
        .collect()
}
