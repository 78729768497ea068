//! Synthetic matting data: procedural foregrounds with soft alpha, textured
//! backgrounds, compositing, augmentation and on-disk dataset manifests.
//!
//! On disk a dataset is
//!
//! ```text
//! <root>/manifest.json
//! <root>/{images,alphas,fgs,bgs,trimaps}/<id>.png
//! ```
//!
//! Planes are quantized to 8 bits *before* compositing, so the stored image
//! differs from `composite(alpha, fg, bg)` of the stored planes by at most
//! half a quantization level.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::loss;
use crate::tensor::{AlphaMatte, Image, MaskImage, Shape, Tensor};
use crate::trimap::{binarize, generate_trimap, trimap_with_radius, mask_bbox, Trimap, TrimapConfig, UNKNOWN};

pub const MIN_SYNTH_SIZE: usize = 32;
pub const MANIFEST_VERSION: u32 = 1;
pub const PLANES: [&str; 5] = ["images", "alphas", "fgs", "bgs", "trimaps"];

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn check_size(size: usize) -> Result<()> {
    if size < MIN_SYNTH_SIZE {
        return Err(Error::InvalidArgument(format!(
            "synthetic images need size >= {MIN_SYNTH_SIZE}, got {size}"
        )));
    }
    Ok(())
}

struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    feather: f64,
}

impl Ellipse {
    fn coverage(&self, y: f64, x: f64) -> f64 {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        let rho = ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt();
        let dist = (rho - 1.0) * self.a.min(self.b);
        (0.5 - dist / self.feather).clamp(0.0, 1.0)
    }

    fn boundary_point(&self, t: f64) -> (f64, f64) {
        let (u, v) = (self.a * t.cos(), self.b * t.sin());
        (
            self.cy + u * self.sin + v * self.cos,
            self.cx + u * self.cos - v * self.sin,
        )
    }
}

fn segment_distance(py: f64, px: f64, (ay, ax): (f64, f64), (by, bx): (f64, f64)) -> f64 {
    let (dy, dx) = (by - ay, bx - ax);
    let len2 = dy * dy + dx * dx;
    let t = if len2 > 0.0 {
        (((py - ay) * dy + (px - ax) * dx) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qy, qx) = (ay + t * dy, ax + t * dx);
    ((py - qy).powi(2) + (px - qx).powi(2)).sqrt()
}

/// Thin curved stroke with partial opacity.
struct Stroke {
    points: Vec<(f64, f64)>,
    half_width: f64,
    opacity: f64,
}

impl Stroke {
    fn coverage(&self, y: f64, x: f64) -> f64 {
        let d = self
            .points
            .windows(2)
            .map(|w| segment_distance(y, x, w[0], w[1]))
            .fold(f64::INFINITY, f64::min);
        self.opacity * (self.half_width + 0.5 - d).clamp(0.0, 1.0)
    }
}

/// Smooth random field in `[0, 1]` from bilinearly (smoothstep) interpolated
/// lattice values, summed over octaves.
fn value_noise(rng: &mut impl Rng, size: usize, base_cells: usize, octaves: usize) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    let mut amplitude = 1.0;
    let mut total = 0.0;
    for o in 0..octaves {
        let cells = base_cells << o;
        let lattice: Vec<f64> = (0..(cells + 1) * (cells + 1)).map(|_| rng.random()).collect();
        let scale = cells as f64 / size as f64;
        for y in 0..size {
            let fy = y as f64 * scale;
            let (iy, ty) = (fy.floor() as usize, fy.fract());
            let sy = ty * ty * (3.0 - 2.0 * ty);
            for x in 0..size {
                let fx = x as f64 * scale;
                let (ix, tx) = (fx.floor() as usize, fx.fract());
                let sx = tx * tx * (3.0 - 2.0 * tx);
                let at = |yy: usize, xx: usize| lattice[yy * (cells + 1) + xx];
                let top = at(iy, ix) * (1.0 - sx) + at(iy, ix + 1) * sx;
                let bot = at(iy + 1, ix) * (1.0 - sx) + at(iy + 1, ix + 1) * sx;
                out[y * size + x] += amplitude * (top * (1.0 - sy) + bot * sy);
            }
        }
        total += amplitude;
        amplitude *= 0.5;
    }
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// Procedural foreground: a union of soft-edged ellipses plus thin
/// semi-transparent hair-like strokes. Returns `(fg, alpha)`.
pub fn synth_foreground(seed: u64, size: usize) -> Result<(Image, AlphaMatte)> {
    check_size(size)?;
    let mut rng = rng_for(seed, 1);
    let s = size as f64;
    let n_ellipses = rng.random_range(1..=3);
    let ellipses: Vec<Ellipse> = (0..n_ellipses)
        .map(|_| {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
            Ellipse {
                cy: s * rng.random_range(0.35..0.65),
                cx: s * rng.random_range(0.35..0.65),
                a: s * rng.random_range(0.12..0.28),
                b: s * rng.random_range(0.10..0.22),
                cos: angle.cos(),
                sin: angle.sin(),
                feather: rng.random_range(0.8..2.5),
            }
        })
        .collect();

    let n_strokes = rng.random_range(3..=8);
    let strokes: Vec<Stroke> = (0..n_strokes)
        .map(|_| {
            let e = &ellipses[rng.random_range(0..ellipses.len())];
            let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let start = e.boundary_point(t);
            let (dir_y, dir_x) = (start.0 - e.cy, start.1 - e.cx);
            let norm = (dir_y * dir_y + dir_x * dir_x).sqrt().max(1e-9);
            let length = s * rng.random_range(0.08..0.25);
            let bend: f64 = rng.random_range(-0.5..0.5);
            let (ny, nx) = (dir_y / norm, dir_x / norm);
            let (ey, ex) = (start.0 + ny * length, start.1 + nx * length);
            let (cy, cx) = (
                (start.0 + ey) / 2.0 + nx * bend * length,
                (start.1 + ex) / 2.0 - ny * bend * length,
            );
            let points = (0..=12)
                .map(|k| {
                    let u = k as f64 / 12.0;
                    let w0 = (1.0 - u) * (1.0 - u);
                    let w1 = 2.0 * u * (1.0 - u);
                    let w2 = u * u;
                    (
                        w0 * start.0 + w1 * cy + w2 * ey,
                        w0 * start.1 + w1 * cx + w2 * ex,
                    )
                })
                .collect();
            Stroke {
                points,
                half_width: rng.random_range(0.5..1.0),
                opacity: rng.random_range(0.5..0.95),
            }
        })
        .collect();

    let alpha = Tensor::from_fn(Shape::new(size, size, 1), |y, x, _| {
        let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
        let body = ellipses
            .iter()
            .map(|e| e.coverage(py, px))
            .fold(0.0, f64::max);
        strokes
            .iter()
            .map(|st| st.coverage(py, px))
            .fold(body, f64::max)
    });

    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.15..0.9));
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.2..0.2));
    let texture = value_noise(&mut rng, size, 4, 3);
    let fg = Tensor::from_fn(Shape::new(size, size, 3), |y, x, c| {
        let ramp = (y as f64 + x as f64) / (2.0 * s) - 0.5;
        (base[c] + tint[c] * ramp + 0.25 * (texture[y * size + x] - 0.5)).clamp(0.0, 1.0)
    });
    Ok((fg, alpha))
}

/// Textured background: multi-octave value noise over a colour gradient.
pub fn synth_background(seed: u64, size: usize) -> Result<Image> {
    check_size(size)?;
    let mut rng = rng_for(seed, 2);
    let corner_a: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
    let corner_b: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let noise: Vec<Vec<f64>> = (0..3).map(|_| value_noise(&mut rng, size, 3, 4)).collect();
    let s = size as f64;
    Ok(Tensor::from_fn(Shape::new(size, size, 3), |y, x, c| {
        let t = ((x as f64 / s - 0.5) * angle.cos() + (y as f64 / s - 0.5) * angle.sin() + 0.5)
            .clamp(0.0, 1.0);
        let gradient = corner_a[c] * (1.0 - t) + corner_b[c] * t;
        (0.5 * gradient + 0.5 * noise[c][y * size + x]).clamp(0.0, 1.0)
    }))
}

/// One training/evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub gt_alpha: AlphaMatte,
    pub gt_fg: Image,
    pub gt_bg: Image,
    pub mask: MaskImage,
    pub trimap: Trimap,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    /// Check that every plane has the sample's spatial size.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        let planes: [(&str, &Tensor, usize); 5] = [
            ("image", &self.image, 3),
            ("alpha", &self.gt_alpha, 1),
            ("fg", &self.gt_fg, 3),
            ("bg", &self.gt_bg, 3),
            ("mask", &self.mask, 1),
        ];
        for (name, t, c) in planes {
            if t.shape() != Shape::new(h, w, c) {
                return Err(Error::shape(
                    "Sample",
                    format!("{name} plane is {}, expected {h}x{w}x{c}", t.shape()),
                ));
            }
        }
        if (self.trimap.height(), self.trimap.width()) != (h, w) {
            return Err(Error::shape(
                "Sample",
                format!(
                    "trimap is {}x{}, expected {h}x{w}",
                    self.trimap.height(),
                    self.trimap.width()
                ),
            ));
        }
        Ok(())
    }
}

/// Options for turning seeds into samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub size: usize,
    pub trimap: TrimapConfig,
    /// Randomly grow or shrink the trimap radius by one pixel to mimic a
    /// coarse predicted mask.
    pub radius_jitter: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            size: 96,
            trimap: TrimapConfig::default(),
            radius_jitter: false,
        }
    }
}

/// Generate a sample; planes are 8-bit quantized and the image is their
/// exact composite.
pub fn make_sample(fg_seed: u64, bg_seed: u64, cfg: &SynthConfig) -> Result<Sample> {
    let (fg, alpha) = synth_foreground(fg_seed, cfg.size)?;
    let bg = synth_background(bg_seed, cfg.size)?;
    let (fg, alpha, bg) = (
        io::quantize_tensor(&fg),
        io::quantize_tensor(&alpha),
        io::quantize_tensor(&bg),
    );
    let image = loss::composite(&alpha, &fg, &bg)?;
    let mask = binarize(&alpha);
    let trimap = if cfg.radius_jitter {
        cfg.trimap.validate()?;
        let base = cfg.trimap.radius(&mask_bbox(&mask)?);
        let delta: i64 = rng_for(fg_seed ^ bg_seed.rotate_left(17), 3).random_range(-1..=1);
        let r = (base as i64 + delta).max(cfg.trimap.min_radius as i64) as usize;
        trimap_with_radius(&mask, r)?
    } else {
        generate_trimap(&mask, &cfg.trimap)?
    };
    Ok(Sample {
        image,
        gt_alpha: alpha,
        gt_fg: fg,
        gt_bg: bg,
        mask,
        trimap,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub fg_seed: u64,
    pub bg_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub master_seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Deterministic manifest: `count` entries, the last `test_count` of
    /// which form the test split. Foreground seeds are all distinct, so the
    /// splits never share a foreground.
    pub fn plan(master_seed: u64, count: usize, test_count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("dataset must contain at least one sample".into()));
        }
        if test_count > count {
            return Err(Error::InvalidArgument(format!(
                "test split ({test_count}) larger than dataset ({count})"
            )));
        }
        let mut rng = rng_for(master_seed, 0);
        let mut seen = HashSet::new();
        let entries = (0..count)
            .map(|i| {
                let fg_seed = loop {
                    let s: u64 = rng.random();
                    if seen.insert(s) {
                        break s;
                    }
                };
                ManifestEntry {
                    id: format!("{i:05}"),
                    split: if i + test_count >= count {
                        Split::Test
                    } else {
                        Split::Train
                    },
                    fg_seed,
                    bg_seed: rng.random(),
                }
            })
            .collect();
        Ok(DatasetManifest {
            version: MANIFEST_VERSION,
            master_seed,
            entries,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Unique ids, disjoint splits (no shared foreground seed), and every
    /// referenced file present under `root`.
    pub fn validate(&self, root: &Path) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported manifest version {}",
                self.version
            )));
        }
        let mut ids = HashSet::new();
        for e in &self.entries {
            if !ids.insert(e.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate sample id {}", e.id)));
            }
            for plane in PLANES {
                let p = plane_path(root, plane, &e.id);
                if !p.is_file() {
                    return Err(Error::Sample {
                        id: e.id.clone(),
                        source: Box::new(Error::io(
                            p,
                            std::io::Error::new(std::io::ErrorKind::NotFound, "missing file"),
                        )),
                    });
                }
            }
        }
        let train: HashSet<u64> = self.split(Split::Train).map(|e| e.fg_seed).collect();
        if let Some(e) = self.split(Split::Test).find(|e| train.contains(&e.fg_seed)) {
            return Err(Error::InvalidArgument(format!(
                "test sample {} shares a foreground with the train split",
                e.id
            )));
        }
        Ok(())
    }

    pub fn load(root: &Path) -> Result<Self> {
        io::read_json(root.join("manifest.json"))
    }
}

pub fn plane_path(root: &Path, plane: &str, id: &str) -> PathBuf {
    root.join(plane).join(format!("{id}.png"))
}

/// Write the whole dataset described by `manifest` under `root`.
pub fn write_dataset(root: &Path, manifest: &DatasetManifest, cfg: &SynthConfig) -> Result<()> {
    for plane in PLANES {
        let dir = root.join(plane);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    manifest.entries.par_iter().try_for_each(|e| {
        let wrap = |source: Error| Error::Sample {
            id: e.id.clone(),
            source: Box::new(source),
        };
        let s = make_sample(e.fg_seed, e.bg_seed, cfg).map_err(wrap)?;
        io::write_rgb(plane_path(root, "images", &e.id), &s.image).map_err(wrap)?;
        io::write_gray(plane_path(root, "alphas", &e.id), &s.gt_alpha).map_err(wrap)?;
        io::write_rgb(plane_path(root, "fgs", &e.id), &s.gt_fg).map_err(wrap)?;
        io::write_rgb(plane_path(root, "bgs", &e.id), &s.gt_bg).map_err(wrap)?;
        io::write_trimap(plane_path(root, "trimaps", &e.id), &s.trimap).map_err(wrap)
    })?;
    io::write_json(root.join("manifest.json"), manifest)
}

/// Read one sample back from disk.
pub fn load_sample(root: &Path, entry: &ManifestEntry) -> Result<Sample> {
    let id = &entry.id;
    let load = || -> Result<Sample> {
        let gt_alpha = io::read_gray(plane_path(root, "alphas", id))?;
        let sample = Sample {
            image: io::read_rgb(plane_path(root, "images", id))?,
            mask: binarize(&gt_alpha),
            gt_alpha,
            gt_fg: io::read_rgb(plane_path(root, "fgs", id))?,
            gt_bg: io::read_rgb(plane_path(root, "bgs", id))?,
            trimap: io::read_trimap(plane_path(root, "trimaps", id))?,
        };
        sample.validate()?;
        Ok(sample)
    };
    load().map_err(|source| Error::Sample {
        id: id.clone(),
        source: Box::new(source),
    })
}

/// Bilinear resampling to `h × w` (pixel centres aligned).
pub fn resize_bilinear(t: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    if h == 0 || w == 0 || t.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "cannot resize {} to {h}x{w}",
            t.shape()
        )));
    }
    if (h, w) == (t.height(), t.width()) {
        return Ok(t.clone());
    }
    let (sy, sx) = (t.height() as f64 / h as f64, t.width() as f64 / w as f64);
    let (mh, mw) = (t.height() - 1, t.width() - 1);
    let sample = |pos: f64, max: usize| {
        let p = pos.clamp(0.0, max as f64);
        let i0 = p.floor() as usize;
        let i1 = (i0 + 1).min(max);
        (i0, i1, p - i0 as f64)
    };
    Ok(Tensor::from_fn(Shape::new(h, w, t.channels()), |y, x, c| {
        let (y0, y1, fy) = sample((y as f64 + 0.5) * sy - 0.5, mh);
        let (x0, x1, fx) = sample((x as f64 + 0.5) * sx - 0.5, mw);
        let top = t.at(y0, x0, c) * (1.0 - fx) + t.at(y0, x1, c) * fx;
        let bot = t.at(y1, x0, c) * (1.0 - fx) + t.at(y1, x1, c) * fx;
        top * (1.0 - fy) + bot * fy
    }))
}

/// Nearest-neighbour resampling of a trimap (keeps the three levels).
pub fn resize_trimap(trimap: &Trimap, h: usize, w: usize) -> Result<Trimap> {
    let t = trimap.as_tensor();
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("cannot resize a trimap to {h}x{w}")));
    }
    let (sy, sx) = (t.height() as f64 / h as f64, t.width() as f64 / w as f64);
    let pick = |i: usize, s: f64, max: usize| (((i as f64 + 0.5) * s) as usize).min(max - 1);
    Trimap::new(Tensor::from_fn(Shape::new(h, w, 1), |y, x, _| {
        t.at(pick(y, sy, t.height()), pick(x, sx, t.width()), 0)
    }))
}

/// Downscale so the longer edge is at most `max_edge`. Returns the image and
/// the applied scale (1 when already small enough).
pub fn resize_cap(image: &Image, max_edge: usize) -> Result<(Image, f64)> {
    if max_edge == 0 {
        return Err(Error::InvalidArgument("max_edge must be at least 1".into()));
    }
    let long = image.height().max(image.width());
    if long <= max_edge {
        return Ok((image.clone(), 1.0));
    }
    let scale = max_edge as f64 / long as f64;
    let h = ((image.height() as f64 * scale).round() as usize).max(1);
    let w = ((image.width() as f64 * scale).round() as usize).max(1);
    Ok((resize_bilinear(image, h, w)?, scale))
}

/// Concrete geometric transform applied by [`augment`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub scale: f64,
    pub flip: bool,
    /// Top-left corner of the crop in the scaled image.
    pub crop_y: usize,
    pub crop_x: usize,
    pub crop: usize,
}

pub const SCALE_RANGE: (f64, f64) = (0.75, 1.25);
pub const CROP_ATTEMPTS: usize = 10;

/// Apply `p` to every plane. When the scale differs from 1 the trimap is
/// re-derived from the rescaled mask with `trimap_cfg`; otherwise it is
/// cropped and flipped like the other planes.
pub fn apply_augment(sample: &Sample, p: &AugmentParams, trimap_cfg: &TrimapConfig) -> Result<Sample> {
    let (h, w) = scaled_dims(sample, p.scale);
    if p.crop_y + p.crop > h || p.crop_x + p.crop > w || p.crop == 0 {
        return Err(Error::InvalidArgument(format!(
            "crop {} at ({}, {}) does not fit the {h}x{w} scaled sample",
            p.crop, p.crop_y, p.crop_x
        )));
    }
    let geo = |t: &Tensor| -> Result<Tensor> {
        let t = resize_bilinear(t, h, w)?;
        let t = t.crop(p.crop_y, p.crop_x, p.crop, p.crop)?;
        Ok(if p.flip { t.flip_horizontal() } else { t })
    };
    let gt_alpha = geo(&sample.gt_alpha)?;
    let mask = binarize(&gt_alpha);
    let trimap = if (h, w) == (sample.height(), sample.width()) {
        Trimap::new(geo(sample.trimap.as_tensor())?)?
    } else {
        let full_mask = binarize(&resize_bilinear(&sample.gt_alpha, h, w)?);
        let full = generate_trimap(&full_mask, trimap_cfg)?;
        let t = full.as_tensor().crop(p.crop_y, p.crop_x, p.crop, p.crop)?;
        Trimap::new(if p.flip { t.flip_horizontal() } else { t })?
    };
    Ok(Sample {
        image: geo(&sample.image)?,
        gt_fg: geo(&sample.gt_fg)?,
        gt_bg: geo(&sample.gt_bg)?,
        gt_alpha,
        mask,
        trimap,
    })
}

fn scaled_dims(sample: &Sample, scale: f64) -> (usize, usize) {
    if scale == 1.0 {
        return (sample.height(), sample.width());
    }
    (
        ((sample.height() as f64 * scale).round() as usize).max(1),
        ((sample.width() as f64 * scale).round() as usize).max(1),
    )
}

/// Draw random augmentation parameters: scale in [`SCALE_RANGE`] (raised if
/// needed so the crop fits), horizontal flip with probability 0.5, and a
/// crop position showing at least one unknown trimap pixel, falling back to
/// the centre after [`CROP_ATTEMPTS`] tries.
pub fn sample_augment(sample: &Sample, seed: u64, crop: usize) -> Result<AugmentParams> {
    let min_dim = sample.height().min(sample.width());
    if crop == 0 || crop > min_dim {
        return Err(Error::InvalidArgument(format!(
            "crop {crop} does not fit a {}x{} sample",
            sample.height(),
            sample.width()
        )));
    }
    let mut rng = rng_for(seed, 4);
    let lo = SCALE_RANGE.0.max(crop as f64 / min_dim as f64);
    let mut scale = rng.random_range(lo..=SCALE_RANGE.1.max(lo));
    if scaled_dims(sample, scale).0 < crop || scaled_dims(sample, scale).1 < crop {
        scale = 1.0;
    }
    let flip = rng.random_bool(0.5);
    let (h, w) = scaled_dims(sample, scale);
    let unknown = if scale == 1.0 {
        sample.trimap.as_tensor().clone()
    } else {
        resize_bilinear(sample.trimap.as_tensor(), h, w)?
    };
    let has_unknown = |y0: usize, x0: usize| {
        (y0..y0 + crop).any(|y| (x0..x0 + crop).any(|x| (unknown.at(y, x, 0) - UNKNOWN).abs() < 0.25))
    };
    let (mut cy, mut cx) = ((h - crop) / 2, (w - crop) / 2);
    for _ in 0..CROP_ATTEMPTS {
        let (y0, x0) = (rng.random_range(0..=h - crop), rng.random_range(0..=w - crop));
        if has_unknown(y0, x0) {
            (cy, cx) = (y0, x0);
            break;
        }
    }
    Ok(AugmentParams {
        scale,
        flip,
        crop_y: cy,
        crop_x: cx,
        crop,
    })
}

pub fn augment(sample: &Sample, seed: u64, crop: usize, trimap_cfg: &TrimapConfig) -> Result<Sample> {
    let p = sample_augment(sample, seed, crop)?;
    apply_augment(sample, &p, trimap_cfg)
}
