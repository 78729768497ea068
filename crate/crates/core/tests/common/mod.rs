//! Independent reference implementations used as test oracles. They favour
//! obviousness over speed and share no code with the library.

#![allow(dead_code)]

use matting::ops::ConvGeometry;
use matting::tensor::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: Shape, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_, _, _| rng.random_range(lo..hi))
}

pub fn random_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Convolution by direct summation over the zero-padded input.
pub fn conv_direct(x: &Tensor, geo: &ConvGeometry, w: &[f64], b: &[f64]) -> Tensor {
    let (kh, kw) = geo.kernel;
    let p = geo.padding as isize;
    let s = geo.stride;
    let oh = (x.height() + 2 * geo.padding - kh) / s + 1;
    let ow = (x.width() + 2 * geo.padding - kw) / s + 1;
    let cin_g = geo.in_channels / geo.groups;
    let cout_g = geo.out_channels / geo.groups;
    Tensor::from_fn(Shape::new(oh, ow, geo.out_channels), |oy, ox, co| {
        let group = co / cout_g;
        let mut acc = b[co];
        for ky in 0..kh {
            for kx in 0..kw {
                let iy = (oy * s + ky) as isize - p;
                let ix = (ox * s + kx) as isize - p;
                if iy < 0 || ix < 0 || iy >= x.height() as isize || ix >= x.width() as isize {
                    continue;
                }
                for ci in 0..cin_g {
                    let wi = ((co * kh + ky) * kw + kx) * cin_g + ci;
                    acc += w[wi] * x.at(iy as usize, ix as usize, group * cin_g + ci);
                }
            }
        }
        acc
    })
}

/// Erosion/dilation by scanning every pixel's full square neighbourhood.
/// Off-image neighbours count as background for erosion and are skipped for
/// dilation.
pub fn morph_brute(bits: &[bool], h: usize, w: usize, r: usize, erode: bool) -> Vec<bool> {
    let r = r as isize;
    let mut out = vec![false; bits.len()];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut all = true;
            let mut any = false;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (yy, xx) = (y + dy, x + dx);
                    let inside = yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize;
                    let v = inside && bits[(yy as usize) * w + xx as usize];
                    all &= v;
                    any |= v;
                }
            }
            out[(y as usize) * w + x as usize] = if erode { all } else { any };
        }
    }
    out
}

/// Trimap levels by brute force: bounding box → radius → erode/dilate.
pub fn trimap_brute(bits: &[bool], h: usize, w: usize, rate: f64, min_radius: usize) -> Vec<f64> {
    let (mut y0, mut y1, mut x0, mut x1) = (usize::MAX, 0, usize::MAX, 0);
    for y in 0..h {
        for x in 0..w {
            if bits[y * w + x] {
                y0 = y0.min(y);
                y1 = y1.max(y + 1);
                x0 = x0.min(x);
                x1 = x1.max(x + 1);
            }
        }
    }
    let mean_side = ((y1 - y0) + (x1 - x0)) as f64 / 2.0;
    let r = ((rate * mean_side).round() as usize).max(min_radius);
    let core = morph_brute(bits, h, w, r, true);
    let band = morph_brute(bits, h, w, r, false);
    core.iter()
        .zip(&band)
        .map(|(&c, &b)| if c { 1.0 } else if b { 0.5 } else { 0.0 })
        .collect()
}

/// Component labels by repeated min-label relaxation until a fixed point.
/// Each component ends up labelled with its smallest (first row-major)
/// pixel index.
fn propagate_labels(bits: &[bool], h: usize, w: usize) -> Vec<Option<usize>> {
    let mut label: Vec<Option<usize>> = bits
        .iter()
        .enumerate()
        .map(|(i, &b)| b.then_some(i))
        .collect();
    loop {
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let Some(mut l) = label[i] else { continue };
                let mut neighbours = Vec::with_capacity(4);
                if y > 0 {
                    neighbours.push(i - w);
                }
                if y + 1 < h {
                    neighbours.push(i + w);
                }
                if x > 0 {
                    neighbours.push(i - 1);
                }
                if x + 1 < w {
                    neighbours.push(i + 1);
                }
                for j in neighbours {
                    if let Some(m) = label[j] {
                        l = l.min(m);
                    }
                }
                if Some(l) != label[i] {
                    label[i] = Some(l);
                    changed = true;
                }
            }
        }
        if !changed {
            return label;
        }
    }
}

/// Largest component (ties to the smallest label) via label propagation.
pub fn largest_component_oracle(bits: &[bool], h: usize, w: usize) -> Vec<bool> {
    let label = propagate_labels(bits, h, w);
    let mut counts = std::collections::BTreeMap::new();
    for l in label.iter().flatten() {
        *counts.entry(*l).or_insert(0usize) += 1;
    }
    let best = counts
        .iter()
        .fold(None, |best: Option<(usize, usize)>, (&l, &c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((l, c)),
        });
    label
        .iter()
        .map(|l| best.is_some_and(|(b, _)| *l == Some(b)))
        .collect()
}

/// Connectivity error with each pixel's disconnection level found by
/// scanning every threshold.
pub fn connectivity_oracle(pred: &[f64], gt: &[f64], h: usize, w: usize, levels: usize, tol: f64) -> f64 {
    let omegas: Vec<Vec<bool>> = (1..=levels)
        .map(|i| {
            let t = i as f64 / levels as f64;
            let bits: Vec<bool> = pred.iter().zip(gt).map(|(&p, &g)| p >= t && g >= t).collect();
            largest_component_oracle(&bits, h, w)
        })
        .collect();
    let mut total = 0.0;
    for i in 0..pred.len() {
        let first_out = (0..levels).find(|&k| !omegas[k][i]);
        let l = first_out.map_or(1.0, |k| k as f64 / levels as f64);
        let phi = |a: f64| {
            let d = a - l;
            if d >= tol { 1.0 - d } else { 1.0 }
        };
        total += (phi(pred[i]) - phi(gt[i])).abs();
    }
    total / pred.len() as f64
}

/// Random binary blob mask: a few filled rectangles and discs plus noise.
pub fn random_mask(rng: &mut impl Rng, h: usize, w: usize) -> Vec<bool> {
    let mut bits = vec![false; h * w];
    for _ in 0..rng.random_range(1..=3) {
        let (cy, cx) = (rng.random_range(0..h), rng.random_range(0..w));
        let r = rng.random_range(1..=h.min(w) / 2 + 1) as isize;
        let disc = rng.random_bool(0.5);
        for y in 0..h as isize {
            for x in 0..w as isize {
                let (dy, dx) = (y - cy as isize, x - cx as isize);
                let inside = if disc { dy * dy + dx * dx <= r * r } else { dy.abs() <= r && dx.abs() <= r };
                if inside {
                    bits[y as usize * w + x as usize] = true;
                }
            }
        }
    }
    for b in bits.iter_mut() {
        if rng.random_bool(0.03) {
            *b = !*b;
        }
    }
    if !bits.iter().any(|&b| b) {
        bits[rng.random_range(0..h * w)] = true;
    }
    bits
}

pub fn mask_tensor(bits: &[bool], h: usize, w: usize) -> Tensor {
    Tensor::from_vec(
        Shape::new(h, w, 1),
        bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
    )
    .unwrap()
}

/// Matte with a mix of exact 0/1 and fractional values, quantized to tenths
/// half of the time so thresholds land exactly on values.
pub fn random_matte(rng: &mut impl Rng, h: usize, w: usize) -> Tensor {
    let tenths = rng.random_bool(0.5);
    Tensor::from_fn(Shape::new(h, w, 1), |_, _, _| match rng.random_range(0..4) {
        0 => 0.0,
        1 => 1.0,
        _ if tenths => rng.random_range(0..=10) as f64 / 10.0,
        _ => rng.random_range(0.0..1.0),
    })
}

pub mod grad_cases;
pub mod oracle_cases;
