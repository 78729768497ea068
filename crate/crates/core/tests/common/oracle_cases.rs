//! Randomized oracle comparisons. Each function runs a fixed number of
//! seeded cases and reports the worst disagreement it saw.

use matting::attention::{guided_pool, normalize_encoder};
use matting::metrics::{connectivity_error, largest_component};
use matting::net::fuse_with_trimap;
use matting::ops::{conv2d, sum_pool, ConvGeometry, ConvSpec};
use matting::tensor::{Shape, Tensor};
use matting::trimap::{generate_trimap, morph, MorphMode, TrimapConfig};
use rand::Rng;

use super::*;

pub const CASES: usize = 100;
pub const EXACT: f64 = 1e-10;

/// Largest absolute difference between the im2col convolution and direct
/// summation; infinite when shapes disagree.
pub fn conv_vs_direct(seed: u64, cases: usize) -> f64 {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let groups = [1, 2, 4][rng.random_range(0..3)];
        let cin = groups * rng.random_range(1..=3);
        let cout = groups * rng.random_range(1..=3);
        let k = rng.random_range(1..=4);
        let stride = rng.random_range(1..=2);
        let padding = rng.random_range(0..=k / 2 + 1);
        let geo = ConvGeometry::new(cin, cout, k)
            .with_stride(stride)
            .with_padding(padding)
            .with_groups(groups);
        let h = rng.random_range(k..=16);
        let w = rng.random_range(k..=16);
        let x = random_tensor(&mut rng, Shape::new(h, w, cin), -1.0, 1.0);
        let wts = random_vec(&mut rng, geo.weight_len(), -1.0, 1.0);
        let b = random_vec(&mut rng, cout, -1.0, 1.0);
        let fast = conv2d(&x, &ConvSpec::new(geo, wts.clone(), b.clone()).unwrap()).unwrap();
        let slow = conv_direct(&x, &geo, &wts, &b);
        worst = worst.max(fast.max_abs_diff(&slow).unwrap_or(f64::INFINITY));
    }
    worst
}

pub fn sum_pool_vs_ones_conv(seed: u64, cases: usize) -> f64 {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let c = rng.random_range(1..=4);
        let k = rng.random_range(1..=3);
        let s = rng.random_range(1..=3);
        let mut h = rng.random_range(k..=16);
        let mut w = rng.random_range(k..=16);
        if k == s {
            (h, w) = (h - h % s, w - w % s);
        }
        let x = random_tensor(&mut rng, Shape::new(h, w, c), -2.0, 2.0);
        let geo = ConvGeometry::new(c, c, k).with_padding(0).with_stride(s).with_groups(c);
        let ones = ConvSpec::new(geo, vec![1.0; geo.weight_len()], vec![0.0; c]).unwrap();
        let pooled = sum_pool(&x, k, s).unwrap();
        let conv = conv2d(&x, &ones).unwrap();
        worst = worst.max(pooled.max_abs_diff(&conv).unwrap_or(f64::INFINITY));
    }
    worst
}

/// Number of (case, mode) pairs where erosion or dilation differs from the
/// neighbourhood scan.
pub fn morphology_mismatches(seed: u64, cases: usize) -> usize {
    let mut rng = rng(seed);
    let mut bad = 0;
    for _ in 0..cases {
        let (h, w) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let bits = random_mask(&mut rng, h, w);
        let r = rng.random_range(0..=4);
        let mask = mask_tensor(&bits, h, w);
        for (mode, erode) in [(MorphMode::Erode, true), (MorphMode::Dilate, false)] {
            let got = morph(&mask, r, mode).unwrap();
            let got: Vec<bool> = got.data().iter().map(|&v| v == 1.0).collect();
            if got != morph_brute(&bits, h, w, r, erode) {
                bad += 1;
            }
        }
    }
    bad
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrimapOutcome {
    /// Masks whose trimap differs from the brute-force one.
    pub trimap_mismatches: usize,
    /// Known pixels (0 or 1 in the trimap) altered by fusion.
    pub fusion_violations: usize,
    pub known_pixels: usize,
}

pub fn trimap_vs_brute(seed: u64, cases: usize) -> TrimapOutcome {
    let mut rng = rng(seed);
    let mut out = TrimapOutcome::default();
    for _ in 0..cases {
        let (h, w) = (rng.random_range(2..=16), rng.random_range(2..=16));
        let bits = random_mask(&mut rng, h, w);
        let cfg = TrimapConfig {
            rate: rng.random_range(0.01..0.3),
            min_radius: rng.random_range(1..=2),
        };
        let tri = generate_trimap(&mask_tensor(&bits, h, w), &cfg).unwrap();
        if tri.as_tensor().data() != trimap_brute(&bits, h, w, cfg.rate, cfg.min_radius) {
            out.trimap_mismatches += 1;
        }

        let raw = random_tensor(&mut rng, Shape::new(h, w, 1), 0.0, 1.0);
        let fused = fuse_with_trimap(&raw, &tri).unwrap();
        for ((&f, &t), &r) in fused.data().iter().zip(tri.as_tensor().data()).zip(raw.data()) {
            if t == 0.5 {
                if f != r {
                    out.fusion_violations += 1;
                }
            } else {
                out.known_pixels += 1;
                if f != t {
                    out.fusion_violations += 1;
                }
            }
        }
    }
    out
}

pub fn largest_component_mismatches(seed: u64, cases: usize) -> usize {
    let mut rng = rng(seed);
    (0..cases)
        .filter(|_| {
            let (h, w) = (rng.random_range(1..=16), rng.random_range(1..=16));
            let p = rng.random_range(0.2..0.8);
            let bits: Vec<bool> = (0..h * w).map(|_| rng.random_bool(p)).collect();
            largest_component(&bits, h, w) != largest_component_oracle(&bits, h, w)
        })
        .count()
}

pub fn connectivity_vs_flood_fill(seed: u64, cases: usize) -> f64 {
    let mut rng = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let (h, w) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let pred = random_matte(&mut rng, h, w);
        let gt = random_matte(&mut rng, h, w);
        let got = connectivity_error(&pred, &gt, 0.1, 0.15).unwrap();
        let want = connectivity_oracle(pred.data(), gt.data(), h, w, 10, 0.15);
        worst = worst.max((got - want).abs());
    }
    worst
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PoolOutcome {
    /// Output values outside [min, max] of their source window.
    pub out_of_window: usize,
    pub outputs: usize,
    /// Largest deviation from the input value when pooling constant maps.
    pub constant_drift: f64,
}

/// Guided pooling on random (feature, raw map) pairs, each checked for
/// window bounds and paired with a constant feature map of the same shape.
pub fn guided_pool_bounds(seed: u64, pairs: usize) -> PoolOutcome {
    let mut rng = rng(seed);
    let mut out = PoolOutcome::default();
    for _ in 0..pairs {
        let h = 2 * rng.random_range(1..=8);
        let w = 2 * rng.random_range(1..=8);
        let c = rng.random_range(1..=4);
        let f = random_tensor(&mut rng, Shape::new(h, w, c), -5.0, 5.0);
        let raw = random_tensor(&mut rng, Shape::new(h, w, 1), -8.0, 8.0);
        let enc = normalize_encoder(&raw).unwrap();
        let pooled = guided_pool(&f, &enc).unwrap();
        for y in 0..pooled.height() {
            for x in 0..pooled.width() {
                for ch in 0..c {
                    let window = [(0, 0), (0, 1), (1, 0), (1, 1)].map(|(dy, dx)| f.at(2 * y + dy, 2 * x + dx, ch));
                    let lo = window.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let v = pooled.at(y, x, ch);
                    out.outputs += 1;
                    if v < lo - EXACT || v > hi + EXACT {
                        out.out_of_window += 1;
                    }
                }
            }
        }
        let v = rng.random_range(-3.0..3.0);
        let constant = guided_pool(&Tensor::full(Shape::new(h, w, c), v), &enc).unwrap();
        for &p in constant.data() {
            out.constant_drift = out.constant_drift.max((p - v).abs());
        }
    }
    out
}
