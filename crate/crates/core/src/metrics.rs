//! Whole-image matting metrics: MSE, SAD, gradient error and connectivity
//! error, each averaged over every pixel of the image.
//!
//! The gradient and connectivity definitions follow the usual matting
//! benchmark code: Gaussian first-derivative filters (σ = 1.4, replicate
//! borders) for the gradient error; degrees of connectedness to the largest
//! 4-connected region that is opaque in both mattes, swept over thresholds
//! 0.1, 0.2, …, 1.0, for the connectivity error.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::AlphaMatte;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    pub gradient_sigma: f64,
    /// Threshold spacing of the connectivity sweep.
    pub connectivity_step: f64,
    /// Distances to the connected level below this count as fully connected.
    pub connectivity_tolerance: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            gradient_sigma: 1.4,
            connectivity_step: 0.1,
            connectivity_tolerance: 0.15,
        }
    }
}

/// Raw per-pixel means. Use [`MetricsReport::display_scaled`] for the
/// conventional ×10³ / ×10⁵ report columns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse: f64,
    pub sad: f64,
    pub grad: f64,
    pub conn: f64,
    pub pixels: usize,
}

/// Multipliers applied to (mse, sad, grad, conn) in reports.
pub const DISPLAY_SCALE: [f64; 4] = [1e3, 1e3, 1e5, 1e5];

/// Header row for metric CSV files; values are display-scaled.
pub const CSV_HEADER: &str = "method,mse (x10^-3),sad (x10^-3),grad (x10^-5),conn (x10^-5),pixels";

impl MetricsReport {
    pub fn display_scaled(&self) -> [f64; 4] {
        [
            self.mse * DISPLAY_SCALE[0],
            self.sad * DISPLAY_SCALE[1],
            self.grad * DISPLAY_SCALE[2],
            self.conn * DISPLAY_SCALE[3],
        ]
    }

    pub fn csv_row(&self, method: &str) -> String {
        let [m, s, g, c] = self.display_scaled();
        format!("{method},{m:.6},{s:.6},{g:.6},{c:.6},{}", self.pixels)
    }

    /// Unweighted mean of several reports; `pixels` is summed.
    pub fn mean(reports: &[MetricsReport]) -> MetricsReport {
        let n = reports.len().max(1) as f64;
        let mut out = MetricsReport::default();
        for r in reports {
            out.mse += r.mse / n;
            out.sad += r.sad / n;
            out.grad += r.grad / n;
            out.conn += r.conn / n;
            out.pixels += r.pixels;
        }
        out
    }
}

fn check_pair(pred: &AlphaMatte, gt: &AlphaMatte) -> Result<()> {
    pred.check_single_channel("evaluate")?;
    pred.check_same_shape(gt, "evaluate")?;
    for (name, t) in [("prediction", pred), ("ground truth", gt)] {
        if let Some(v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange {
                op: "evaluate",
                detail: format!("{name} value {v} outside [0, 1]"),
            });
        }
    }
    Ok(())
}

pub fn evaluate(pred: &AlphaMatte, gt: &AlphaMatte) -> Result<MetricsReport> {
    evaluate_with(pred, gt, &MetricsConfig::default())
}

pub fn evaluate_with(pred: &AlphaMatte, gt: &AlphaMatte, cfg: &MetricsConfig) -> Result<MetricsReport> {
    check_pair(pred, gt)?;
    let n = pred.len() as f64;
    let (mut se, mut ad) = (0.0, 0.0);
    for (p, g) in pred.data().iter().zip(gt.data()) {
        let d = p - g;
        se += d * d;
        ad += d.abs();
    }
    Ok(MetricsReport {
        mse: se / n,
        sad: ad / n,
        grad: gradient_error(pred, gt, cfg.gradient_sigma)?,
        conn: connectivity_error(pred, gt, cfg.connectivity_step, cfg.connectivity_tolerance)?,
        pixels: pred.len(),
    })
}

/// Kernel differentiating along columns: `g(row) · g'(col)`, normalized to
/// unit L2 norm.
pub fn gaussian_derivative_kernel(sigma: f64) -> (usize, Vec<f64>) {
    const EPSILON: f64 = 1e-2;
    let half = (sigma
        * (-2.0 * ((2.0 * std::f64::consts::PI).sqrt() * sigma * EPSILON).ln()).sqrt())
    .ceil() as usize;
    let size = 2 * half + 1;
    let gauss = |x: f64| (-x * x / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let dgauss = |x: f64| -x * gauss(x) / (sigma * sigma);
    let mut k = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let (u, v) = (i as f64 - half as f64, j as f64 - half as f64);
            k.push(gauss(u) * dgauss(v));
        }
    }
    let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    k.iter_mut().for_each(|v| *v /= norm);
    (half, k)
}

/// Convolution with replicate borders; `transpose` swaps the kernel axes.
fn filter(src: &[f64], h: usize, w: usize, half: usize, k: &[f64], transpose: bool) -> Vec<f64> {
    let size = 2 * half + 1;
    let hh = half as isize;
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for i in 0..size {
                for j in 0..size {
                    let kv = if transpose { k[j * size + i] } else { k[i * size + j] };
                    let sy = (y as isize - (i as isize - hh)).clamp(0, h as isize - 1) as usize;
                    let sx = (x as isize - (j as isize - hh)).clamp(0, w as isize - 1) as usize;
                    acc += kv * src[sy * w + sx];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn gradient_magnitude(t: &AlphaMatte, half: usize, k: &[f64]) -> Vec<f64> {
    let (h, w) = (t.height(), t.width());
    let gx = filter(t.data(), h, w, half, k, false);
    let gy = filter(t.data(), h, w, half, k, true);
    gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect()
}

/// Mean squared difference of Gaussian-derivative gradient magnitudes.
pub fn gradient_error(pred: &AlphaMatte, gt: &AlphaMatte, sigma: f64) -> Result<f64> {
    check_pair(pred, gt)?;
    let (half, k) = gaussian_derivative_kernel(sigma);
    let mp = gradient_magnitude(pred, half, &k);
    let mg = gradient_magnitude(gt, half, &k);
    let total: f64 = mp.iter().zip(&mg).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(total / pred.len() as f64)
}

/// Membership mask of the largest 4-connected component of `bits`. Ties go
/// to the component whose first pixel comes first in row-major order.
pub fn largest_component(bits: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut label = vec![usize::MAX; bits.len()];
    let mut best: Option<(usize, usize)> = None;
    let mut queue = VecDeque::new();
    let mut next = 0;
    for start in 0..bits.len() {
        if !bits[start] || label[start] != usize::MAX {
            continue;
        }
        label[start] = next;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if bits[j] && label[j] == usize::MAX {
                    label[j] = next;
                    queue.push_back(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
        if best.is_none_or(|(_, s)| size > s) {
            best = Some((next, size));
        }
        next += 1;
    }
    match best {
        Some((id, _)) => label.iter().map(|&l| l == id).collect(),
        None => vec![false; bits.len()],
    }
}

/// Mean absolute difference of the degrees of connectedness.
pub fn connectivity_error(pred: &AlphaMatte, gt: &AlphaMatte, step: f64, tolerance: f64) -> Result<f64> {
    check_pair(pred, gt)?;
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "connectivity step must lie in (0, 1], got {step}"
        )));
    }
    let (h, w) = (pred.height(), pred.width());
    let levels = (1.0 / step).round() as usize;
    let (p, g) = (pred.data(), gt.data());
    // Highest threshold below which each pixel stays connected; NaN = not yet disconnected.
    let mut l_map = vec![f64::NAN; p.len()];
    for i in 1..=levels {
        let t = i as f64 / levels as f64;
        let prev = (i - 1) as f64 / levels as f64;
        let bits: Vec<bool> = p.iter().zip(g).map(|(&a, &b)| a >= t && b >= t).collect();
        let omega = largest_component(&bits, h, w);
        for (l, &inside) in l_map.iter_mut().zip(&omega) {
            if l.is_nan() && !inside {
                *l = prev;
            }
        }
    }
    let phi = |a: f64, l: f64| {
        let d = a - l;
        if d >= tolerance {
            1.0 - d
        } else {
            1.0
        }
    };
    let total: f64 = l_map
        .iter()
        .zip(p.iter().zip(g))
        .map(|(&l, (&a, &b))| {
            let l = if l.is_nan() { 1.0 } else { l };
            (phi(a, l) - phi(b, l)).abs()
        })
        .sum();
    Ok(total / p.len() as f64)
}
