//! Pointwise activations and the windowed softmax used by encoder attention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Relu => x.map(|v| v.max(0.0)),
        Activation::Sigmoid => x.map(sigmoid),
    }
}

/// Gradient of an activation given its output `y` and upstream `dy`.
pub(crate) fn activation_backward(kind: Activation, y: &[f64], dy: &[f64]) -> Vec<f64> {
    match kind {
        Activation::Relu => y
            .iter()
            .zip(dy)
            .map(|(&o, &d)| if o > 0.0 { d } else { 0.0 })
            .collect(),
        Activation::Sigmoid => y.iter().zip(dy).map(|(&s, &d)| d * s * (1.0 - s)).collect(),
    }
}

/// Softmax over each non-overlapping `window × window` block of a
/// single-channel map.
pub fn window_softmax(x: &Tensor, window: usize) -> Result<Tensor> {
    x.check_single_channel("window_softmax")?;
    if window == 0 || !x.height().is_multiple_of(window) || !x.width().is_multiple_of(window) {
        return Err(Error::shape(
            "window_softmax",
            format!("{} is not divisible into {window}x{window} windows", x.shape()),
        ));
    }
    let w = x.width();
    let mut out = vec![0.0; x.len()];
    let mut block = Vec::with_capacity(window * window);
    for by in (0..x.height()).step_by(window) {
        for bx in (0..w).step_by(window) {
            block.clear();
            for dy in 0..window {
                for dx in 0..window {
                    block.push((by + dy) * w + bx + dx);
                }
            }
            let max = block
                .iter()
                .map(|&i| x.data()[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for &i in &block {
                let e = (x.data()[i] - max).exp();
                out[i] = e;
                total += e;
            }
            for &i in &block {
                out[i] /= total;
            }
        }
    }
    Tensor::from_vec(x.shape(), out)
}

pub(crate) fn window_softmax_backward(y: &Tensor, window: usize, dy: &[f64]) -> Vec<f64> {
    let w = y.width();
    let s = y.data();
    let mut dx = vec![0.0; s.len()];
    for by in (0..y.height()).step_by(window) {
        for bx in (0..w).step_by(window) {
            let idx = (0..window * window).map(|k| (by + k / window) * w + bx + k % window);
            let dot: f64 = idx.clone().map(|i| dy[i] * s[i]).sum();
            for i in idx {
                dx[i] = s[i] * (dy[i] - dot);
            }
        }
    }
    dx
}
