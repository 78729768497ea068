//! Compositing and the training losses.
//!
//! Both losses are smoothed absolute differences, `sqrt(d² + ε²)`, averaged
//! over every pixel (and channel) of the image rather than only the trimap's
//! unknown band.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{AlphaMatte, Image, Tensor};

pub const DEFAULT_CHARBONNIER_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the alpha loss; the compositional loss gets `1 − gamma`.
    pub gamma: f64,
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 0.5,
            eps: DEFAULT_CHARBONNIER_EPS,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!(
                "loss gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "smoothing eps must be positive, got {}",
                self.eps
            )));
        }
        Ok(())
    }
}

/// Blend without range checks; shared with the autodiff tape.
pub(crate) fn blend(alpha: &Tensor, fg: &Tensor, bg: &Tensor) -> Result<Tensor> {
    alpha.check_single_channel("composite")?;
    fg.check_same_shape(bg, "composite")?;
    if alpha.height() != fg.height() || alpha.width() != fg.width() {
        return Err(Error::shape(
            "composite",
            format!("alpha {} vs layers {}", alpha.shape(), fg.shape()),
        ));
    }
    let c = fg.channels();
    let data = fg
        .data()
        .chunks_exact(c)
        .zip(bg.data().chunks_exact(c))
        .zip(alpha.data())
        .flat_map(|((f, b), &a)| (0..c).map(move |k| a * f[k] + (1.0 - a) * b[k]))
        .collect();
    Tensor::from_vec(fg.shape(), data)
}

/// `I = α·FG + (1 − α)·BG`, per pixel and channel.
pub fn composite(alpha: &AlphaMatte, fg: &Image, bg: &Image) -> Result<Image> {
    if let Some(v) = alpha.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::OutOfRange {
            op: "composite",
            detail: format!("alpha value {v} outside [0, 1]"),
        });
    }
    blend(alpha, fg, bg)
}

pub(crate) fn charbonnier_mean(x: &[f64], target: &[f64], eps: f64) -> f64 {
    let eps2 = eps * eps;
    let total: f64 = x
        .iter()
        .zip(target)
        .map(|(a, b)| ((a - b) * (a - b) + eps2).sqrt())
        .sum();
    total / x.len() as f64
}

pub(crate) fn charbonnier_mean_grad(x: &[f64], target: &[f64], eps: f64) -> Vec<f64> {
    let eps2 = eps * eps;
    let n = x.len() as f64;
    x.iter()
        .zip(target)
        .map(|(a, b)| {
            let d = a - b;
            d / (d * d + eps2).sqrt() / n
        })
        .collect()
}

pub fn alpha_loss(pred: &AlphaMatte, gt: &AlphaMatte) -> Result<f64> {
    alpha_loss_with_eps(pred, gt, DEFAULT_CHARBONNIER_EPS)
}

pub fn alpha_loss_with_eps(pred: &AlphaMatte, gt: &AlphaMatte, eps: f64) -> Result<f64> {
    pred.check_same_shape(gt, "alpha_loss")?;
    Ok(charbonnier_mean(pred.data(), gt.data(), eps))
}

/// Smoothed absolute difference between the image recomposited from `pred`
/// and the observed image.
pub fn comp_loss(pred: &AlphaMatte, fg: &Image, bg: &Image, observed: &Image) -> Result<f64> {
    comp_loss_with_eps(pred, fg, bg, observed, DEFAULT_CHARBONNIER_EPS)
}

pub fn comp_loss_with_eps(
    pred: &AlphaMatte,
    fg: &Image,
    bg: &Image,
    observed: &Image,
    eps: f64,
) -> Result<f64> {
    let recomposed = blend(pred, fg, bg)?;
    recomposed.check_same_shape(observed, "comp_loss")?;
    Ok(charbonnier_mean(recomposed.data(), observed.data(), eps))
}

pub fn total_loss(alpha_loss: f64, comp_loss: f64, cfg: &LossConfig) -> f64 {
    cfg.gamma * alpha_loss + (1.0 - cfg.gamma) * comp_loss
}
