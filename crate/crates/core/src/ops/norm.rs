//! Group normalization: statistics per sample over channel groups.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Values cached by the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct GroupNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub fn group_norm(
    x: &Tensor,
    groups: usize,
    eps: f64,
    gamma: &[f64],
    beta: &[f64],
) -> Result<Tensor> {
    group_norm_forward(x, groups, eps, gamma, beta).map(|(y, _)| y)
}

pub(crate) fn group_norm_forward(
    x: &Tensor,
    groups: usize,
    eps: f64,
    gamma: &[f64],
    beta: &[f64],
) -> Result<(Tensor, GroupNormCache)> {
    let c = x.channels();
    if groups == 0 || !c.is_multiple_of(groups) {
        return Err(Error::InvalidArgument(format!(
            "{c} channels cannot be split into {groups} groups"
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("group norm eps must be positive, got {eps}")));
    }
    if gamma.len() != c || beta.len() != c {
        return Err(Error::shape(
            "group_norm",
            format!(
                "{c} channels but {} gamma / {} beta values",
                gamma.len(),
                beta.len()
            ),
        ));
    }
    let cg = c / groups;
    let n = (x.shape().pixels() * cg) as f64;
    let data = x.data();
    let mut mean = vec![0.0; groups];
    for px in data.chunks_exact(c) {
        for (g, m) in mean.iter_mut().enumerate() {
            *m += px[g * cg..(g + 1) * cg].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; groups];
    for px in data.chunks_exact(c) {
        for (g, v) in var.iter_mut().enumerate() {
            *v += px[g * cg..(g + 1) * cg]
                .iter()
                .map(|&a| (a - mean[g]) * (a - mean[g]))
                .sum::<f64>();
        }
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / n + eps).sqrt()).collect();

    let mut xhat = vec![0.0; data.len()];
    let mut out = vec![0.0; data.len()];
    for (i, &a) in data.iter().enumerate() {
        let ch = i % c;
        let g = ch / cg;
        let h = (a - mean[g]) * inv_std[g];
        xhat[i] = h;
        out[i] = gamma[ch] * h + beta[ch];
    }
    Ok((
        Tensor::from_vec(x.shape(), out)?,
        GroupNormCache { xhat, inv_std },
    ))
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn group_norm_backward(
    cache: &GroupNormCache,
    channels: usize,
    groups: usize,
    gamma: &[f64],
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let c = channels;
    let cg = c / groups;
    let n = (dy.len() / c * cg) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    let mut sum_dxhat = vec![0.0; groups];
    let mut sum_dxhat_xhat = vec![0.0; groups];
    for (i, (&d, &h)) in dy.iter().zip(&cache.xhat).enumerate() {
        let ch = i % c;
        let g = ch / cg;
        dgamma[ch] += d * h;
        dbeta[ch] += d;
        let dh = d * gamma[ch];
        sum_dxhat[g] += dh;
        sum_dxhat_xhat[g] += dh * h;
    }
    let dx = dy
        .iter()
        .zip(&cache.xhat)
        .enumerate()
        .map(|(i, (&d, &h))| {
            let ch = i % c;
            let g = ch / cg;
            let dh = d * gamma[ch];
            cache.inv_std[g] / n * (n * dh - sum_dxhat[g] - h * sum_dxhat_xhat[g])
        })
        .collect();
    (dx, dgamma, dbeta)
}
