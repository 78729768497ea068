//! Resampling operators: sum pooling, nearest upsampling, pixel shuffle and
//! channel-broadcast modulation by a single-channel map.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

fn pool_shape(shape: Shape, k: usize, s: usize) -> Result<Shape> {
    if k == 0 || s == 0 {
        return Err(Error::InvalidArgument(format!(
            "pooling needs positive kernel and stride, got k={k}, s={s}"
        )));
    }
    if shape.height < k || shape.width < k {
        return Err(Error::shape(
            "sum_pool",
            format!("input {shape} smaller than {k}x{k} window"),
        ));
    }
    if k == s && (!shape.height.is_multiple_of(s) || !shape.width.is_multiple_of(s)) {
        return Err(Error::shape(
            "sum_pool",
            format!("input {shape} not divisible by stride {s}"),
        ));
    }
    Ok(Shape::new(
        (shape.height - k) / s + 1,
        (shape.width - k) / s + 1,
        shape.channels,
    ))
}

/// Sum of each `k × k` window with stride `s`, per channel.
pub fn sum_pool(x: &Tensor, k: usize, s: usize) -> Result<Tensor> {
    let out_shape = pool_shape(x.shape(), k, s)?;
    let c = x.channels();
    let mut out = Tensor::zeros(out_shape);
    for oy in 0..out_shape.height {
        for ox in 0..out_shape.width {
            let dst = out.index(oy, ox, 0);
            for ky in 0..k {
                for kx in 0..k {
                    let src = x.index(oy * s + ky, ox * s + kx, 0);
                    for ch in 0..c {
                        out.data_mut()[dst + ch] += x.data()[src + ch];
                    }
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn sum_pool_backward(input: Shape, k: usize, s: usize, dy: &Tensor) -> Vec<f64> {
    let c = input.channels;
    let mut dx = vec![0.0; input.len()];
    for oy in 0..dy.height() {
        for ox in 0..dy.width() {
            let src = dy.index(oy, ox, 0);
            for ky in 0..k {
                for kx in 0..k {
                    let dst = ((oy * s + ky) * input.width + ox * s + kx) * c;
                    for ch in 0..c {
                        dx[dst + ch] += dy.data()[src + ch];
                    }
                }
            }
        }
    }
    dx
}

/// Replicate every value into a `factor × factor` block.
pub fn nearest_upsample(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::InvalidArgument("upsample factor must be at least 1".into()));
    }
    let shape = Shape::new(x.height() * factor, x.width() * factor, x.channels());
    let c = x.channels();
    let mut data = Vec::with_capacity(shape.len());
    for y in 0..shape.height {
        let row = &x.data()[(y / factor) * x.width() * c..][..x.width() * c];
        for px in row.chunks_exact(c) {
            for _ in 0..factor {
                data.extend_from_slice(px);
            }
        }
    }
    Tensor::from_vec(shape, data)
}

pub(crate) fn nearest_upsample_backward(input: Shape, factor: usize, dy: &Tensor) -> Vec<f64> {
    let c = input.channels;
    let mut dx = vec![0.0; input.len()];
    for y in 0..dy.height() {
        for x in 0..dy.width() {
            let dst = ((y / factor) * input.width + x / factor) * c;
            let src = dy.index(y, x, 0);
            for ch in 0..c {
                dx[dst + ch] += dy.data()[src + ch];
            }
        }
    }
    dx
}

/// Interleave four equally shaped maps on the 2×2 sub-lattice: map `m`
/// lands at offset `(m / 2, m % 2)` of every output block.
pub fn pixel_shuffle_compose(maps: [&Tensor; 4]) -> Result<Tensor> {
    let shape = maps[0].shape();
    if let Some(bad) = maps.iter().find(|m| m.shape() != shape) {
        return Err(Error::shape(
            "pixel_shuffle_compose",
            format!("maps differ in shape: {shape} vs {}", bad.shape()),
        ));
    }
    let out_shape = Shape::new(shape.height * 2, shape.width * 2, shape.channels);
    let c = shape.channels;
    let mut out = Tensor::zeros(out_shape);
    for (m, map) in maps.iter().enumerate() {
        let (dy, dx) = (m / 2, m % 2);
        for y in 0..shape.height {
            for x in 0..shape.width {
                let dst = out.index(2 * y + dy, 2 * x + dx, 0);
                let src = map.index(y, x, 0);
                out.data_mut()[dst..dst + c].copy_from_slice(&map.data()[src..src + c]);
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pixel_shuffle_compose`].
pub fn pixel_shuffle_decompose(x: &Tensor) -> Result<[Tensor; 4]> {
    if !x.height().is_multiple_of(2) || !x.width().is_multiple_of(2) {
        return Err(Error::shape(
            "pixel_shuffle_decompose",
            format!("{} has odd spatial dims", x.shape()),
        ));
    }
    let shape = Shape::new(x.height() / 2, x.width() / 2, x.channels());
    Ok(std::array::from_fn(|m| {
        let (oy, ox) = (m / 2, m % 2);
        Tensor::from_fn(shape, |y, xx, c| x.at(2 * y + oy, 2 * xx + ox, c))
    }))
}

/// `x ⊙ map`, with the single-channel `map` broadcast across channels.
pub fn mul_broadcast(x: &Tensor, map: &Tensor) -> Result<Tensor> {
    map.check_single_channel("mul_broadcast")?;
    if x.height() != map.height() || x.width() != map.width() {
        return Err(Error::shape(
            "mul_broadcast",
            format!("feature {} vs map {}", x.shape(), map.shape()),
        ));
    }
    let c = x.channels();
    let data = x
        .data()
        .chunks_exact(c)
        .zip(map.data())
        .flat_map(|(px, &a)| px.iter().map(move |&v| v * a))
        .collect();
    Tensor::from_vec(x.shape(), data)
}

/// Returns `(dx, dmap)`.
pub(crate) fn mul_broadcast_backward(x: &Tensor, map: &Tensor, dy: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let c = x.channels();
    let mut dx = vec![0.0; x.len()];
    let mut dmap = vec![0.0; map.len()];
    for (p, &a) in map.data().iter().enumerate() {
        for ch in 0..c {
            let i = p * c + ch;
            dx[i] = dy[i] * a;
            dmap[p] += dy[i] * x.data()[i];
        }
    }
    (dx, dmap)
}
