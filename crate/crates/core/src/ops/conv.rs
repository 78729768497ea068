//! Grouped 2-D convolution over `H × W × C` tensors, lowered to GEMM.
//!
//! Weights are laid out `[out][ky][kx][in_per_group]`, so for a fixed output
//! channel the filter is itself a small `kh × kw × in_per_group` tensor in the
//! same row-major order as the activations.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Geometry of a convolution, without its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvGeometry {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvGeometry {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: 1,
            padding: kernel / 2,
            groups: 1,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        ConvGeometry {
            padding: 0,
            ..ConvGeometry::new(in_channels, out_channels, 1)
        }
    }

    pub fn with_stride(self, stride: usize) -> Self {
        ConvGeometry { stride, ..self }
    }

    pub fn with_padding(self, padding: usize) -> Self {
        ConvGeometry { padding, ..self }
    }

    pub fn with_groups(self, groups: usize) -> Self {
        ConvGeometry { groups, ..self }
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    /// Length of one output channel's filter.
    pub fn fan_in(&self) -> usize {
        self.in_per_group() * self.kernel.0 * self.kernel.1
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.fan_in()
    }

    pub fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        if self.groups == 0 || self.stride == 0 || kh == 0 || kw == 0 {
            return Err(Error::InvalidArgument(format!(
                "convolution needs positive groups, stride and kernel: {self:?}"
            )));
        }
        if !self.in_channels.is_multiple_of(self.groups) || !self.out_channels.is_multiple_of(self.groups) {
            return Err(Error::InvalidArgument(format!(
                "{} input / {} output channels not divisible by {} groups",
                self.in_channels, self.out_channels, self.groups
            )));
        }
        Ok(())
    }

    /// Output shape for an input of `shape`, rejecting channel mismatches
    /// and inputs too small for a single kernel placement.
    pub fn output_shape(&self, shape: Shape) -> Result<Shape> {
        self.validate()?;
        if shape.channels != self.in_channels {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "input {shape} has {} channels, convolution expects {}",
                    shape.channels, self.in_channels
                ),
            ));
        }
        let (kh, kw) = self.kernel;
        let ph = shape.height + 2 * self.padding;
        let pw = shape.width + 2 * self.padding;
        if ph < kh || pw < kw {
            return Err(Error::shape(
                "conv2d",
                format!("padded input {ph}x{pw} smaller than kernel {kh}x{kw}"),
            ));
        }
        Ok(Shape::new(
            (ph - kh) / self.stride + 1,
            (pw - kw) / self.stride + 1,
            self.out_channels,
        ))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == 1 && self.padding == 0
    }
}

/// A convolution together with its weights and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    pub geometry: ConvGeometry,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvSpec {
    pub fn new(geometry: ConvGeometry, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        geometry.validate()?;
        if weights.len() != geometry.weight_len() {
            return Err(Error::shape(
                "ConvSpec",
                format!(
                    "expected {} weights, got {}",
                    geometry.weight_len(),
                    weights.len()
                ),
            ));
        }
        if bias.len() != geometry.out_channels {
            return Err(Error::shape(
                "ConvSpec",
                format!(
                    "expected {} biases, got {}",
                    geometry.out_channels,
                    bias.len()
                ),
            ));
        }
        Ok(ConvSpec {
            geometry,
            weights,
            bias,
        })
    }

    pub fn zeros(geometry: ConvGeometry) -> Result<Self> {
        ConvSpec::new(
            geometry,
            vec![0.0; geometry.weight_len()],
            vec![0.0; geometry.out_channels],
        )
    }
}

/// Convolve `x` with `spec` (zero padding, grouped channels).
pub fn conv2d(x: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    conv2d_forward(x, &spec.geometry, &spec.weights, &spec.bias)
}

pub(crate) fn conv2d_forward(
    x: &Tensor,
    geo: &ConvGeometry,
    weights: &[f64],
    bias: &[f64],
) -> Result<Tensor> {
    let out_shape = geo.output_shape(x.shape())?;
    if weights.len() != geo.weight_len() || bias.len() != geo.out_channels {
        return Err(Error::shape(
            "conv2d",
            format!(
                "parameters hold {} weights / {} biases, geometry needs {} / {}",
                weights.len(),
                bias.len(),
                geo.weight_len(),
                geo.out_channels
            ),
        ));
    }
    let p = out_shape.pixels();
    let k = geo.fan_in();
    let cout = geo.out_channels;
    let cin = geo.in_channels;
    let (cin_g, cout_g) = (geo.in_per_group(), geo.out_per_group());

    let mut out = vec![0.0; out_shape.len()];
    for (px, b) in out.chunks_exact_mut(cout).zip(std::iter::repeat(bias)) {
        px.copy_from_slice(b);
    }
    let mut cols = Vec::new();
    for g in 0..geo.groups {
        let (a, rsa) = if geo.is_pointwise() {
            (&x.data()[g * cin_g..], cin as isize)
        } else {
            im2col(x, geo, g, out_shape, &mut cols);
            (&cols[..], k as isize)
        };
        // out[p, g*cout_g + n] += sum_k A[p, k] * W[g*cout_g + n, k]
        unsafe {
            matrixmultiply::dgemm(
                p,
                k,
                cout_g,
                1.0,
                a.as_ptr(),
                rsa,
                1,
                weights[g * cout_g * k..].as_ptr(),
                1,
                k as isize,
                1.0,
                out[g * cout_g..].as_mut_ptr(),
                cout as isize,
                1,
            );
        }
    }
    Tensor::from_vec(out_shape, out)
}

/// Gradients of a convolution. Returns `(dx, dweights, dbias)`; `dx` is only
/// computed when `need_dx` is set.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    geo: &ConvGeometry,
    weights: &[f64],
    dy: &[f64],
    need_dx: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let out_shape = geo
        .output_shape(x.shape())
        .expect("backward geometry was validated in forward");
    let p = out_shape.pixels();
    let k = geo.fan_in();
    let cout = geo.out_channels;
    let cin = geo.in_channels;
    let (cin_g, cout_g) = (geo.in_per_group(), geo.out_per_group());

    let mut dbias = vec![0.0; cout];
    for px in dy.chunks_exact(cout) {
        for (db, &d) in dbias.iter_mut().zip(px) {
            *db += d;
        }
    }

    let mut dw = vec![0.0; geo.weight_len()];
    let mut dx = need_dx.then(|| vec![0.0; x.len()]);
    let mut cols = Vec::new();
    let mut dcols = Vec::new();
    for g in 0..geo.groups {
        let (a, rsa) = if geo.is_pointwise() {
            (&x.data()[g * cin_g..], cin as isize)
        } else {
            im2col(x, geo, g, out_shape, &mut cols);
            (&cols[..], k as isize)
        };
        // dW[g*cout_g + n, k] = sum_p A[p, k] * dY[p, g*cout_g + n]
        unsafe {
            matrixmultiply::dgemm(
                k,
                p,
                cout_g,
                1.0,
                a.as_ptr(),
                1,
                rsa,
                dy[g * cout_g..].as_ptr(),
                cout as isize,
                1,
                0.0,
                dw[g * cout_g * k..].as_mut_ptr(),
                1,
                k as isize,
            );
        }
        if let Some(dx) = dx.as_mut() {
            if geo.is_pointwise() {
                // dX[p, g*cin_g + c] = sum_n dY[p, g*cout_g + n] * W[g*cout_g + n, c]
                unsafe {
                    matrixmultiply::dgemm(
                        p,
                        cout_g,
                        k,
                        1.0,
                        dy[g * cout_g..].as_ptr(),
                        cout as isize,
                        1,
                        weights[g * cout_g * k..].as_ptr(),
                        k as isize,
                        1,
                        0.0,
                        dx[g * cin_g..].as_mut_ptr(),
                        cin as isize,
                        1,
                    );
                }
            } else {
                dcols.clear();
                dcols.resize(p * k, 0.0);
                unsafe {
                    matrixmultiply::dgemm(
                        p,
                        cout_g,
                        k,
                        1.0,
                        dy[g * cout_g..].as_ptr(),
                        cout as isize,
                        1,
                        weights[g * cout_g * k..].as_ptr(),
                        k as isize,
                        1,
                        0.0,
                        dcols.as_mut_ptr(),
                        k as isize,
                        1,
                    );
                }
                col2im(&dcols, geo, g, x.shape(), out_shape, dx);
            }
        }
    }
    (dx, dw, dbias)
}

/// Lower the input channels of group `g` into a `pixels × fan_in` matrix.
fn im2col(x: &Tensor, geo: &ConvGeometry, g: usize, out: Shape, cols: &mut Vec<f64>) {
    let (kh, kw) = geo.kernel;
    let cin = geo.in_channels;
    let cin_g = geo.in_per_group();
    let k = geo.fan_in();
    let (h, w) = (x.height() as isize, x.width() as isize);
    let pad = geo.padding as isize;
    let data = x.data();
    cols.clear();
    cols.resize(out.pixels() * k, 0.0);
    for oy in 0..out.height {
        for ox in 0..out.width {
            let row = &mut cols[(oy * out.width + ox) * k..][..k];
            let iy0 = (oy * geo.stride) as isize - pad;
            let ix0 = (ox * geo.stride) as isize - pad;
            for ky in 0..kh {
                let iy = iy0 + ky as isize;
                if iy < 0 || iy >= h {
                    continue;
                }
                for kx in 0..kw {
                    let ix = ix0 + kx as isize;
                    if ix < 0 || ix >= w {
                        continue;
                    }
                    let src = (iy as usize * w as usize + ix as usize) * cin + g * cin_g;
                    let dst = (ky * kw + kx) * cin_g;
                    row[dst..dst + cin_g].copy_from_slice(&data[src..src + cin_g]);
                }
            }
        }
    }
}

/// Scatter-add a column matrix back onto the input channels of group `g`.
fn col2im(dcols: &[f64], geo: &ConvGeometry, g: usize, input: Shape, out: Shape, dx: &mut [f64]) {
    let (kh, kw) = geo.kernel;
    let cin = geo.in_channels;
    let cin_g = geo.in_per_group();
    let k = geo.fan_in();
    let (h, w) = (input.height as isize, input.width as isize);
    let pad = geo.padding as isize;
    for oy in 0..out.height {
        for ox in 0..out.width {
            let row = &dcols[(oy * out.width + ox) * k..][..k];
            let iy0 = (oy * geo.stride) as isize - pad;
            let ix0 = (ox * geo.stride) as isize - pad;
            for ky in 0..kh {
                let iy = iy0 + ky as isize;
                if iy < 0 || iy >= h {
                    continue;
                }
                for kx in 0..kw {
                    let ix = ix0 + kx as isize;
                    if ix < 0 || ix >= w {
                        continue;
                    }
                    let dst = (iy as usize * w as usize + ix as usize) * cin + g * cin_g;
                    let src = (ky * kw + kx) * cin_g;
                    for (d, s) in dx[dst..dst + cin_g].iter_mut().zip(&row[src..src + cin_g]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_passes_value_through() {
        let x = Tensor::scalar(5.0);
        let spec = ConvSpec::new(ConvGeometry::pointwise(1, 1), vec![1.0], vec![0.0]).unwrap();
        assert_eq!(conv2d(&x, &spec).unwrap().data(), &[5.0]);
    }

    #[test]
    fn zero_weights_annihilate() {
        let x = Tensor::from_fn(Shape::new(5, 6, 4), |y, x, c| (y + 2 * x + 3 * c) as f64 - 4.0);
        let geo = ConvGeometry::new(4, 6, 3).with_groups(2);
        let out = conv2d(&x, &ConvSpec::zeros(geo).unwrap()).unwrap();
        assert_eq!(out.shape(), Shape::new(5, 6, 6));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ones_kernel_stride_two_pad_one_counts_window() {
        let x = Tensor::full(Shape::new(4, 4, 1), 1.0);
        let geo = ConvGeometry::new(1, 1, 4).with_stride(2).with_padding(1);
        let spec = ConvSpec::new(geo, vec![1.0; 16], vec![0.0]).unwrap();
        let out = conv2d(&x, &spec).unwrap();
        assert_eq!(out.shape(), Shape::new(2, 2, 1));
        assert_eq!(out.data(), &[9.0; 4]);
    }

    #[test]
    fn output_shape_law() {
        let geo = ConvGeometry::new(4, 8, 4)
            .with_stride(2)
            .with_padding(1)
            .with_groups(2);
        assert_eq!(
            geo.output_shape(Shape::new(8, 6, 4)).unwrap(),
            Shape::new(4, 3, 8)
        );
        assert_eq!(
            ConvGeometry::new(3, 2, 3)
                .with_stride(2)
                .output_shape(Shape::new(7, 7, 3))
                .unwrap(),
            Shape::new(4, 4, 2)
        );
    }

    #[test]
    fn rejects_channel_mismatch_and_bad_groups() {
        let x = Tensor::zeros(Shape::new(4, 4, 3));
        let geo = ConvGeometry::new(4, 4, 3);
        assert!(matches!(
            conv2d(&x, &ConvSpec::zeros(geo).unwrap()),
            Err(Error::Shape { .. })
        ));
        assert!(ConvSpec::zeros(ConvGeometry::new(3, 4, 3).with_groups(2)).is_err());
        assert!(ConvSpec::new(geo, vec![0.0; 3], vec![0.0; 4]).is_err());
    }

    #[test]
    fn rejects_input_smaller_than_kernel() {
        let x = Tensor::zeros(Shape::new(2, 2, 1));
        let geo = ConvGeometry::new(1, 1, 5).with_padding(0);
        assert!(conv2d(&x, &ConvSpec::zeros(geo).unwrap()).is_err());
    }
}
