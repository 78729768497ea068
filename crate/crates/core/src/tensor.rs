//! Dense rank-3 tensors stored row-major as `height × width × channels`.
//!
//! Images, alpha mattes, feature maps and flattened parameter vectors all
//! share this one carrier. Parameter vectors use the shape `1 × 1 × n`.

use std::fmt;

use crate::error::{Error, Result};

/// Spatial and channel extent of a [`Tensor`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Shape {
            height,
            width,
            channels,
        }
    }

    pub const fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub const fn with_channels(&self, channels: usize) -> Self {
        Shape::new(self.height, self.width, channels)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
    /// Gradient of the most recent backward pass, same shape as `data`.
    pub grad: Option<Vec<f64>>,
}

/// Three-channel image with values in `[0, 1]`.
pub type Image = Tensor;
/// Single-channel opacity map with values in `[0, 1]`.
pub type AlphaMatte = Tensor;
/// Single-channel binary map (foreground where the value is at least 0.5).
pub type MaskImage = Tensor;

impl Tensor {
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(
                "Tensor::from_vec",
                format!("shape {shape} needs {} values, got {}", shape.len(), data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
            grad: None,
        }
    }

    /// A `1 × 1 × n` tensor holding `values`.
    pub fn vector(values: Vec<f64>) -> Self {
        Tensor {
            shape: Shape::new(1, 1, values.len()),
            data: values,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::vector(vec![value])
    }

    /// Build a tensor by evaluating `f(row, col, channel)` everywhere.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for y in 0..shape.height {
            for x in 0..shape.width {
                for c in 0..shape.channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Tensor {
            shape,
            data,
            grad: None,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.shape.width + x) * self.shape.channels + c
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.index(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, value: f64) {
        let i = self.index(y, x, c);
        self.data[i] = value;
    }

    /// The scalar value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::shape(
                "Tensor::item",
                format!("expected one element, got shape {}", self.shape),
            ));
        }
        Ok(self.data[0])
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.len() != self.data.len() {
            return Err(Error::shape(
                "Tensor::reshape",
                format!("cannot view {} as {shape}", self.shape),
            ));
        }
        self.shape = shape;
        self.grad = None;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy one channel out as a single-channel tensor.
    pub fn channel(&self, c: usize) -> Result<Tensor> {
        if c >= self.shape.channels {
            return Err(Error::shape(
                "Tensor::channel",
                format!("channel {c} out of range for {}", self.shape),
            ));
        }
        let data = self
            .data
            .chunks_exact(self.shape.channels)
            .map(|px| px[c])
            .collect();
        Ok(Tensor {
            shape: self.shape.with_channels(1),
            data,
            grad: None,
        })
    }

    /// Stack tensors of equal spatial size along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("Tensor::concat_channels", "no inputs"))?;
        let (h, w) = (first.height(), first.width());
        if let Some(bad) = parts.iter().find(|t| t.height() != h || t.width() != w) {
            return Err(Error::shape(
                "Tensor::concat_channels",
                format!("spatial mismatch {} vs {}", first.shape, bad.shape),
            ));
        }
        let channels: usize = parts.iter().map(|t| t.channels()).sum();
        let mut data = Vec::with_capacity(h * w * channels);
        for p in 0..h * w {
            for t in parts {
                let c = t.channels();
                data.extend_from_slice(&t.data[p * c..(p + 1) * c]);
            }
        }
        Ok(Tensor {
            shape: Shape::new(h, w, channels),
            data,
            grad: None,
        })
    }

    /// Copy of the window `[y0, y0+h) × [x0, x0+w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Tensor> {
        if y0 + h > self.height() || x0 + w > self.width() {
            return Err(Error::shape(
                "Tensor::crop",
                format!("window {h}x{w} at ({y0},{x0}) exceeds {}", self.shape),
            ));
        }
        let c = self.channels();
        let mut data = Vec::with_capacity(h * w * c);
        for y in y0..y0 + h {
            let start = self.index(y, x0, 0);
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Ok(Tensor {
            shape: Shape::new(h, w, c),
            data,
            grad: None,
        })
    }

    /// Zero-extend at the bottom and right edges to `h × w`.
    pub fn pad_to(&self, h: usize, w: usize) -> Result<Tensor> {
        if h < self.height() || w < self.width() {
            return Err(Error::shape(
                "Tensor::pad_to",
                format!("target {h}x{w} smaller than {}", self.shape),
            ));
        }
        let c = self.channels();
        let mut out = Tensor::zeros(Shape::new(h, w, c));
        for y in 0..self.height() {
            let src = self.index(y, 0, 0);
            let dst = out.index(y, 0, 0);
            out.data[dst..dst + self.width() * c]
                .copy_from_slice(&self.data[src..src + self.width() * c]);
        }
        Ok(out)
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Tensor {
        let (w, c) = (self.width(), self.channels());
        Tensor::from_fn(self.shape, |y, x, ch| self.data[(y * w + (w - 1 - x)) * c + ch])
    }

    /// Largest absolute elementwise difference; `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> Option<f64> {
        (self.shape == other.shape).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
    }

    pub(crate) fn check_single_channel(&self, op: &'static str) -> Result<()> {
        if self.channels() != 1 {
            return Err(Error::shape(
                op,
                format!("expected a single-channel map, got {}", self.shape),
            ));
        }
        Ok(())
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                format!("shapes differ: {} vs {}", self.shape, other.shape),
            ));
        }
        Ok(())
    }
}
