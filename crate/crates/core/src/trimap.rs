//! Binary mask → bounding box → erosion/dilation → three-level trimap.
//!
//! The erosion/dilation radius scales with the object: it is a fraction of
//! the mean of the mask's bounding-box height and width.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{MaskImage, Shape, Tensor};

pub const BACKGROUND: f64 = 0.0;
pub const UNKNOWN: f64 = 0.5;
pub const FOREGROUND: f64 = 1.0;

/// Half-open pixel box: columns `x0..x1`, rows `y0..y1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrimapConfig {
    /// Radius as a fraction of the mean bounding-box dimension.
    pub rate: f64,
    pub min_radius: usize,
}

impl Default for TrimapConfig {
    fn default() -> Self {
        TrimapConfig {
            rate: 0.03,
            min_radius: 1,
        }
    }
}

impl TrimapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "trimap rate must lie in (0, 0.5), got {}",
                self.rate
            )));
        }
        if self.min_radius < 1 {
            return Err(Error::InvalidArgument("trimap min_radius must be at least 1".into()));
        }
        Ok(())
    }

    /// `max(min_radius, round(rate · (height + width) / 2))`.
    pub fn radius(&self, bbox: &BBox) -> usize {
        let mean = (bbox.height() + bbox.width()) as f64 / 2.0;
        let r = (self.rate * mean).round() as usize;
        r.max(self.min_radius)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MorphMode {
    Erode,
    Dilate,
}

/// Single-channel map restricted to the levels 0, 0.5 and 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Trimap(Tensor);

impl Trimap {
    pub fn new(values: Tensor) -> Result<Self> {
        values.check_single_channel("Trimap")?;
        if let Some(v) = values
            .data()
            .iter()
            .find(|&&v| v != BACKGROUND && v != UNKNOWN && v != FOREGROUND)
        {
            return Err(Error::OutOfRange {
                op: "Trimap",
                detail: format!("value {v} is not one of 0, 0.5, 1"),
            });
        }
        Ok(Trimap(values))
    }

    /// A trimap holding one level everywhere.
    pub fn uniform(height: usize, width: usize, level: f64) -> Result<Self> {
        Trimap::new(Tensor::full(Shape::new(height, width, 1), level))
    }

    pub fn as_tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn count(&self, level: f64) -> usize {
        self.0.data().iter().filter(|&&v| v == level).count()
    }

    /// 8-bit encoding: 0 → 0, 0.5 → 128, 1 → 255.
    pub fn to_levels(&self) -> Vec<u8> {
        self.0
            .data()
            .iter()
            .map(|&v| match v {
                v if v == FOREGROUND => 255,
                v if v == UNKNOWN => 128,
                _ => 0,
            })
            .collect()
    }

    /// Decode 8-bit levels; 127..=129 are read as the unknown level.
    pub fn from_levels(height: usize, width: usize, levels: &[u8]) -> Result<Self> {
        let data = levels
            .iter()
            .map(|&b| match b {
                0 => Ok(BACKGROUND),
                127..=129 => Ok(UNKNOWN),
                255 => Ok(FOREGROUND),
                other => Err(Error::OutOfRange {
                    op: "Trimap::from_levels",
                    detail: format!("byte {other} is not a trimap level"),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        Trimap::new(Tensor::from_vec(Shape::new(height, width, 1), data)?)
    }
}

fn is_fg(v: f64) -> bool {
    v >= 0.5
}

/// Tightest half-open box around all pixels with value at least 0.5.
pub fn mask_bbox(mask: &MaskImage) -> Result<BBox> {
    mask.check_single_channel("mask_bbox")?;
    let mut bbox: Option<BBox> = None;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if !is_fg(mask.at(y, x, 0)) {
                continue;
            }
            let b = bbox.get_or_insert(BBox {
                x0: x,
                y0: y,
                x1: x + 1,
                y1: y + 1,
            });
            b.x0 = b.x0.min(x);
            b.x1 = b.x1.max(x + 1);
            b.y1 = y + 1;
        }
    }
    bbox.ok_or(Error::EmptyObject)
}

/// One-dimensional square-window pass along rows (`horizontal`) or columns.
/// With `erode`, a pixel survives only if the whole window lies inside the
/// line and is foreground; otherwise any foreground pixel in the clipped
/// window sets it.
fn morph_pass(src: &[bool], h: usize, w: usize, r: usize, erode: bool, horizontal: bool) -> Vec<bool> {
    let (lines, len) = if horizontal { (h, w) } else { (w, h) };
    let at = |line: usize, i: usize| if horizontal { line * w + i } else { i * w + line };
    let mut out = vec![false; src.len()];
    let mut prefix = vec![0usize; len + 1];
    for line in 0..lines {
        for i in 0..len {
            prefix[i + 1] = prefix[i] + usize::from(src[at(line, i)]);
        }
        for i in 0..len {
            let lo = i.saturating_sub(r);
            let hi = (i + r + 1).min(len);
            let ones = prefix[hi] - prefix[lo];
            out[at(line, i)] = if erode {
                i >= r && i + r < len && ones == 2 * r + 1
            } else {
                ones > 0
            };
        }
    }
    out
}

/// Binary erosion or dilation with a `(2r+1) × (2r+1)` square.
///
/// Pixels outside the image count as background for erosion and are ignored
/// for dilation.
pub fn morph(mask: &MaskImage, radius: usize, mode: MorphMode) -> Result<MaskImage> {
    mask.check_single_channel("morph")?;
    let (h, w) = (mask.height(), mask.width());
    let mut bits: Vec<bool> = mask.data().iter().map(|&v| is_fg(v)).collect();
    if radius > 0 {
        let erode = mode == MorphMode::Erode;
        bits = morph_pass(&bits, h, w, radius, erode, true);
        bits = morph_pass(&bits, h, w, radius, erode, false);
    }
    Tensor::from_vec(
        mask.shape(),
        bits.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect(),
    )
}

/// Trimap from a mask at a fixed radius: eroded core → 1, dilated band → 0.5.
pub fn trimap_with_radius(mask: &MaskImage, radius: usize) -> Result<Trimap> {
    let eroded = morph(mask, radius, MorphMode::Erode)?;
    let dilated = morph(mask, radius, MorphMode::Dilate)?;
    let data = eroded
        .data()
        .iter()
        .zip(dilated.data())
        .map(|(&e, &d)| {
            if e == 1.0 {
                FOREGROUND
            } else if d == 1.0 {
                UNKNOWN
            } else {
                BACKGROUND
            }
        })
        .collect();
    Trimap::new(Tensor::from_vec(mask.shape(), data)?)
}

pub fn generate_trimap(mask: &MaskImage, cfg: &TrimapConfig) -> Result<Trimap> {
    cfg.validate()?;
    let bbox = mask_bbox(mask)?;
    trimap_with_radius(mask, cfg.radius(&bbox))
}

/// Threshold a continuous map into a binary mask.
pub fn binarize(alpha: &Tensor) -> MaskImage {
    alpha.map(|v| if is_fg(v) { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(h: usize, w: usize, on: &[(usize, usize)]) -> Tensor {
        let mut m = Tensor::zeros(Shape::new(h, w, 1));
        for &(y, x) in on {
            m.set(y, x, 0, 1.0);
        }
        m
    }

    #[test]
    fn bbox_examples() {
        let single = mask_from(8, 8, &[(3, 5)]);
        assert_eq!(
            mask_bbox(&single).unwrap(),
            BBox { x0: 5, y0: 3, x1: 6, y1: 4 }
        );
        let full = Tensor::full(Shape::new(4, 7, 1), 1.0);
        assert_eq!(
            mask_bbox(&full).unwrap(),
            BBox { x0: 0, y0: 0, x1: 7, y1: 4 }
        );
        let pair = mask_from(8, 8, &[(1, 1), (4, 6)]);
        assert_eq!(
            mask_bbox(&pair).unwrap(),
            BBox { x0: 1, y0: 1, x1: 7, y1: 5 }
        );
        assert!(matches!(
            mask_bbox(&Tensor::zeros(Shape::new(3, 3, 1))),
            Err(Error::EmptyObject)
        ));
    }

    #[test]
    fn morph_examples() {
        let m = mask_from(6, 6, &[(1, 1), (2, 4), (3, 3)]);
        assert_eq!(morph(&m, 0, MorphMode::Erode).unwrap(), m);
        assert_eq!(morph(&m, 0, MorphMode::Dilate).unwrap(), m);

        let ones = Tensor::full(Shape::new(5, 5, 1), 1.0);
        let e = morph(&ones, 1, MorphMode::Erode).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                let interior = (1..4).contains(&y) && (1..4).contains(&x);
                assert_eq!(e.at(y, x, 0), if interior { 1.0 } else { 0.0 });
            }
        }

        let dot = mask_from(5, 5, &[(2, 2)]);
        let d = morph(&dot, 1, MorphMode::Dilate).unwrap();
        assert_eq!(d.sum(), 9.0);
        assert_eq!(d.at(1, 1, 0), 1.0);
        assert_eq!(d.at(0, 2, 0), 0.0);
    }

    #[test]
    fn centered_square_trimap() {
        let mut m = Tensor::zeros(Shape::new(9, 9, 1));
        for y in 2..7 {
            for x in 2..7 {
                m.set(y, x, 0, 1.0);
            }
        }
        let cfg = TrimapConfig {
            rate: 0.1,
            min_radius: 1,
        };
        let t = generate_trimap(&m, &cfg).unwrap();
        for y in 0..9 {
            for x in 0..9 {
                let d = (y as i32 - 4).abs().max((x as i32 - 4).abs());
                let expected = match d {
                    0..=1 => FOREGROUND,
                    2..=3 => UNKNOWN,
                    _ => BACKGROUND,
                };
                assert_eq!(t.as_tensor().at(y, x, 0), expected, "({y},{x})");
            }
        }
    }

    #[test]
    fn level_encoding() {
        let t = Trimap::new(Tensor::vector(vec![0.0, 0.5, 1.0]).reshape(Shape::new(1, 3, 1)).unwrap())
            .unwrap();
        assert_eq!(t.to_levels(), vec![0, 128, 255]);
        assert_eq!(Trimap::from_levels(1, 3, &[0, 127, 255]).unwrap(), t);
        assert_eq!(Trimap::from_levels(1, 3, &[0, 129, 255]).unwrap(), t);
        assert!(Trimap::from_levels(1, 1, &[64]).is_err());
        assert!(Trimap::new(Tensor::scalar(0.3)).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrimapConfig { rate: 0.0, min_radius: 1 }.validate().is_err());
        assert!(TrimapConfig { rate: 0.5, min_radius: 1 }.validate().is_err());
        assert!(TrimapConfig { rate: 0.1, min_radius: 0 }.validate().is_err());
    }
}
