//! 8-bit image files (PNG, PGM/PPM) and atomic writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};
use crate::trimap::Trimap;

/// Write `bytes` to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

/// Nearest 8-bit level of a value in `[0, 1]`.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Round every value to the nearest multiple of 1/255.
pub fn quantize_tensor(t: &Tensor) -> Tensor {
    t.map(|v| quantize(v) as f64 / 255.0)
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => Ok(ImageFormat::Png),
        Some("pgm") | Some("ppm") | Some("pnm") => Ok(ImageFormat::Pnm),
        _ => Err(Error::InvalidArgument(format!(
            "{}: unsupported image extension (use .png, .pgm or .ppm)",
            path.display()
        ))),
    }
}

fn encode(path: &Path, write: impl FnOnce(&mut std::io::Cursor<Vec<u8>>, ImageFormat) -> image::ImageResult<()>) -> Result<()> {
    let format = format_for(path)?;
    let mut buf = std::io::Cursor::new(Vec::new());
    write(&mut buf, format).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    write_atomic(path, &buf.into_inner())
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Image {
            path: path.to_path_buf(),
            source,
        },
    })
}

/// Write a single-channel map in `[0, 1]` as 8-bit grayscale.
pub fn write_gray(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    t.check_single_channel("write_gray")?;
    let bytes: Vec<u8> = t.data().iter().map(|&v| quantize(v)).collect();
    write_gray_bytes(path.as_ref(), t.height(), t.width(), bytes)
}

fn write_gray_bytes(path: &Path, h: usize, w: usize, bytes: Vec<u8>) -> Result<()> {
    let img = GrayImage::from_raw(w as u32, h as u32, bytes).expect("buffer sized to image");
    encode(path, |buf, f| img.write_to(buf, f))
}

pub fn read_gray(path: impl AsRef<Path>) -> Result<Tensor> {
    let img = open(path.as_ref())?.into_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    Tensor::from_vec(Shape::new(h as usize, w as usize, 1), data)
}

/// Write a three-channel image in `[0, 1]` as 8-bit RGB.
pub fn write_rgb(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    if t.channels() != 3 {
        return Err(Error::shape(
            "write_rgb",
            format!("expected 3 channels, got {}", t.shape()),
        ));
    }
    let bytes: Vec<u8> = t.data().iter().map(|&v| quantize(v)).collect();
    let img =
        RgbImage::from_raw(t.width() as u32, t.height() as u32, bytes).expect("buffer sized");
    encode(path.as_ref(), |buf, f| img.write_to(buf, f))
}

pub fn read_rgb(path: impl AsRef<Path>) -> Result<Tensor> {
    let img = open(path.as_ref())?.into_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    Tensor::from_vec(Shape::new(h as usize, w as usize, 3), data)
}

/// Write a trimap with the exact levels 0, 128 and 255.
pub fn write_trimap(path: impl AsRef<Path>, trimap: &Trimap) -> Result<()> {
    write_gray_bytes(
        path.as_ref(),
        trimap.height(),
        trimap.width(),
        trimap.to_levels(),
    )
}

pub fn read_trimap(path: impl AsRef<Path>) -> Result<Trimap> {
    let path = path.as_ref();
    let img = open(path)?.into_luma8();
    let (w, h) = img.dimensions();
    Trimap::from_levels(h as usize, w as usize, img.as_raw()).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

/// Serialize `value` as pretty JSON, atomically.
pub fn write_json<T: serde::Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}
