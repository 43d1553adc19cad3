//! Grayscale rasters, PNG/PGM IO and binary morphology.
//!
//! Every downstream stage works on [`ImageGrid`], a row-major grid of
//! intensities in `[0, 1]`. Binary images use exactly `0.0` and `1.0`.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{RegError, Result};

/// Row-major raster of intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ImageGrid {
    /// Builds a grid, validating the dimensions and the value range.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(RegError::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(RegError::InvalidArgument(format!(
                "expected {} values for {width}x{height}, got {}",
                width * height,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(RegError::InvalidArgument(format!(
                "intensity {v} outside [0, 1]"
            )));
        }
        Ok(Self { width, height, values })
    }

    /// Constant image. Panics on zero dimensions or a value outside `[0, 1]`.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        assert!((0.0..=1.0).contains(&value), "intensity outside [0, 1]");
        Self { width, height, values: vec![value; width * height] }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    /// Builds an image from a per-pixel function; outputs are clamped to `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self { width, height, values }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Pixel lookup with signed coordinates; `None` outside the grid.
    #[inline]
    pub fn get_checked(&self, x: isize, y: isize) -> Option<f64> {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            None
        } else {
            Some(self.values[y as usize * self.width + x as usize])
        }
    }

    /// Sets a pixel, clamping the value to `[0, 1]`.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn count_foreground(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }

    /// `1 - v` per pixel.
    pub fn complement(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|v| 1.0 - v).collect(),
        }
    }

    /// Pixelwise `self <= other`. Dimensions must agree.
    pub fn le(&self, other: &ImageGrid) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.values.iter().zip(&other.values).all(|(a, b)| a <= b)
    }

    /// Copies `patch` into `self` with its top-left corner at `(x0, y0)`,
    /// dropping anything outside the grid.
    pub fn paste(&mut self, patch: &ImageGrid, x0: usize, y0: usize) {
        for j in 0..patch.height {
            let y = y0 + j;
            if y >= self.height {
                break;
            }
            for i in 0..patch.width {
                let x = x0 + i;
                if x >= self.width {
                    break;
                }
                self.values[y * self.width + x] = patch.get(i, j);
            }
        }
    }

    /// 8-bit quantization used by the writers.
    pub fn to_u8(&self) -> Vec<u8> {
        self.values.iter().map(|v| (v * 255.0).round() as u8).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SeShape {
    #[default]
    Square,
    Cross,
}

/// Flat structuring element centered on the origin pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuringElement {
    pub radius: usize,
    pub shape: SeShape,
}

impl Default for StructuringElement {
    fn default() -> Self {
        Self { radius: 1, shape: SeShape::Square }
    }
}

impl StructuringElement {
    pub fn new(radius: usize, shape: SeShape) -> Result<Self> {
        if radius < 1 {
            return Err(RegError::InvalidArgument("structuring element radius must be >= 1".into()));
        }
        Ok(Self { radius, shape })
    }

    pub fn square(radius: usize) -> Self {
        Self { radius: radius.max(1), shape: SeShape::Square }
    }

    pub fn cross(radius: usize) -> Self {
        Self { radius: radius.max(1), shape: SeShape::Cross }
    }

    /// Footprint offsets; symmetric under `(dx, dy) -> (-dx, -dy)`.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let r = self.radius as isize;
        let mut out = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                let keep = match self.shape {
                    SeShape::Square => true,
                    SeShape::Cross => dx == 0 || dy == 0,
                };
                if keep {
                    out.push((dx, dy));
                }
            }
        }
        out
    }
}

/// Loads a PNG or binary PGM/PNM file as a `[0, 1]` grayscale grid.
///
/// 8- and 16-bit samples are rescaled linearly by their full-scale value.
/// Color inputs are reduced to luma with weights 0.299/0.587/0.114 and
/// alpha is ignored.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)?.with_guessed_format()?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        other => {
            return Err(RegError::Format(format!(
                "{}: unsupported format {other:?} (expected PNG or PGM)",
                path.display()
            )))
        }
    }
    let img = reader
        .decode()
        .map_err(|e| RegError::Format(format!("{}: {e}", path.display())))?;
    Ok(dynamic_to_grid(&img))
}

fn dynamic_to_grid(img: &DynamicImage) -> ImageGrid {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values: Vec<f64> = match img {
        DynamicImage::ImageLuma8(g) => g.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA8(g) => {
            g.as_raw().chunks_exact(2).map(|p| p[0] as f64 / 255.0).collect()
        }
        DynamicImage::ImageLuma16(g) => g.as_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
        DynamicImage::ImageLumaA16(g) => {
            g.as_raw().chunks_exact(2).map(|p| p[0] as f64 / 65535.0).collect()
        }
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => img
            .to_rgb8()
            .as_raw()
            .chunks_exact(3)
            .map(|p| luma(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0)
            .collect(),
        _ => img
            .to_rgb16()
            .as_raw()
            .chunks_exact(3)
            .map(|p| luma(p[0] as f64, p[1] as f64, p[2] as f64) / 65535.0)
            .collect(),
    };
    ImageGrid {
        width: w,
        height: h,
        values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    }
}

#[inline]
fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Writes an 8-bit grayscale image. `.pgm`/`.pnm` extensions produce a
/// binary P5 file, anything else PNG.
pub fn save_image(img: &ImageGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    if ext == "pgm" || ext == "pnm" {
        save_pgm(img, path)
    } else {
        save_png(img, path)
    }
}

pub fn save_png(img: &ImageGrid, path: impl AsRef<Path>) -> Result<()> {
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, img.to_u8())
        .expect("buffer length matches dimensions");
    buf.save_with_format(path.as_ref(), ImageFormat::Png)
        .map_err(|e| RegError::Format(e.to_string()))
}

pub fn save_pgm(img: &ImageGrid, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", img.width, img.height)?;
    f.write_all(&img.to_u8())?;
    Ok(())
}

/// `1` where the input is `>= threshold`, else `0`.
pub fn binarize(img: &ImageGrid, threshold: f64) -> ImageGrid {
    ImageGrid {
        width: img.width,
        height: img.height,
        values: img.values.iter().map(|&v| if v >= threshold { 1.0 } else { 0.0 }).collect(),
    }
}

fn require_binary(img: &ImageGrid, op: &str) -> Result<()> {
    if img.is_binary() {
        Ok(())
    } else {
        Err(RegError::Contract(format!("{op} requires a binary image")))
    }
}

/// Shared kernel of erosion and dilation. `pad` is the value assumed for
/// pixels outside the grid; `all` selects the universal quantifier.
fn morph(img: &ImageGrid, se: &StructuringElement, pad: f64, all: bool) -> ImageGrid {
    let offsets = se.offsets();
    let (w, h) = (img.width as isize, img.height as isize);
    let mut out = vec![0.0; img.values.len()];
    for y in 0..h {
        for x in 0..w {
            let mut hit = all;
            for &(dx, dy) in &offsets {
                let v = img.get_checked(x + dx, y + dy).unwrap_or(pad);
                let on = v == 1.0;
                if all && !on {
                    hit = false;
                    break;
                }
                if !all && on {
                    hit = true;
                    break;
                }
            }
            out[(y * w + x) as usize] = if hit { 1.0 } else { 0.0 };
        }
    }
    ImageGrid { width: img.width, height: img.height, values: out }
}

/// Binary erosion; pixels outside the grid count as background.
pub fn erode(img: &ImageGrid, se: &StructuringElement) -> Result<ImageGrid> {
    require_binary(img, "erode")?;
    Ok(morph(img, se, 0.0, true))
}

/// Binary dilation; pixels outside the grid count as background.
pub fn dilate(img: &ImageGrid, se: &StructuringElement) -> Result<ImageGrid> {
    require_binary(img, "dilate")?;
    Ok(morph(img, se, 0.0, false))
}

/// Erosion with pixels outside the grid treated as foreground. This is the
/// exact dual partner of [`dilate`]:
/// `dilate(X) == erode_foreground_border(X.complement()).complement()`.
pub fn erode_foreground_border(img: &ImageGrid, se: &StructuringElement) -> Result<ImageGrid> {
    require_binary(img, "erode")?;
    Ok(morph(img, se, 1.0, true))
}

/// Erosion followed by dilation with the same element.
pub fn opening(img: &ImageGrid, se: &StructuringElement) -> Result<ImageGrid> {
    let eroded = erode(img, se)?;
    dilate(&eroded, se)
}
