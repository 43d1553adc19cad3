//! Inverse-mapping bilinear warps and red/green vessel overlays.

use std::path::Path;

use image::{ImageFormat, RgbImage};
use rayon::prelude::*;

use crate::error::{RegError, Result};
use crate::fitting::Transform;
use crate::raster::ImageGrid;

/// Output of [`warp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Warped {
    pub image: ImageGrid,
    /// Output pixels where the transform could not be evaluated; they are
    /// left at zero.
    pub degenerate_samples: usize,
}

/// Bilinear sample; `None` outside `[0, w-1] x [0, h-1]`.
pub fn sample_bilinear(img: &ImageGrid, x: f64, y: f64) -> Option<f64> {
    let (w, h) = (img.width(), img.height());
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return None;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
    let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
    Some(top * (1.0 - fy) + bottom * fy)
}

/// Resamples `source` onto an `out_w x out_h` grid. `inverse_t` maps
/// output (target) coordinates to source coordinates; samples falling
/// outside the source are zero.
pub fn warp(source: &ImageGrid, inverse_t: &Transform, out_w: usize, out_h: usize) -> Result<Warped> {
    if out_w == 0 || out_h == 0 {
        return Err(RegError::InvalidArgument("warp output must be non-empty".into()));
    }
    let rows: Vec<(Vec<f64>, usize)> = (0..out_h)
        .into_par_iter()
        .map(|y| {
            let mut row = vec![0.0; out_w];
            let mut bad = 0;
            for (x, out) in row.iter_mut().enumerate() {
                match inverse_t.eval([x as f64, y as f64]) {
                    Ok([sx, sy]) => *out = sample_bilinear(source, sx, sy).unwrap_or(0.0),
                    Err(_) => bad += 1,
                }
            }
            (row, bad)
        })
        .collect();
    let degenerate_samples = rows.iter().map(|(_, b)| b).sum();
    let values: Vec<f64> = rows.into_iter().flat_map(|(r, _)| r).collect();
    Ok(Warped { image: ImageGrid::new(out_w, out_h, values)?, degenerate_samples })
}

/// RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlayImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[f64; 3]>,
}

impl OverlayImage {
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.rgb[y * self.width + x]
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let raw: Vec<u8> = self
            .rgb
            .iter()
            .flat_map(|px| px.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect();
        RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
            .save_with_format(path.as_ref(), ImageFormat::Png)
            .map_err(|e| RegError::Format(e.to_string()))
    }
}

/// Warped source vessels in red, target vessels in green; where both are
/// present the pixel turns yellow.
pub fn render_overlay(warped_source_vessels: &ImageGrid, target_vessels: &ImageGrid) -> Result<OverlayImage> {
    let (w, h) = (target_vessels.width(), target_vessels.height());
    if warped_source_vessels.width() != w || warped_source_vessels.height() != h {
        return Err(RegError::InvalidArgument(format!(
            "overlay inputs differ in size: {}x{} vs {w}x{h}",
            warped_source_vessels.width(),
            warped_source_vessels.height()
        )));
    }
    let rgb = warped_source_vessels
        .values()
        .iter()
        .zip(target_vessels.values())
        .map(|(&r, &g)| [r, g, 0.0])
        .collect();
    Ok(OverlayImage { width: w, height: h, rgb })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fitting::Homography;

    #[test]
    fn identity_warp_is_bit_exact() {
        let img = ImageGrid::from_fn(13, 7, |x, y| ((x * 31 + y * 17) % 97) as f64 / 96.0);
        let out = warp(&img, &Transform::identity(), 13, 7).unwrap();
        assert_eq!(out.image, img);
        assert_eq!(out.degenerate_samples, 0);
    }

    #[test]
    fn translation_moves_delta() {
        let mut img = ImageGrid::zeros(30, 20);
        img.set(4, 6, 1.0);
        // forward +10,+5 means the inverse subtracts
        let inv = Transform::homography(Homography::translation(-10.0, -5.0));
        let out = warp(&img, &inv, 30, 20).unwrap().image;
        assert_eq!(out.get(14, 11), 1.0);
        assert_eq!(out.count_foreground(), 1);
    }

    #[test]
    fn upscaling_checkerboard_interpolates() {
        let board = ImageGrid::from_fn(2, 2, |x, y| if (x + y) % 2 == 0 { 1.0 } else { 0.0 });
        let half = Homography { h: [[0.5, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 1.0]] };
        let out = warp(&board, &Transform::homography(half), 4, 4).unwrap().image;
        // hand-evaluated bilinear weights
        assert_eq!(out.get(0, 0), 1.0);
        assert_eq!(out.get(1, 0), 0.5);
        assert_eq!(out.get(1, 1), 0.5);
        assert_eq!(out.get(2, 0), 0.0);
        assert_eq!(out.get(0, 1), 0.5);
        // (1.5, 1.5) lies outside the source
        assert_eq!(out.get(3, 3), 0.0);
    }

    #[test]
    fn degenerate_pixels_are_counted() {
        let img = ImageGrid::filled(4, 4, 1.0);
        let h = Homography { h: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, -2.0]] };
        let out = warp(&img, &Transform::homography(h), 4, 4).unwrap();
        assert_eq!(out.degenerate_samples, 4);
        assert_eq!(out.image.get(2, 1), 0.0);
    }

    #[test]
    fn overlay_examples() {
        let vessels = ImageGrid::from_fn(6, 6, |x, _| if x == 2 { 1.0 } else { 0.0 });
        let o = render_overlay(&vessels, &vessels).unwrap();
        assert_eq!(o.get(2, 3), [1.0, 1.0, 0.0]);
        assert_eq!(o.get(0, 3), [0.0, 0.0, 0.0]);

        let o = render_overlay(&ImageGrid::zeros(6, 6), &vessels).unwrap();
        assert_eq!(o.get(2, 0), [0.0, 1.0, 0.0]);

        let other = ImageGrid::from_fn(6, 6, |x, _| if x == 4 { 1.0 } else { 0.0 });
        let o = render_overlay(&other, &vessels).unwrap();
        assert!(o.rgb.iter().all(|p| !(p[0] > 0.5 && p[1] > 0.5)));

        assert!(render_overlay(&ImageGrid::zeros(5, 6), &vessels).is_err());
    }
}
