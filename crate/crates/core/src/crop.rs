//! Macula-centered cropping of the wide-field target image.
//!
//! The crop is a square centered on the macula whose side is twice the
//! distance from the macular center to the outer edge of the optic-disc
//! box. Coordinates found in the crop are lifted back to the full frame
//! by the crop origin.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{RegError, Result};
use crate::keypoints::Point;
use crate::raster::ImageGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiLabel {
    Macula,
    OpticDisc,
}

/// Axis-aligned region of interest in full target-frame pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiBox {
    pub label: RoiLabel,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl RoiBox {
    pub fn new(label: RoiLabel, [x_min, y_min, x_max, y_max]: [f64; 4]) -> Self {
        Self { label, x_min, y_min, x_max, y_max }
    }

    pub fn center(&self) -> Point {
        [0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max)]
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min).max(0.0) * (self.y_max - self.y_min).max(0.0)
    }

    pub fn corners(&self) -> [Point; 4] {
        [
            [self.x_min, self.y_min],
            [self.x_max, self.y_min],
            [self.x_min, self.y_max],
            [self.x_max, self.y_max],
        ]
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x_min: self.x_min + dx,
            x_max: self.x_max + dx,
            y_min: self.y_min + dy,
            y_max: self.y_max + dy,
            ..*self
        }
    }

    fn is_finite(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max].iter().all(|v| v.is_finite())
    }
}

/// The macula and optic-disc detections of one target image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiPair {
    pub macula: RoiBox,
    pub optic_disc: RoiBox,
}

#[derive(Serialize, Deserialize)]
struct RoiFile {
    macula: [f64; 4],
    optic_disc: [f64; 4],
}

impl RoiPair {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let f: RoiFile = serde_json::from_str(s)?;
        Ok(Self {
            macula: RoiBox::new(RoiLabel::Macula, f.macula),
            optic_disc: RoiBox::new(RoiLabel::OpticDisc, f.optic_disc),
        })
    }

    pub fn to_json_string(&self) -> Result<String> {
        let b = |r: &RoiBox| [r.x_min, r.y_min, r.x_max, r.y_max];
        Ok(serde_json::to_string_pretty(&RoiFile { macula: b(&self.macula), optic_disc: b(&self.optic_disc) })?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json_string()?)?;
        Ok(())
    }
}

/// How the "outer edge" of the optic disc is measured from the macula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OdEdgeRule {
    /// Farthest corner of the optic-disc box.
    #[default]
    FarthestCorner,
    /// Far boundary of the box along the ray from the macula center
    /// through the optic-disc center.
    AlongAxis,
}

/// Square crop window in the full target frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropFrame {
    pub center: Point,
    pub side: usize,
    /// Top-left corner `(x0, y0)` after clamping.
    pub origin: [usize; 2],
}

impl CropFrame {
    pub fn offset(&self) -> Point {
        [self.origin[0] as f64, self.origin[1] as f64]
    }
}

/// Distance from `center` to the optic disc's outer edge under `rule`.
pub fn od_edge_distance(center: Point, od: &RoiBox, rule: OdEdgeRule) -> f64 {
    match rule {
        OdEdgeRule::FarthestCorner => od
            .corners()
            .iter()
            .map(|c| ((c[0] - center[0]).powi(2) + (c[1] - center[1]).powi(2)).sqrt())
            .fold(0.0, f64::max),
        OdEdgeRule::AlongAxis => {
            let oc = od.center();
            let dir = [oc[0] - center[0], oc[1] - center[1]];
            let len = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt();
            if len == 0.0 {
                // macula inside the disc center: fall back to the farthest corner
                return od_edge_distance(center, od, OdEdgeRule::FarthestCorner);
            }
            let u = [dir[0] / len, dir[1] / len];
            // slab test: far intersection of the ray with the box
            let mut t_far = f64::INFINITY;
            for axis in 0..2 {
                let (lo, hi) = if axis == 0 { (od.x_min, od.x_max) } else { (od.y_min, od.y_max) };
                if u[axis].abs() > 1e-15 {
                    let t1 = (lo - center[axis]) / u[axis];
                    let t2 = (hi - center[axis]) / u[axis];
                    t_far = t_far.min(t1.max(t2));
                }
            }
            if t_far.is_finite() { t_far.max(len) } else { len }
        }
    }
}

/// Macula-centered square crop.
///
/// The side is `round(2 d)` with `d` the optic-disc edge distance. The
/// square is translated back inside the image when it overhangs, and
/// shrunk only when the side exceeds an image dimension.
pub fn compute_crop(
    macula: &RoiBox,
    od: &RoiBox,
    image_w: usize,
    image_h: usize,
    rule: OdEdgeRule,
) -> Result<CropFrame> {
    if macula.label != RoiLabel::Macula || od.label != RoiLabel::OpticDisc {
        return Err(RegError::InvalidArgument("expected a macula box and an optic-disc box".into()));
    }
    if !macula.is_finite() || !od.is_finite() {
        return Err(RegError::InvalidArgument("ROI coordinates must be finite".into()));
    }
    if macula.area() <= 0.0 {
        return Err(RegError::InvalidArgument("macula box has zero area".into()));
    }
    // a degenerate optic-disc box is accepted as a point detection
    if od.x_max < od.x_min || od.y_max < od.y_min {
        return Err(RegError::InvalidArgument("optic-disc box is inverted".into()));
    }
    if image_w == 0 || image_h == 0 {
        return Err(RegError::InvalidArgument("image dimensions must be positive".into()));
    }
    let center = macula.center();
    if !(center[0] >= 0.0 && center[0] < image_w as f64 && center[1] >= 0.0 && center[1] < image_h as f64) {
        return Err(RegError::InvalidArgument(format!(
            "macula center ({}, {}) outside the {image_w}x{image_h} image",
            center[0], center[1]
        )));
    }
    let d = od_edge_distance(center, od, rule);
    let side = ((2.0 * d).round() as usize).max(1).min(image_w).min(image_h);
    let place = |c: f64, extent: usize| -> usize {
        let start = (c - side as f64 / 2.0).round();
        start.clamp(0.0, (extent - side) as f64) as usize
    };
    Ok(CropFrame { center, side, origin: [place(center[0], image_w), place(center[1], image_h)] })
}

/// The `side x side` sub-image at the frame origin.
pub fn extract(img: &ImageGrid, frame: &CropFrame) -> Result<ImageGrid> {
    let [x0, y0] = frame.origin;
    if frame.side == 0 || x0 + frame.side > img.width() || y0 + frame.side > img.height() {
        return Err(RegError::InvalidArgument("crop frame exceeds the image".into()));
    }
    Ok(ImageGrid::from_fn(frame.side, frame.side, |i, j| img.get(x0 + i, y0 + j)))
}

/// Crop-frame point to full-frame point.
pub fn lift_to_full(pt: Point, frame: &CropFrame) -> Point {
    [pt[0] + frame.origin[0] as f64, pt[1] + frame.origin[1] as f64]
}

/// Full-frame point to crop-frame point.
pub fn lower_to_crop(pt: Point, frame: &CropFrame) -> Point {
    [pt[0] - frame.origin[0] as f64, pt[1] - frame.origin[1] as f64]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mac(b: [f64; 4]) -> RoiBox {
        RoiBox::new(RoiLabel::Macula, b)
    }
    fn od(b: [f64; 4]) -> RoiBox {
        RoiBox::new(RoiLabel::OpticDisc, b)
    }

    #[test]
    fn collinear_point_disc() {
        let f = compute_crop(
            &mac([490.0, 490.0, 510.0, 510.0]),
            &od([750.0, 500.0, 750.0, 500.0]),
            1000,
            1000,
            OdEdgeRule::FarthestCorner,
        )
        .unwrap();
        assert_eq!(f.side, 500);
        assert_eq!(f.origin, [250, 250]);
        assert_eq!(f.center, [500.0, 500.0]);
    }

    #[test]
    fn farthest_corner_and_shrink() {
        let m = mac([480.0, 480.0, 520.0, 520.0]);
        let o = od([700.0, 450.0, 800.0, 550.0]);
        let d = od_edge_distance(m.center(), &o, OdEdgeRule::FarthestCorner);
        assert!((d - (300.0f64.powi(2) + 50.0f64.powi(2)).sqrt()).abs() < 1e-12);
        let f = compute_crop(&m, &o, 1000, 1000, OdEdgeRule::FarthestCorner).unwrap();
        assert_eq!((f.side, f.origin), (608, [196, 196]));
        let f = compute_crop(&m, &o, 600, 600, OdEdgeRule::FarthestCorner).unwrap();
        assert_eq!((f.side, f.origin), (600, [0, 0]));
    }

    #[test]
    fn along_axis_reading() {
        let m = mac([480.0, 480.0, 520.0, 520.0]);
        let o = od([700.0, 450.0, 800.0, 550.0]);
        let d = od_edge_distance(m.center(), &o, OdEdgeRule::AlongAxis);
        assert!((d - 300.0).abs() < 1e-12);
    }

    #[test]
    fn translation_before_shrink() {
        // square fits but overhangs the right edge: slide left, keep side
        let f = compute_crop(
            &mac([880.0, 480.0, 920.0, 520.0]),
            &od([700.0, 500.0, 700.0, 500.0]),
            1000,
            1000,
            OdEdgeRule::FarthestCorner,
        )
        .unwrap();
        assert_eq!(f.side, 400);
        assert_eq!(f.origin, [600, 300]);
    }

    #[test]
    fn invalid_boxes() {
        let good_od = od([700.0, 450.0, 800.0, 550.0]);
        assert!(compute_crop(&mac([500.0, 500.0, 500.0, 520.0]), &good_od, 1000, 1000, OdEdgeRule::FarthestCorner).is_err());
        assert!(compute_crop(&mac([1480.0, 480.0, 1520.0, 520.0]), &good_od, 1000, 1000, OdEdgeRule::FarthestCorner).is_err());
        assert!(compute_crop(&mac([480.0, 480.0, 520.0, 520.0]), &od([800.0, 450.0, 700.0, 550.0]), 1000, 1000, OdEdgeRule::FarthestCorner).is_err());
        assert!(compute_crop(&good_od, &good_od, 1000, 1000, OdEdgeRule::FarthestCorner).is_err());
    }

    #[test]
    fn extract_examples() {
        let ramp = ImageGrid::from_fn(4, 4, |x, y| (x + 4 * y) as f64 / 15.0);
        let whole = CropFrame { center: [2.0, 2.0], side: 4, origin: [0, 0] };
        assert_eq!(extract(&ramp, &whole).unwrap(), ramp);
        let tl = extract(&ramp, &CropFrame { center: [1.0, 1.0], side: 2, origin: [0, 0] }).unwrap();
        assert_eq!(tl.values(), &[0.0, 1.0 / 15.0, 4.0 / 15.0, 5.0 / 15.0]);

        let frame = CropFrame { center: [2.0, 2.0], side: 2, origin: [1, 2] };
        let sub = extract(&ramp, &frame).unwrap();
        let mut canvas = ImageGrid::zeros(4, 4);
        canvas.paste(&sub, 1, 2);
        for j in 2..4 {
            for i in 1..3 {
                assert_eq!(canvas.get(i, j), ramp.get(i, j));
            }
        }
        let bad = CropFrame { center: [3.0, 3.0], side: 3, origin: [2, 2] };
        assert!(extract(&ramp, &bad).is_err());
    }

    #[test]
    fn lift_and_lower() {
        let zero = CropFrame { center: [0.0, 0.0], side: 10, origin: [0, 0] };
        assert_eq!(lift_to_full([3.5, 7.25], &zero), [3.5, 7.25]);
        let f = CropFrame { center: [500.0, 500.0], side: 500, origin: [250, 250] };
        assert_eq!(lift_to_full([10.0, 20.0], &f), [260.0, 270.0]);
        assert_eq!(lower_to_crop(lift_to_full([-3.25, 17.5], &f), &f), [-3.25, 17.5]);
    }

    #[test]
    fn roi_json_schema() {
        let json = r#"{"macula":[480,480,520,520],"optic_disc":[700,450,800,550]}"#;
        let rois = RoiPair::from_json_str(json).unwrap();
        assert_eq!(rois.macula.center(), [500.0, 500.0]);
        assert_eq!(rois.optic_disc.label, RoiLabel::OpticDisc);
        let back = RoiPair::from_json_str(&rois.to_json_string().unwrap()).unwrap();
        assert_eq!(back, rois);
    }
}
