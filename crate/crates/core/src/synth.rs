//! Synthetic registration problems with known ground truth.
//!
//! A problem consists of a rendered vessel tree (the source), its warp
//! under a planted transform (the target), and a correspondence set drawn
//! from the tree's branch points with controlled noise and outliers.
//! When `target_size` exceeds `image_size` the source lands in the middle
//! of a wider target frame that also carries unrelated vessels, together
//! with macula/optic-disc boxes laid out for the crop step.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::crop::{RoiBox, RoiLabel, RoiPair};
use crate::error::{RegError, Result};
use crate::fitting::{coefficient_count, invert_on_grid, Homography, Polynomial2D, Transform};
use crate::keypoints::{CorrespondenceSet, Point, PointPair};
use crate::raster::{save_png, ImageGrid};
use crate::warp::warp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Homography,
    #[default]
    Quadratic,
}

/// Generator settings. All randomness derives from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    /// Side of the square source image, pixels.
    pub image_size: usize,
    pub transform_kind: TransformKind,
    /// Quadratic kind: largest deviation of the warp from its linear part
    /// over the source image, pixels.
    pub coefficient_scale: f64,
    /// Standard deviation of the correspondence noise, pixels.
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    pub n_points: usize,
    /// Side of the square target image; `None` means same as the source.
    pub target_size: Option<usize>,
    /// Number of exact ground-truth landmark pairs for evaluation.
    pub n_gt_points: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            image_size: 1000,
            transform_kind: TransformKind::Quadratic,
            coefficient_scale: 8.0,
            noise_sigma: 0.0,
            outlier_fraction: 0.0,
            n_points: 50,
            target_size: None,
            n_gt_points: 12,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let minimal = match self.transform_kind {
            TransformKind::Homography => 4,
            TransformKind::Quadratic => coefficient_count(2),
        };
        if self.n_points < minimal {
            return Err(RegError::InvalidArgument(format!(
                "n_points {} below the minimal sample {minimal}",
                self.n_points
            )));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(RegError::InvalidArgument("outlier_fraction must lie in [0, 1)".into()));
        }
        if self.image_size < 16 {
            return Err(RegError::InvalidArgument("image_size must be at least 16".into()));
        }
        if self.target_size.is_some_and(|t| t < self.image_size) {
            return Err(RegError::InvalidArgument("target_size must be >= image_size".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.coefficient_scale >= 0.0) {
            return Err(RegError::InvalidArgument("noise and coefficient scale must be >= 0".into()));
        }
        if self.n_gt_points < 1 {
            return Err(RegError::InvalidArgument("need at least one ground-truth landmark".into()));
        }
        Ok(())
    }

    pub fn target_side(&self) -> usize {
        self.target_size.unwrap_or(self.image_size)
    }

    /// Translation that centers the source inside the target frame.
    pub fn placement(&self) -> Point {
        let d = (self.target_side() - self.image_size) as f64 / 2.0;
        [d.floor(), d.floor()]
    }
}

/// A generated problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthProblem {
    pub config: SynthConfig,
    pub source_img: ImageGrid,
    pub target_img: ImageGrid,
    /// Source frame to full target frame.
    pub gt_transform: Transform,
    pub correspondences: CorrespondenceSet,
    pub outlier_mask: Vec<bool>,
    /// Exact landmark pairs for error metrics.
    pub gt_points: CorrespondenceSet,
    /// Present for wide-field targets.
    pub rois: Option<RoiPair>,
}

// independent random streams per generation stage
const STREAM_TRANSFORM: u64 = 1;
const STREAM_TREE: u64 = 2;
const STREAM_POINTS: u64 = 3;
const STREAM_DISTRACTORS: u64 = 4;
const STREAM_LAYOUT: u64 = 5;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Bounds used when planting homographies.
pub const MAX_ROTATION_DEG: f64 = 15.0;
pub const SCALE_RANGE: (f64, f64) = (0.9, 1.1);
pub const MAX_TRANSLATION_FRACTION: f64 = 0.1;
/// Largest `|g_k| * image_size / 2` for the projective row.
pub const MAX_PROJECTIVE: f64 = 0.02;

/// Samples the planted transform in the source frame (no placement).
///
/// Homography: rotation about the image center within +-15 deg, isotropic
/// scale in [0.9, 1.1], translation up to 0.1 of the image size per axis
/// and a mild projective row. Quadratic: identity linear part plus
/// second-order terms scaled so that their largest displacement over the
/// image equals `coefficient_scale`.
pub fn plant_transform(cfg: &SynthConfig) -> Transform {
    let mut rng = rng_for(cfg.seed, STREAM_TRANSFORM);
    let s = cfg.image_size as f64;
    match cfg.transform_kind {
        TransformKind::Homography => {
            let theta = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG).to_radians();
            let scale = rng.random_range(SCALE_RANGE.0..=SCALE_RANGE.1);
            let tx = rng.random_range(-1.0..=1.0) * MAX_TRANSLATION_FRACTION * s;
            let ty = rng.random_range(-1.0..=1.0) * MAX_TRANSLATION_FRACTION * s;
            let g1 = rng.random_range(-1.0..=1.0) * MAX_PROJECTIVE / (s / 2.0);
            let g2 = rng.random_range(-1.0..=1.0) * MAX_PROJECTIVE / (s / 2.0);
            let c = s / 2.0;
            let (sn, cs) = theta.sin_cos();
            let to_center = Homography::translation(-c, -c).matrix();
            let back = Homography::translation(c + tx, c + ty).matrix();
            let rot = nalgebra::Matrix3::new(scale * cs, -scale * sn, 0.0, scale * sn, scale * cs, 0.0, 0.0, 0.0, 1.0);
            let proj = nalgebra::Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, g1, g2, 1.0);
            let h = Homography::from_matrix(back * rot * proj * to_center)
                .expect("bounded perturbation of the identity is invertible");
            Transform::homography(h)
        }
        TransformKind::Quadratic => {
            let mut p = Polynomial2D::identity(2);
            let raw: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..=1.0)).collect();
            // deviation of the pure second-order part over a grid on the image
            let dev = |u: f64, v: f64| {
                let dx = raw[0] * u * u + raw[1] * u * v + raw[2] * v * v;
                let dy = raw[3] * u * u + raw[4] * u * v + raw[5] * v * v;
                (dx * dx + dy * dy).sqrt()
            };
            let mut max_dev: f64 = 0.0;
            for gy in 0..=20 {
                for gx in 0..=20 {
                    max_dev = max_dev.max(dev(gx as f64 * s / 20.0, gy as f64 * s / 20.0));
                }
            }
            let k = if max_dev > 0.0 { cfg.coefficient_scale / max_dev } else { 0.0 };
            p.set_a(2, 0, raw[0] * k);
            p.set_a(1, 1, raw[1] * k);
            p.set_a(0, 2, raw[2] * k);
            p.set_b(2, 0, raw[3] * k);
            p.set_b(1, 1, raw[4] * k);
            p.set_b(0, 2, raw[5] * k);
            Transform::polynomial(p)
        }
    }
}

/// Straight vessel piece with a constant width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
    pub width: f64,
}

/// A random vessel tree: its segments and the points where branches split.
#[derive(Debug, Clone, PartialEq)]
pub struct VesselTree {
    pub segments: Vec<Segment>,
    pub branch_points: Vec<Point>,
}

const MAX_ROOTS: usize = 16;

/// Grows branching random-walk vessels entering from the border of a
/// `size x size` canvas. Widths shrink from 5 px at the roots to 1-2 px
/// at the finest level.
pub fn grow_vessel_tree(rng: &mut ChaCha8Rng, size: usize) -> VesselTree {
    let s = size as f64;
    let margin = 0.05 * s;
    let step_scale = (s / 400.0).sqrt().clamp(0.5, 2.0);
    let max_segments = (0.8 * s) as usize;
    let mut segments = Vec::new();
    let mut branch_points = Vec::new();

    struct Branch {
        pos: Point,
        dir: f64,
        width: f64,
        depth: usize,
    }
    let turn = Normal::new(0.0, 0.18).expect("valid sigma");
    let inside = |p: Point| p[0] >= -margin && p[1] >= -margin && p[0] <= s + margin && p[1] <= s + margin;
    // new roots keep entering from the border until the length budget is spent
    for root in 0..MAX_ROOTS {
        if segments.len() >= max_segments {
            break;
        }
        let side = (root + rng.random_range(0..4)) % 4;
        let t = rng.random_range(0.15..0.85) * s;
        let (pos, inward) = match side {
            0 => ([t, 0.0], std::f64::consts::FRAC_PI_2),
            1 => ([s - 1.0, t], std::f64::consts::PI),
            2 => ([t, s - 1.0], -std::f64::consts::FRAC_PI_2),
            _ => ([0.0, t], 0.0),
        };
        let dir = inward + rng.random_range(-0.5..0.5);
        let mut stack = vec![Branch { pos, dir, width: 5.0, depth: 0 }];
        while let Some(mut br) = stack.pop() {
            let max_steps = 40 / (br.depth + 1);
            for step in 0..max_steps {
                if segments.len() >= max_segments {
                    break;
                }
                let len = rng.random_range(10.0..20.0) * step_scale;
                br.dir += turn.sample(rng);
                let next = [br.pos[0] + len * br.dir.cos(), br.pos[1] + len * br.dir.sin()];
                segments.push(Segment { a: br.pos, b: next, width: br.width });
                br.pos = next;
                if !inside(next) {
                    break;
                }
                if step >= 1 && br.depth < 3 && rng.random_bool(0.2) {
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    let child_dir = br.dir + sign * rng.random_range(0.6..1.2);
                    let child_w = match br.depth {
                        0 => 4.0,
                        1 => 3.0,
                        _ => rng.random_range(1..=2) as f64,
                    };
                    if next[0] >= 0.0 && next[1] >= 0.0 && next[0] < s && next[1] < s {
                        branch_points.push(next);
                    }
                    stack.push(Branch { pos: next, dir: child_dir, width: child_w, depth: br.depth + 1 });
                    // the parent bends away from its child
                    br.dir -= sign * rng.random_range(0.1..0.3);
                }
            }
        }
    }
    VesselTree { segments, branch_points }
}

fn segment_distance(p: Point, seg: &Segment) -> f64 {
    let (ax, ay) = (seg.a[0], seg.a[1]);
    let (dx, dy) = (seg.b[0] - ax, seg.b[1] - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p[0] - ax) * dx + (p[1] - ay) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()
}

/// Anti-aliased rendering: pixel coverage `clamp(w/2 + 0.5 - d, 0, 1)`
/// with `d` the distance to the segment, combined by maximum.
pub fn render_segments(segments: &[Segment], width: usize, height: usize) -> ImageGrid {
    let mut img = ImageGrid::zeros(width, height);
    for seg in segments {
        let reach = seg.width / 2.0 + 1.0;
        let x_lo = (seg.a[0].min(seg.b[0]) - reach).floor().max(0.0) as usize;
        let y_lo = (seg.a[1].min(seg.b[1]) - reach).floor().max(0.0) as usize;
        let x_hi = (seg.a[0].max(seg.b[0]) + reach).ceil().min(width as f64 - 1.0);
        let y_hi = (seg.a[1].max(seg.b[1]) + reach).ceil().min(height as f64 - 1.0);
        if x_hi < 0.0 || y_hi < 0.0 {
            continue;
        }
        for y in y_lo..=y_hi as usize {
            for x in x_lo..=x_hi as usize {
                let d = segment_distance([x as f64, y as f64], seg);
                let cov = (seg.width / 2.0 + 0.5 - d).clamp(0.0, 1.0);
                if cov > img.get(x, y) {
                    img.set(x, y, cov);
                }
            }
        }
    }
    img
}

/// Draws the correspondence set: `n_points` source points (branch points
/// first, then uniform fill), mapped through `gt` with Gaussian noise
/// truncated at 3 sigma, after which `floor(outlier_fraction * n_points)`
/// randomly chosen targets are replaced by uniform points in the target
/// frame.
pub fn sample_correspondences(
    cfg: &SynthConfig,
    gt: &Transform,
    anchors: &[Point],
) -> Result<(CorrespondenceSet, Vec<bool>)> {
    let mut rng = rng_for(cfg.seed, STREAM_POINTS);
    let s = cfg.image_size as f64;
    let t_side = cfg.target_side() as f64;
    let lo = 0.02 * s;
    let hi = 0.98 * s;

    let mut src: Vec<Point> = anchors
        .iter()
        .copied()
        .filter(|p| p[0] >= lo && p[0] <= hi && p[1] >= lo && p[1] <= hi)
        .collect();
    // Fisher-Yates shuffle
    for i in (1..src.len()).rev() {
        let j = rng.random_range(0..=i);
        src.swap(i, j);
    }
    src.truncate(cfg.n_points);
    while src.len() < cfg.n_points {
        src.push([rng.random_range(lo..hi), rng.random_range(lo..hi)]);
    }

    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut pairs = Vec::with_capacity(src.len());
    for &p in &src {
        let q = gt.eval(p)?;
        let (nx, ny) = if cfg.noise_sigma > 0.0 {
            loop {
                let (nx, ny) = (noise.sample(&mut rng), noise.sample(&mut rng));
                if (nx * nx + ny * ny).sqrt() <= 3.0 * cfg.noise_sigma {
                    break (nx, ny);
                }
            }
        } else {
            (0.0, 0.0)
        };
        pairs.push(PointPair { src: p, tgt: [q[0] + nx, q[1] + ny] });
    }

    let n_out = (cfg.outlier_fraction * cfg.n_points as f64).floor() as usize;
    let mut mask = vec![false; pairs.len()];
    for i in rand::seq::index::sample(&mut rng, pairs.len(), n_out).into_vec() {
        mask[i] = true;
        pairs[i].tgt = [rng.random_range(0.0..t_side), rng.random_range(0.0..t_side)];
    }
    Ok((CorrespondenceSet::new(pairs), mask))
}

/// Exact landmark pairs spread over the source interior.
pub fn sample_gt_points(cfg: &SynthConfig, gt: &Transform) -> Result<CorrespondenceSet> {
    let mut rng = rng_for(cfg.seed, STREAM_LAYOUT);
    let s = cfg.image_size as f64;
    let mut pairs = Vec::with_capacity(cfg.n_gt_points);
    for _ in 0..cfg.n_gt_points {
        let p = [rng.random_range(0.05 * s..0.95 * s), rng.random_range(0.05 * s..0.95 * s)];
        pairs.push(PointPair { src: p, tgt: gt.eval(p)? });
    }
    Ok(CorrespondenceSet::new(pairs))
}

/// Macula box on the mapped source center and an optic-disc box beside it
/// whose farthest corner sits `0.55 * image_size` away, so the derived
/// crop is a little larger than the source footprint.
fn layout_rois(cfg: &SynthConfig, gt: &Transform) -> Result<RoiPair> {
    let mut rng = rng_for(cfg.seed, STREAM_LAYOUT ^ 0x5a);
    let s = cfg.image_size as f64;
    let c = gt.eval([s / 2.0, s / 2.0])?;
    let mh = 0.04 * s;
    let macula = RoiBox::new(RoiLabel::Macula, [c[0] - mh, c[1] - mh, c[0] + mh, c[1] + mh]);
    let d = 0.55 * s;
    let (w, h) = (0.1 * s, 0.12 * s);
    let near = (d * d - (h / 2.0).powi(2)).sqrt() - w;
    let right = rng.random_bool(0.5);
    let (x0, x1) = if right { (c[0] + near, c[0] + near + w) } else { (c[0] - near - w, c[0] - near) };
    let od = RoiBox::new(RoiLabel::OpticDisc, [x0, c[1] - h / 2.0, x1, c[1] + h / 2.0]);
    Ok(RoiPair { macula, optic_disc: od })
}

/// Builds a complete problem from `cfg`.
pub fn make_problem(cfg: &SynthConfig) -> Result<SynthProblem> {
    cfg.validate()?;
    let s = cfg.image_size;
    let t_side = cfg.target_side();
    let planted = plant_transform(cfg);
    let gt_transform = planted.with_offset(cfg.placement());

    let tree = grow_vessel_tree(&mut rng_for(cfg.seed, STREAM_TREE), s);
    let source_img = render_segments(&tree.segments, s, s);

    let inverse = invert_on_grid(&gt_transform, s, s, 3)?;
    let mut target_img = warp(&source_img, &inverse, t_side, t_side)?.image;
    let rois = if t_side > s {
        // unrelated vessels outside the source footprint
        let other = grow_vessel_tree(&mut rng_for(cfg.seed, STREAM_DISTRACTORS), t_side);
        let extra = render_segments(&other.segments, t_side, t_side);
        let pad = 0.02 * s as f64;
        for y in 0..t_side {
            for x in 0..t_side {
                let v = extra.get(x, y);
                if v == 0.0 {
                    continue;
                }
                let inside = inverse.eval([x as f64, y as f64]).is_ok_and(|[u, w]| {
                    u >= -pad && w >= -pad && u <= s as f64 + pad && w <= s as f64 + pad
                });
                if !inside && v > target_img.get(x, y) {
                    target_img.set(x, y, v);
                }
            }
        }
        Some(layout_rois(cfg, &gt_transform)?)
    } else {
        None
    };

    let (correspondences, outlier_mask) = sample_correspondences(cfg, &gt_transform, &tree.branch_points)?;
    let gt_points = sample_gt_points(cfg, &gt_transform)?;
    Ok(SynthProblem {
        config: cfg.clone(),
        source_img,
        target_img,
        gt_transform,
        correspondences,
        outlier_mask,
        gt_points,
        rois,
    })
}

/// Correspondence-only problem: no images are rendered and the source
/// points are uniform over the image.
#[derive(Debug, Clone, PartialEq)]
pub struct PointProblem {
    pub gt_transform: Transform,
    pub correspondences: CorrespondenceSet,
    pub outlier_mask: Vec<bool>,
    pub gt_points: CorrespondenceSet,
}

pub fn make_point_problem(cfg: &SynthConfig) -> Result<PointProblem> {
    cfg.validate()?;
    let gt_transform = plant_transform(cfg).with_offset(cfg.placement());
    let (correspondences, outlier_mask) = sample_correspondences(cfg, &gt_transform, &[])?;
    let gt_points = sample_gt_points(cfg, &gt_transform)?;
    Ok(PointProblem { gt_transform, correspondences, outlier_mask, gt_points })
}

/// File names used by [`export_problem`].
pub mod files {
    pub const SOURCE: &str = "source.png";
    pub const TARGET: &str = "target.png";
    pub const GT_TRANSFORM: &str = "gt_transform.json";
    pub const CORRESPONDENCES: &str = "correspondences.json";
    pub const OUTLIERS: &str = "outliers.json";
    pub const GT_POINTS: &str = "gt.json";
    pub const ROIS: &str = "rois.json";
    pub const CONFIG: &str = "config.json";
}

/// Writes a problem into `dir` (created if missing).
pub fn export_problem(problem: &SynthProblem, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    save_png(&problem.source_img, dir.join(files::SOURCE))?;
    save_png(&problem.target_img, dir.join(files::TARGET))?;
    problem.gt_transform.save(dir.join(files::GT_TRANSFORM))?;
    problem.correspondences.save(dir.join(files::CORRESPONDENCES))?;
    fs::write(dir.join(files::OUTLIERS), serde_json::to_string(&problem.outlier_mask)?)?;
    problem.gt_points.save(dir.join(files::GT_POINTS))?;
    if let Some(rois) = &problem.rois {
        rois.save(dir.join(files::ROIS))?;
    }
    fs::write(dir.join(files::CONFIG), serde_json::to_string_pretty(&problem.config)?)?;
    Ok(())
}
