//! Junction keypoints on vessel centerlines, patch descriptors and
//! brute-force descriptor matching.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{RegError, Result};
use crate::vessel::{crossing_number, Skeleton, VesselMap, RING};

/// Planar point `[x, y]` in pixels.
pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JunctionKind {
    /// Three branches meet.
    Bifurcation,
    /// Four or more branches meet.
    Crossover,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub kind: JunctionKind,
    pub strength: f64,
}

impl Keypoint {
    pub fn position(&self) -> Point {
        [self.x, self.y]
    }
}

/// Length of the gradient-orientation descriptor: 4x4 cells, 8 bins each.
pub const DESCRIPTOR_LEN: usize = 128;
const GRID_CELLS: usize = 4;
const ORIENTATION_BINS: usize = 8;

/// Unit-length feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub vector: Vec<f64>,
}

impl Descriptor {
    pub fn len(&self) -> usize {
        self.vector.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vector.is_empty()
    }

    pub fn distance(&self, other: &Descriptor) -> f64 {
        self.vector
            .iter()
            .zip(&other.vector)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// One source-to-target point correspondence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPair {
    pub src: Point,
    pub tgt: Point,
}

/// Matched point pairs, source frame to target frame.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub pairs: Vec<PointPair>,
}

impl CorrespondenceSet {
    pub fn new(pairs: Vec<PointPair>) -> Self {
        Self { pairs }
    }

    pub fn from_points(src: &[Point], tgt: &[Point]) -> Result<Self> {
        if src.len() != tgt.len() {
            return Err(RegError::InvalidArgument(format!(
                "point lists differ in length: {} vs {}",
                src.len(),
                tgt.len()
            )));
        }
        Ok(Self::new(src.iter().zip(tgt).map(|(&s, &t)| PointPair { src: s, tgt: t }).collect()))
    }

    /// Number of pairs.
    pub fn m(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn src_points(&self) -> Vec<Point> {
        self.pairs.iter().map(|p| p.src).collect()
    }

    pub fn tgt_points(&self) -> Vec<Point> {
        self.pairs.iter().map(|p| p.tgt).collect()
    }

    /// Source and target roles exchanged.
    pub fn swapped(&self) -> Self {
        Self::new(self.pairs.iter().map(|p| PointPair { src: p.tgt, tgt: p.src }).collect())
    }

    /// Pairs whose mask entry is true.
    pub fn select(&self, mask: &[bool]) -> Self {
        Self::new(
            self.pairs
                .iter()
                .zip(mask)
                .filter(|(_, &keep)| keep)
                .map(|(p, _)| *p)
                .collect(),
        )
    }

    pub fn all_finite(&self) -> bool {
        self.pairs
            .iter()
            .all(|p| p.src.iter().chain(&p.tgt).all(|v| v.is_finite()))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let set: Self = serde_json::from_str(s)?;
        if !set.all_finite() {
            return Err(RegError::InvalidArgument("correspondence coordinates must be finite".into()));
        }
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Bifurcations and crossovers on a centerline image.
///
/// A skeleton pixel is a candidate when its crossing number is at least 3.
/// Candidates are grouped by single linkage (distance below `nms_radius`)
/// and each group is reported once at its centroid, with the group's
/// largest crossing number as strength.
pub fn detect_junctions(sk: &Skeleton, nms_radius: f64) -> Vec<Keypoint> {
    let grid = &sk.grid;
    let (w, h) = (grid.width(), grid.height());
    let mut candidates: Vec<(f64, f64, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if grid.get(x, y) == 0.0 {
                continue;
            }
            let mut ring = [0u8; 8];
            for (k, (dx, dy)) in RING.iter().enumerate() {
                ring[k] = grid
                    .get_checked(x as isize + dx, y as isize + dy)
                    .map_or(0, |v| (v != 0.0) as u8);
            }
            let cn = crossing_number(&ring);
            if cn >= 3 {
                candidates.push((x as f64, y as f64, cn));
            }
        }
    }

    let n = candidates.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let r2 = nms_radius * nms_radius;
    for i in 0..n {
        for j in i + 1..n {
            let dx = candidates[i].0 - candidates[j].0;
            let dy = candidates[i].1 - candidates[j].1;
            if dx * dx + dy * dy < r2 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }

    // groups keyed by root, in order of first appearance (raster order)
    let mut order: Vec<usize> = Vec::new();
    let mut acc: Vec<(f64, f64, usize, usize)> = vec![(0.0, 0.0, 0, 0); n];
    for i in 0..n {
        let root = find(&mut parent, i);
        if acc[root].3 == 0 {
            order.push(root);
        }
        let e = &mut acc[root];
        e.0 += candidates[i].0;
        e.1 += candidates[i].1;
        e.2 = e.2.max(candidates[i].2);
        e.3 += 1;
    }
    order
        .into_iter()
        .map(|root| {
            let (sx, sy, cn, count) = acc[root];
            Keypoint {
                x: sx / count as f64,
                y: sy / count as f64,
                kind: if cn >= 4 { JunctionKind::Crossover } else { JunctionKind::Bifurcation },
                strength: cn as f64,
            }
        })
        .collect()
}

/// Gradient-orientation histogram over the `(2r+1)^2` patch centered on
/// the keypoint: a 4x4 spatial grid of 8 orientation bins. Gradient
/// magnitudes are Gaussian-weighted (sigma = half the patch side) and
/// spread linearly over neighboring cells and orientation bins. Pixels outside the map read as zero. The vector is
/// L2-normalized, clipped at 0.2 and renormalized. A patch without any
/// gradient yields the uniform vector `1/sqrt(128)`.
pub fn describe(img: &VesselMap, kp: &Keypoint, patch_radius: usize) -> Descriptor {
    let grid = &img.grid;
    let r = patch_radius.max(1) as isize;
    let side = (2 * r + 1) as f64;
    let cx = kp.x.round() as isize;
    let cy = kp.y.round() as isize;
    let at = |x: isize, y: isize| grid.get_checked(x, y).unwrap_or(0.0);
    let sigma2 = (side / 2.0).powi(2);

    let mut hist = vec![0.0f64; DESCRIPTOR_LEN];
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (cx + dx, cy + dy);
            let gx = 0.5 * (at(x + 1, y) - at(x - 1, y));
            let gy = 0.5 * (at(x, y + 1) - at(x, y - 1));
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            // SIFT-style soft assignment: Gaussian falloff from the center and
            // bilinear spreading over the four nearest spatial cells
            let weight = mag * (-((dx * dx + dy * dy) as f64) / (2.0 * sigma2)).exp();
            let u = ((dx + r) as f64 + 0.5) * GRID_CELLS as f64 / side - 0.5;
            let v = ((dy + r) as f64 + 0.5) * GRID_CELLS as f64 / side - 0.5;

            let angle = gy.atan2(gx).rem_euclid(std::f64::consts::TAU);
            let pos = angle / std::f64::consts::TAU * ORIENTATION_BINS as f64;
            let b0 = pos.floor() as usize % ORIENTATION_BINS;
            let frac = pos - pos.floor();
            let b1 = (b0 + 1) % ORIENTATION_BINS;

            let (u0, v0) = (u.floor(), v.floor());
            for (cu, wu) in [(u0, 1.0 - (u - u0)), (u0 + 1.0, u - u0)] {
                for (cv, wv) in [(v0, 1.0 - (v - v0)), (v0 + 1.0, v - v0)] {
                    if cu < 0.0 || cv < 0.0 || cu >= GRID_CELLS as f64 || cv >= GRID_CELLS as f64 {
                        continue;
                    }
                    let w = weight * wu * wv;
                    if w == 0.0 {
                        continue;
                    }
                    let cell = cv as usize * GRID_CELLS + cu as usize;
                    hist[cell * ORIENTATION_BINS + b0] += w * (1.0 - frac);
                    hist[cell * ORIENTATION_BINS + b1] += w * frac;
                }
            }
        }
    }

    if !normalize(&mut hist) {
        return Descriptor { vector: vec![1.0 / (DESCRIPTOR_LEN as f64).sqrt(); DESCRIPTOR_LEN] };
    }
    for v in &mut hist {
        *v = v.min(0.2);
    }
    normalize(&mut hist);
    Descriptor { vector: hist }
}

fn normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= 1e-12 {
        return false;
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    true
}

/// Nearest and second-nearest candidate indices and distances.
fn two_nearest(query: &Descriptor, candidates: &[(Keypoint, Descriptor)]) -> Option<(usize, f64, f64)> {
    let mut best: Option<(usize, f64)> = None;
    let mut second = f64::INFINITY;
    for (j, (_, d)) in candidates.iter().enumerate() {
        let dist = query.distance(d);
        match best {
            Some((_, b)) if dist >= b => {
                if dist < second {
                    second = dist;
                }
            }
            Some((_, b)) => {
                second = b;
                best = Some((j, dist));
            }
            None => best = Some((j, dist)),
        }
    }
    best.map(|(j, d)| (j, d, second))
}

/// Lowe's test in product form. A zero second-nearest distance means the
/// nearest neighbor is not unique, which only passes when the test is
/// disabled (`ratio >= 1`).
fn passes_ratio(nearest: f64, second: f64, ratio: f64) -> bool {
    if ratio >= 1.0 {
        return true;
    }
    if second == 0.0 {
        return false;
    }
    nearest <= ratio * second
}

/// Brute-force L2 matching.
///
/// Each source descriptor is paired with its nearest target descriptor
/// if the nearest/second-nearest distance ratio is at most `ratio`. With
/// `cross_check`, the pair must also be mutually nearest and pass the
/// ratio test from the target side, which makes the result symmetric
/// under swapping the inputs. Ties go to the lower index.
pub fn match_bruteforce(
    src: &[(Keypoint, Descriptor)],
    tgt: &[(Keypoint, Descriptor)],
    ratio: f64,
    cross_check: bool,
) -> Result<CorrespondenceSet> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(RegError::InvalidArgument(format!("match ratio {ratio} outside (0, 1]")));
    }
    let len = src.first().or(tgt.first()).map(|(_, d)| d.len());
    if let Some(len) = len {
        if src.iter().chain(tgt).any(|(_, d)| d.len() != len) {
            return Err(RegError::InvalidArgument("descriptor lengths differ".into()));
        }
    }
    let mut pairs = Vec::new();
    if tgt.is_empty() {
        return Ok(CorrespondenceSet::new(pairs));
    }
    for (i, (kp, d)) in src.iter().enumerate() {
        let Some((j, nearest, second)) = two_nearest(d, tgt) else { continue };
        if !passes_ratio(nearest, second, ratio) {
            continue;
        }
        if cross_check {
            let (back, back_nearest, back_second) =
                two_nearest(&tgt[j].1, src).expect("source list is non-empty");
            if back != i || !passes_ratio(back_nearest, back_second, ratio) {
                continue;
            }
        }
        pairs.push(PointPair { src: kp.position(), tgt: tgt[j].0.position() });
    }
    Ok(CorrespondenceSet::new(pairs))
}
