//! Vessel maps: the shared representation both modalities are reduced to
//! before keypoint detection, plus centerline extraction.
//!
//! Precomputed probability maps are used verbatim. For raw photographs a
//! multi-scale Hessian ridge filter provides a classical fallback.

use serde::{Deserialize, Serialize};

use crate::error::{RegError, Result};
use crate::raster::ImageGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Octa,
    Cfp,
    Wfcfp,
    Fa,
    #[default]
    Unknown,
}

/// Per-pixel vessel probabilities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VesselMap {
    pub grid: ImageGrid,
    pub source_modality: Modality,
}

impl VesselMap {
    pub fn new(grid: ImageGrid, source_modality: Modality) -> Self {
        Self { grid, source_modality }
    }

    pub fn unknown(grid: ImageGrid) -> Self {
        Self::new(grid, Modality::Unknown)
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }
}

/// Binary centerline image (`1` = centerline pixel).
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub grid: ImageGrid,
}

/// Parameters of the ridge filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VesselnessParams {
    pub scales: Vec<f64>,
    /// Blob-vs-line sensitivity.
    pub beta: f64,
    /// Structureness normalizer, in units of scale-normalized second
    /// derivatives of `[0, 1]` intensities.
    pub gamma: f64,
}

impl Default for VesselnessParams {
    fn default() -> Self {
        Self { scales: vec![1.0, 2.0, 3.0], beta: 0.5, gamma: 15.0 }
    }
}

/// Multi-scale Frangi-style vesselness for bright tubular structures.
///
/// Per scale, the scale-normalized Hessian is computed with Gaussian
/// derivative filters (replicated borders). With eigenvalues ordered
/// `|l1| <= |l2|`, pixels with `l2 >= 0` score zero, others score
/// `exp(-Rb^2 / 2 beta^2) * (1 - exp(-S^2 / 2 gamma^2))` with
/// `Rb = l1 / l2` and `S = sqrt(l1^2 + l2^2)`. The result is the maximum
/// over scales divided by its global maximum.
pub fn enhance_vesselness(raw: &ImageGrid, params: &VesselnessParams) -> Result<VesselMap> {
    if params.scales.is_empty() {
        return Err(RegError::InvalidArgument("vesselness needs at least one scale".into()));
    }
    if params.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(RegError::InvalidArgument("vesselness scales must be positive".into()));
    }
    if !(params.beta > 0.0 && params.gamma > 0.0) {
        return Err(RegError::InvalidArgument("beta and gamma must be positive".into()));
    }
    let (w, h) = (raw.width(), raw.height());
    let mut best = vec![0.0f64; w * h];
    let two_b2 = 2.0 * params.beta * params.beta;
    let two_c2 = 2.0 * params.gamma * params.gamma;
    for &sigma in &params.scales {
        let hess = hessian(raw, sigma);
        for (i, (hxx, hxy, hyy)) in hess.into_iter().enumerate() {
            let (l1, l2) = sorted_eigenvalues(hxx, hxy, hyy);
            if l2 >= 0.0 {
                continue;
            }
            let rb = l1 / l2;
            let s2 = l1 * l1 + l2 * l2;
            let v = (-rb * rb / two_b2).exp() * (1.0 - (-s2 / two_c2).exp());
            if v > best[i] {
                best[i] = v;
            }
        }
    }
    let max = best.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        for v in &mut best {
            *v /= max;
        }
    }
    Ok(VesselMap::unknown(ImageGrid::from_fn(w, h, |x, y| best[y * w + x])))
}

/// Eigenvalues of a symmetric 2x2 matrix ordered by magnitude.
fn sorted_eigenvalues(a: f64, b: f64, d: f64) -> (f64, f64) {
    let half_tr = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (e1, e2) = (half_tr + disc, half_tr - disc);
    if e1.abs() <= e2.abs() {
        (e1, e2)
    } else {
        (e2, e1)
    }
}

/// Scale-normalized Hessian entries `(Ixx, Ixy, Iyy) * sigma^2` per pixel.
fn hessian(img: &ImageGrid, sigma: f64) -> Vec<(f64, f64, f64)> {
    let radius = (3.0 * sigma).ceil() as isize;
    let xs: Vec<f64> = (-radius..=radius).map(|i| i as f64).collect();
    let g: Vec<f64> = xs.iter().map(|x| (-x * x / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / norm).collect();
    let s2 = sigma * sigma;
    let mut d1: Vec<f64> = xs.iter().zip(&g).map(|(x, gv)| -x / s2 * gv).collect();
    let mut d2: Vec<f64> = xs.iter().zip(&g).map(|(x, gv)| (x * x / (s2 * s2) - 1.0 / s2) * gv).collect();
    // zero-mean so that constant regions produce no curvature
    let mean = d2.iter().sum::<f64>() / d2.len() as f64;
    for v in &mut d2 {
        *v -= mean;
    }
    // undo truncation loss: exact on linear and quadratic ramps
    let m1: f64 = xs.iter().zip(&d1).map(|(x, k)| -x * k).sum();
    let m2: f64 = xs.iter().zip(&d2).map(|(x, k)| x * x * k / 2.0).sum();
    d1.iter_mut().for_each(|k| *k /= m1);
    d2.iter_mut().for_each(|k| *k /= m2);

    let (w, h) = (img.width(), img.height());
    let src = img.values();
    let gx = convolve_rows(src, w, h, &g);
    let d1x = convolve_rows(src, w, h, &d1);
    let d2x = convolve_rows(src, w, h, &d2);
    let ixx = convolve_cols(&d2x, w, h, &g);
    let ixy = convolve_cols(&d1x, w, h, &d1);
    let iyy = convolve_cols(&gx, w, h, &d2);
    (0..w * h).map(|i| (ixx[i] * s2, ixy[i] * s2, iyy[i] * s2)).collect()
}

/// Horizontal convolution with replicated borders.
fn convolve_rows(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in k.iter().enumerate() {
                let sx = (x as isize - (ki as isize - r)).clamp(0, w as isize - 1) as usize;
                acc += kv * row[sx];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Vertical convolution with replicated borders.
fn convolve_cols(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in k.iter().enumerate() {
                let sy = (y as isize - (ki as isize - r)).clamp(0, h as isize - 1) as usize;
                acc += kv * src[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Circular 8-neighborhood starting north, clockwise: N, NE, E, SE, S, SW, W, NW.
pub(crate) const RING: [(isize, isize); 8] =
    [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)];

/// Iterative Zhang-Suen thinning to 8-connected, 1-pixel-wide centerlines.
///
/// Each sub-iteration collects the pixels the rule set marks for removal,
/// then removes them in raster order, re-validating every candidate
/// against the already-thinned state. The re-validation keeps small
/// components (a 2x2 block, for instance) from vanishing and makes the
/// output a fixed point of the thinning.
pub fn skeletonize(binary_map: &ImageGrid) -> Result<Skeleton> {
    if !binary_map.is_binary() {
        return Err(RegError::Contract("skeletonize requires a binary image".into()));
    }
    let (w, h) = (binary_map.width(), binary_map.height());
    let mut px: Vec<u8> = binary_map.values().iter().map(|&v| v as u8).collect();

    let mut changed = true;
    while changed {
        changed = false;
        for step in 0..2 {
            let candidates: Vec<usize> = (0..w * h)
                .filter(|&i| px[i] == 1 && zs_removable(&px, w, h, i, step))
                .collect();
            for i in candidates {
                if zs_removable(&px, w, h, i, step) {
                    px[i] = 0;
                    changed = true;
                }
            }
        }
    }
    Ok(Skeleton {
        grid: ImageGrid::from_fn(w, h, |x, y| px[y * w + x] as f64),
    })
}

fn ring_values(px: &[u8], w: usize, h: usize, i: usize) -> [u8; 8] {
    let (x, y) = ((i % w) as isize, (i / w) as isize);
    let mut out = [0u8; 8];
    for (k, (dx, dy)) in RING.iter().enumerate() {
        let (nx, ny) = (x + dx, y + dy);
        if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
            out[k] = px[ny as usize * w + nx as usize];
        }
    }
    out
}

/// Number of 0 -> 1 transitions walking the 8-neighborhood once around.
pub(crate) fn crossing_number(ring: &[u8; 8]) -> usize {
    (0..8).filter(|&k| ring[k] == 0 && ring[(k + 1) % 8] == 1).count()
}

fn zs_removable(px: &[u8], w: usize, h: usize, i: usize, step: usize) -> bool {
    let n = ring_values(px, w, h, i);
    let b: u8 = n.iter().sum();
    if !(2..=6).contains(&b) || crossing_number(&n) != 1 {
        return false;
    }
    let (p2, p4, p6, p8) = (n[0], n[2], n[4], n[6]);
    if step == 0 {
        p2 * p4 * p6 == 0 && p4 * p6 * p8 == 0
    } else {
        p2 * p4 * p8 == 0 && p2 * p6 * p8 == 0
    }
}

/// Number of 8-connected foreground components.
pub fn count_components(img: &ImageGrid) -> usize {
    let (w, h) = (img.width(), img.height());
    let mut seen = vec![false; w * h];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if seen[start] || img.values()[start] == 0.0 {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for (dx, dy) in RING {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !seen[j] && img.values()[j] != 0.0 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    count
}
