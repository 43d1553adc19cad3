//! Source-to-target coordinate transforms and their estimation.
//!
//! Two model families are supported: projective homographies, fitted by
//! normalized DLT inside a RANSAC loop, and bivariate polynomials
//!
//! ```text
//! x = sum_{i+j<=n} a_ij u^i v^j
//! y = sum_{i+j<=n} b_ij u^i v^j
//! ```
//!
//! fitted by linear least squares. [`fit_ran_poly`] chains the two: RANSAC
//! with a homography model rejects outliers, then the polynomial is fitted
//! on the surviving inliers only.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{RegError, Result};
use crate::keypoints::{CorrespondenceSet, Point, PointPair};

const DEGENERATE_W: f64 = 1e-12;
/// Highest supported polynomial degree.
pub const MAX_DEGREE: usize = 15;
/// Relative singular-value floor below which a design is rank deficient.
const RANK_TOL: f64 = 1e-10;

/// 3x3 projective transform, normalized so that `h[2][2] == 1` when that
/// entry is nonzero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    pub h: [[f64; 3]; 3],
}

impl Homography {
    pub fn identity() -> Self {
        Self { h: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self { h: [[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]] }
    }

    /// Normalizes and validates a raw matrix.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(RegError::Degenerate("homography has non-finite entries".into()));
        }
        let scale = if m[(2, 2)].abs() > 1e-12 { m[(2, 2)] } else { m.norm() };
        if scale == 0.0 {
            return Err(RegError::Degenerate("zero homography".into()));
        }
        let m = m / scale;
        if m.determinant().abs() <= 1e-12 {
            return Err(RegError::Degenerate("singular homography".into()));
        }
        Ok(Self::from_matrix_unchecked(&m))
    }

    fn from_matrix_unchecked(m: &Matrix3<f64>) -> Self {
        let mut h = [[0.0; 3]; 3];
        for (r, row) in h.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = m[(r, c)];
            }
        }
        Self { h }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.h[r][c])
    }

    pub fn apply(&self, p: Point) -> Result<Point> {
        let h = &self.h;
        let w = h[2][0] * p[0] + h[2][1] * p[1] + h[2][2];
        if w.abs() < DEGENERATE_W {
            return Err(RegError::Degenerate(format!(
                "homogeneous coordinate vanishes at ({}, {})",
                p[0], p[1]
            )));
        }
        Ok([
            (h[0][0] * p[0] + h[0][1] * p[1] + h[0][2]) / w,
            (h[1][0] * p[0] + h[1][1] * p[1] + h[1][2]) / w,
        ])
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .matrix()
            .try_inverse()
            .ok_or_else(|| RegError::Degenerate("homography is not invertible".into()))?;
        Self::from_matrix(inv)
    }
}

/// Exponent pairs `(i, j)` with `i + j <= degree`, ordered by total degree
/// and then by descending `i`: `00, 10, 01, 20, 11, 02, ...`.
pub fn monomials(degree: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(coefficient_count(degree));
    for d in 0..=degree {
        for i in (0..=d).rev() {
            out.push((i, d - i));
        }
    }
    out
}

/// Accepts degrees `1..=MAX_DEGREE`.
pub fn check_degree(n: usize) -> Result<()> {
    if (1..=MAX_DEGREE).contains(&n) {
        Ok(())
    } else {
        Err(RegError::InvalidArgument(format!("polynomial degree {n} outside 1..={MAX_DEGREE}")))
    }
}

/// `(n + 1)(n + 2) / 2`, the number of coefficients per output axis.
pub fn coefficient_count(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

/// Bivariate polynomial map of total degree `degree`; coefficients follow
/// the order of [`monomials`].
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial2D {
    pub degree: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl Polynomial2D {
    pub fn new(degree: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        check_degree(degree)?;
        let k = coefficient_count(degree);
        if a.len() != k || b.len() != k {
            return Err(RegError::InvalidArgument(format!(
                "degree {degree} needs {k} coefficients per axis"
            )));
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(RegError::InvalidArgument("polynomial coefficients must be finite".into()));
        }
        Ok(Self { degree, a, b })
    }

    /// `x = u`, `y = v`.
    pub fn identity(degree: usize) -> Self {
        let degree = degree.clamp(1, MAX_DEGREE);
        let k = coefficient_count(degree);
        let mut a = vec![0.0; k];
        let mut b = vec![0.0; k];
        a[1] = 1.0;
        b[2] = 1.0;
        Self { degree, a, b }
    }

    pub fn index(&self, i: usize, j: usize) -> Option<usize> {
        if i + j > self.degree {
            return None;
        }
        let d = i + j;
        Some(d * (d + 1) / 2 + (d - i))
    }

    pub fn a_ij(&self, i: usize, j: usize) -> f64 {
        self.index(i, j).map_or(0.0, |k| self.a[k])
    }

    pub fn b_ij(&self, i: usize, j: usize) -> f64 {
        self.index(i, j).map_or(0.0, |k| self.b[k])
    }

    pub fn set_a(&mut self, i: usize, j: usize, v: f64) {
        let k = self.index(i, j).expect("exponent within degree");
        self.a[k] = v;
    }

    pub fn set_b(&mut self, i: usize, j: usize, v: f64) {
        let k = self.index(i, j).expect("exponent within degree");
        self.b[k] = v;
    }

    pub fn apply(&self, p: Point) -> Point {
        let n = self.degree;
        let mut upow = [1.0; MAX_DEGREE + 1];
        let mut vpow = [1.0; MAX_DEGREE + 1];
        for k in 1..=n {
            upow[k] = upow[k - 1] * p[0];
            vpow[k] = vpow[k - 1] * p[1];
        }
        let mut x = 0.0;
        let mut y = 0.0;
        let mut k = 0;
        for d in 0..=n {
            for i in (0..=d).rev() {
                let m = upow[i] * vpow[d - i];
                x += self.a[k] * m;
                y += self.b[k] * m;
                k += 1;
            }
        }
        [x, y]
    }
}

/// The fitted mapping before any frame offset.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Homography(Homography),
    Polynomial(Polynomial2D),
}

/// Source-to-target coordinate transform: a model followed by a constant
/// translation (the crop origin when the model was fitted in a crop).
#[derive(Debug, Clone, PartialEq)]
pub struct Transform {
    pub model: Model,
    pub offset: Point,
}

impl Transform {
    pub fn homography(h: Homography) -> Self {
        Self { model: Model::Homography(h), offset: [0.0, 0.0] }
    }

    pub fn polynomial(p: Polynomial2D) -> Self {
        Self { model: Model::Polynomial(p), offset: [0.0, 0.0] }
    }

    pub fn identity() -> Self {
        Self::homography(Homography::identity())
    }

    pub fn with_offset(mut self, offset: Point) -> Self {
        self.offset = offset;
        self
    }

    /// Maps a source point into the target frame.
    pub fn eval(&self, pt: Point) -> Result<Point> {
        let q = match &self.model {
            Model::Homography(h) => h.apply(pt)?,
            Model::Polynomial(p) => p.apply(pt),
        };
        let out = [q[0] + self.offset[0], q[1] + self.offset[1]];
        if !(out[0].is_finite() && out[1].is_finite()) {
            return Err(RegError::Degenerate("transform produced a non-finite point".into()));
        }
        Ok(out)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&TransformRepr::from(self))?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let repr: TransformRepr = serde_json::from_str(s)?;
        repr.try_into()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json_string()?)?;
        Ok(())
    }
}

fn is_zero_offset(p: &Point) -> bool {
    p[0] == 0.0 && p[1] == 0.0
}

/// On-disk form of [`Transform`].
#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum TransformRepr {
    Homography {
        h: [[f64; 3]; 3],
        #[serde(default, skip_serializing_if = "is_zero_offset")]
        offset: Point,
    },
    Polynomial {
        degree: usize,
        a: BTreeMap<String, f64>,
        b: BTreeMap<String, f64>,
        #[serde(default)]
        offset: Point,
    },
}

fn exponent_key(i: usize, j: usize, degree: usize) -> String {
    if degree <= 9 {
        format!("{i}{j}")
    } else {
        format!("{i},{j}")
    }
}

fn parse_exponent_key(key: &str) -> Option<(usize, usize)> {
    if let Some((i, j)) = key.split_once(',') {
        return Some((i.trim().parse().ok()?, j.trim().parse().ok()?));
    }
    let bytes = key.as_bytes();
    if bytes.len() == 2 && bytes.iter().all(u8::is_ascii_digit) {
        return Some(((bytes[0] - b'0') as usize, (bytes[1] - b'0') as usize));
    }
    None
}

impl From<&Transform> for TransformRepr {
    fn from(t: &Transform) -> Self {
        match &t.model {
            Model::Homography(h) => TransformRepr::Homography { h: h.h, offset: t.offset },
            Model::Polynomial(p) => {
                let mut a = BTreeMap::new();
                let mut b = BTreeMap::new();
                for (k, (i, j)) in monomials(p.degree).into_iter().enumerate() {
                    a.insert(exponent_key(i, j, p.degree), p.a[k]);
                    b.insert(exponent_key(i, j, p.degree), p.b[k]);
                }
                TransformRepr::Polynomial { degree: p.degree, a, b, offset: t.offset }
            }
        }
    }
}

impl TryFrom<TransformRepr> for Transform {
    type Error = RegError;

    fn try_from(repr: TransformRepr) -> Result<Self> {
        match repr {
            TransformRepr::Homography { h, offset } => {
                let m = Matrix3::from_fn(|r, c| h[r][c]);
                Ok(Transform::homography(Homography::from_matrix(m)?).with_offset(offset))
            }
            TransformRepr::Polynomial { degree, a, b, offset } => {
                let mut p = Polynomial2D::new(
                    degree,
                    vec![0.0; coefficient_count(degree)],
                    vec![0.0; coefficient_count(degree)],
                )?;
                for (coeffs, is_a) in [(a, true), (b, false)] {
                    for (key, v) in coeffs {
                        let (i, j) = parse_exponent_key(&key)
                            .filter(|(i, j)| i + j <= degree)
                            .ok_or_else(|| {
                                RegError::InvalidArgument(format!("bad coefficient key {key:?}"))
                            })?;
                        if is_a {
                            p.set_a(i, j, v);
                        } else {
                            p.set_b(i, j, v);
                        }
                    }
                }
                Ok(Transform::polynomial(Polynomial2D::new(p.degree, p.a, p.b)?).with_offset(offset))
            }
        }
    }
}

/// Translate-to-centroid, scale-to-mean-distance-sqrt(2) conditioning.
fn hartley_normalization(pts: &[Point]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean_dist = pts
        .iter()
        .map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let s = if mean_dist > 1e-12 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn transform_point(t: &Matrix3<f64>, p: Point) -> Point {
    let v = t * Vector3::new(p[0], p[1], 1.0);
    [v[0] / v[2], v[1] / v[2]]
}

/// Normalized DLT over all correspondences.
pub fn fit_homography_dlt(p: &CorrespondenceSet) -> Result<Homography> {
    let m = p.m();
    if m < 4 {
        return Err(RegError::InsufficientData { needed: 4, got: m });
    }
    let src = p.src_points();
    let tgt = p.tgt_points();
    let ts = hartley_normalization(&src);
    let tt = hartley_normalization(&tgt);

    // pad with zero rows so the SVD exposes the full 9-dim right basis
    let rows = (2 * m).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for k in 0..m {
        let [x, y] = transform_point(&ts, src[k]);
        let [u, v] = transform_point(&tt, tgt[k]);
        let r = 2 * k;
        a[(r, 0)] = -x;
        a[(r, 1)] = -y;
        a[(r, 2)] = -1.0;
        a[(r, 6)] = u * x;
        a[(r, 7)] = u * y;
        a[(r, 8)] = u;
        a[(r + 1, 3)] = -x;
        a[(r + 1, 4)] = -y;
        a[(r + 1, 5)] = -1.0;
        a[(r + 1, 6)] = v * x;
        a[(r + 1, 7)] = v * y;
        a[(r + 1, 8)] = v;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let largest = svd.singular_values[order[0]];
    let second_smallest = svd.singular_values[order[7]];
    if largest <= 0.0 || second_smallest / largest < RANK_TOL {
        return Err(RegError::Degenerate("rank-deficient DLT system".into()));
    }
    let null = v_t.row(order[8]);
    let hn = Matrix3::new(null[0], null[1], null[2], null[3], null[4], null[5], null[6], null[7], null[8]);
    let tt_inv = tt
        .try_inverse()
        .ok_or_else(|| RegError::Degenerate("target points coincide".into()))?;
    Homography::from_matrix(tt_inv * hn * ts)
}

/// RANSAC settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    /// Inlier threshold on forward reprojection error, pixels.
    pub reproj_threshold: f64,
    pub max_iterations: usize,
    /// Early-exit confidence in (0, 1).
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self { reproj_threshold: 10.0, max_iterations: 2000, confidence: 0.999, seed: 42 }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.reproj_threshold > 0.0) {
            return Err(RegError::InvalidArgument("RANSAC threshold must be positive".into()));
        }
        if self.max_iterations < 1 {
            return Err(RegError::InvalidArgument("RANSAC needs at least one iteration".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(RegError::InvalidArgument("RANSAC confidence must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

fn collinear(a: Point, b: Point, c: Point) -> bool {
    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let scale = ((b[0] - a[0]).abs() + (b[1] - a[1]).abs()) * ((c[0] - a[0]).abs() + (c[1] - a[1]).abs());
    cross.abs() <= 1e-9 * scale.max(1e-300)
}

fn sample_is_degenerate(pts: &[Point]) -> bool {
    (0..4).any(|skip| {
        let rest: Vec<Point> = (0..4).filter(|&k| k != skip).map(|k| pts[k]).collect();
        collinear(rest[0], rest[1], rest[2])
    })
}

fn reprojection_error(h: &Homography, pair: &PointPair) -> f64 {
    match h.apply(pair.src) {
        Ok(q) => ((q[0] - pair.tgt[0]).powi(2) + (q[1] - pair.tgt[1]).powi(2)).sqrt(),
        Err(_) => f64::INFINITY,
    }
}

/// Four-point RANSAC around [`fit_homography_dlt`].
///
/// Minimal samples with three collinear points on either side are
/// skipped. The consensus set with the most inliers wins (first found on
/// ties) and the returned homography is refit on all of its inliers. The
/// iteration budget shrinks adaptively from `max_iterations` as the
/// inlier ratio estimate improves. Deterministic for a fixed seed.
pub fn ransac_homography(p: &CorrespondenceSet, cfg: &RansacConfig) -> Result<(Homography, Vec<bool>)> {
    cfg.validate()?;
    let m = p.m();
    if m < 4 {
        return Err(RegError::InsufficientData { needed: 4, got: m });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best_mask: Vec<bool> = Vec::new();
    let mut best_count = 0usize;
    let mut budget = cfg.max_iterations;
    let mut iter = 0;
    while iter < budget {
        iter += 1;
        let idx = rand::seq::index::sample(&mut rng, m, 4).into_vec();
        let src: Vec<Point> = idx.iter().map(|&i| p.pairs[i].src).collect();
        let tgt: Vec<Point> = idx.iter().map(|&i| p.pairs[i].tgt).collect();
        if sample_is_degenerate(&src) || sample_is_degenerate(&tgt) {
            continue;
        }
        let sample = CorrespondenceSet::from_points(&src, &tgt)?;
        let Ok(h) = fit_homography_dlt(&sample) else { continue };
        let mask: Vec<bool> = p
            .pairs
            .iter()
            .map(|pair| reprojection_error(&h, pair) <= cfg.reproj_threshold)
            .collect();
        let count = mask.iter().filter(|&&b| b).count();
        if count > best_count {
            best_count = count;
            best_mask = mask;
            let w = count as f64 / m as f64;
            let needed = if w >= 1.0 {
                1.0
            } else {
                (1.0 - cfg.confidence).ln() / (1.0 - w.powi(4)).ln()
            };
            if needed.is_finite() && needed >= 0.0 {
                budget = budget.min((needed.ceil() as usize).max(1));
            }
        }
    }
    if best_count < 4 {
        return Err(RegError::NoConsensus { best: best_count });
    }
    let h = fit_homography_dlt(&p.select(&best_mask))?;
    Ok((h, best_mask))
}

/// Affine map of a coordinate range onto `[-1, 1]`.
#[derive(Debug, Clone, Copy)]
struct AxisScale {
    center: f64,
    half_range: f64,
}

impl AxisScale {
    fn fit(values: impl Iterator<Item = f64> + Clone) -> Option<Self> {
        let lo = values.clone().fold(f64::INFINITY, f64::min);
        let hi = values.fold(f64::NEG_INFINITY, f64::max);
        let half_range = 0.5 * (hi - lo);
        (half_range > 0.0).then_some(Self { center: 0.5 * (hi + lo), half_range })
    }

    fn apply(&self, v: f64) -> f64 {
        (v - self.center) / self.half_range
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Least-squares polynomial of total degree `n`.
///
/// Inputs are normalized to `[-1, 1]^2` before solving; the coefficients
/// are mapped back to the raw pixel basis by binomial expansion, so the
/// result is in the same basis as the input points.
pub fn fit_polynomial(p: &CorrespondenceSet, n: usize) -> Result<Polynomial2D> {
    check_degree(n)?;
    let k = coefficient_count(n);
    let m = p.m();
    if m < k {
        return Err(RegError::InsufficientData { needed: k, got: m });
    }
    let su = AxisScale::fit(p.pairs.iter().map(|q| q.src[0]))
        .ok_or_else(|| RegError::Degenerate("source points have no spread in u".into()))?;
    let sv = AxisScale::fit(p.pairs.iter().map(|q| q.src[1]))
        .ok_or_else(|| RegError::Degenerate("source points have no spread in v".into()))?;

    let basis = monomials(n);
    let mut design = DMatrix::<f64>::zeros(m, k);
    for (r, pair) in p.pairs.iter().enumerate() {
        let (u, v) = (su.apply(pair.src[0]), sv.apply(pair.src[1]));
        for (c, &(i, j)) in basis.iter().enumerate() {
            design[(r, c)] = u.powi(i as i32) * v.powi(j as i32);
        }
    }
    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin / smax < RANK_TOL {
        return Err(RegError::Degenerate("rank-deficient polynomial design".into()));
    }
    let rhs_x = DVector::from_iterator(m, p.pairs.iter().map(|q| q.tgt[0]));
    let rhs_y = DVector::from_iterator(m, p.pairs.iter().map(|q| q.tgt[1]));
    let cx = svd.solve(&rhs_x, 0.0).map_err(|e| RegError::Degenerate(e.to_string()))?;
    let cy = svd.solve(&rhs_y, 0.0).map_err(|e| RegError::Degenerate(e.to_string()))?;

    // (u - cu)^p / su^p expanded into raw powers of u, likewise for v
    let expand = |scale: &AxisScale, power: usize| -> Vec<f64> {
        (0..=power)
            .map(|i| {
                binomial(power, i) * (-scale.center).powi((power - i) as i32)
                    / scale.half_range.powi(power as i32)
            })
            .collect()
    };
    let mut poly = Polynomial2D::identity(n);
    poly.a.iter_mut().for_each(|v| *v = 0.0);
    poly.b.iter_mut().for_each(|v| *v = 0.0);
    for (c, &(pu, pv)) in basis.iter().enumerate() {
        let eu = expand(&su, pu);
        let ev = expand(&sv, pv);
        for (i, wu) in eu.iter().enumerate() {
            for (j, wv) in ev.iter().enumerate() {
                let idx = poly.index(i, j).expect("expanded exponent within degree");
                poly.a[idx] += cx[c] * wu * wv;
                poly.b[idx] += cy[c] * wu * wv;
            }
        }
    }
    Polynomial2D::new(n, poly.a, poly.b)
        .map_err(|_| RegError::Degenerate("polynomial fit produced non-finite coefficients".into()))
}

/// RANSAC outlier rejection followed by a degree-`n` least-squares
/// polynomial on the inliers.
pub fn fit_ran_poly(p: &CorrespondenceSet, cfg: &RansacConfig, n: usize) -> Result<(Polynomial2D, Vec<bool>)> {
    check_degree(n)?;
    let (_, mask) = ransac_homography(p, cfg)?;
    let inliers = p.select(&mask);
    let needed = coefficient_count(n);
    if inliers.m() < needed {
        return Err(RegError::InsufficientData { needed, got: inliers.m() });
    }
    Ok((fit_polynomial(&inliers, n)?, mask))
}

/// Target-to-source transform for warping.
///
/// Homographies (with their offset folded in) are inverted exactly. A
/// polynomial has no closed-form inverse, so a fresh degree-`n`
/// polynomial is fitted on `inliers` with source and target exchanged.
/// `inliers` must be expressed in the frames `t` maps between.
pub fn invert_for_warp(t: &Transform, inliers: &CorrespondenceSet, n: usize) -> Result<Transform> {
    match &t.model {
        Model::Homography(h) => {
            let full = Homography::translation(t.offset[0], t.offset[1]).matrix() * h.matrix();
            let inv = full
                .try_inverse()
                .ok_or_else(|| RegError::Degenerate("homography is not invertible".into()))?;
            Ok(Transform::homography(Homography::from_matrix(inv)?))
        }
        Model::Polynomial(_) => Ok(Transform::polynomial(fit_polynomial(&inliers.swapped(), n)?)),
    }
}

/// Inverse of `t` over the source rectangle `[0, width) x [0, height)`,
/// for callers without an inlier set: `t` is sampled on a regular grid
/// and the inverse fitted on the samples.
pub fn invert_on_grid(t: &Transform, width: usize, height: usize, n: usize) -> Result<Transform> {
    if let Model::Homography(_) = t.model {
        return invert_for_warp(t, &CorrespondenceSet::default(), n);
    }
    let steps = (coefficient_count(n) as f64).sqrt().ceil() as usize * 3 + 2;
    let mut pairs = Vec::with_capacity(steps * steps);
    for gy in 0..steps {
        for gx in 0..steps {
            let src = [
                gx as f64 * (width.max(2) - 1) as f64 / (steps - 1) as f64,
                gy as f64 * (height.max(2) - 1) as f64 / (steps - 1) as f64,
            ];
            pairs.push(PointPair { src, tgt: t.eval(src)? });
        }
    }
    invert_for_warp(t, &CorrespondenceSet::new(pairs), n)
}
