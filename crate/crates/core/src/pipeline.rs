//! End-to-end registration of a source/target vessel-map pair and the
//! dataset harness around it.
//!
//! Per pair: optional macula-centered crop of the target, binarization,
//! optional opening of one side, skeletonization, junction detection,
//! description and matching, then fitting in the crop frame. The fitted
//! transform carries the crop origin as its output offset, so it maps
//! source pixels straight into the full target image.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crop::{compute_crop, extract, lower_to_crop, CropFrame, OdEdgeRule, RoiPair};
use crate::error::{RegError, Result};
use crate::evaluation::{
    acceptable_matches, aggregate, classify_pair, point_errors, soft_dice, Classification, DatasetReport,
    PairEvaluation, Thresholds,
};
use crate::fitting::{
    check_degree, coefficient_count, fit_homography_dlt, fit_polynomial, fit_ran_poly, invert_for_warp,
    invert_on_grid, ransac_homography, Model, RansacConfig, Transform,
};
use crate::keypoints::{describe, detect_junctions, match_bruteforce, CorrespondenceSet, PointPair};
use crate::raster::{binarize, load_image, opening, ImageGrid, StructuringElement};
use crate::vessel::{enhance_vesselness, skeletonize, VesselMap, VesselnessParams};
use crate::warp::{render_overlay, warp, OverlayImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    #[default]
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FitStrategy {
    /// Homography by RANSAC alone.
    RansacOnly,
    /// Polynomial least squares on every match.
    PolyOnly,
    /// RANSAC inlier filtering, then polynomial least squares on the inliers.
    #[default]
    RanPoly,
}

/// Pipeline settings; missing JSON fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub crop_enabled: bool,
    pub crop_edge_rule: OdEdgeRule,
    pub opening_enabled: bool,
    pub opening_side: Side,
    pub opening_element: StructuringElement,
    pub fit_strategy: FitStrategy,
    pub poly_degree: usize,
    pub ransac: RansacConfig,
    pub match_ratio: f64,
    pub cross_check: bool,
    pub nms_radius: f64,
    pub patch_radius: usize,
    pub binarize_threshold: f64,
    /// Run the ridge filter on both inputs first (for raw images rather
    /// than vessel probability maps).
    pub vesselness: Option<VesselnessParams>,
    pub thresholds: Thresholds,
    /// Warp each registered source for soft Dice (and overlays).
    pub compute_dice: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            crop_enabled: true,
            crop_edge_rule: OdEdgeRule::FarthestCorner,
            opening_enabled: true,
            opening_side: Side::Source,
            opening_element: StructuringElement::default(),
            fit_strategy: FitStrategy::RanPoly,
            poly_degree: 2,
            ransac: RansacConfig::default(),
            match_ratio: 0.8,
            cross_check: true,
            nms_radius: 5.0,
            patch_radius: 16,
            binarize_threshold: 0.5,
            vesselness: None,
            thresholds: Thresholds::default(),
            compute_dice: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        check_degree(self.poly_degree)?;
        self.ransac.validate()?;
        let bad = |m: &str| Err(RegError::Config(m.to_string()));
        if !(self.match_ratio > 0.0 && self.match_ratio <= 1.0) {
            return bad("match_ratio must lie in (0, 1]");
        }
        if self.opening_element.radius < 1 {
            return bad("opening_element radius must be >= 1");
        }
        if self.patch_radius < 2 {
            return bad("patch_radius must be >= 2");
        }
        if !(self.nms_radius >= 0.0) {
            return bad("nms_radius must be >= 0");
        }
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold <= 1.0) {
            return bad("binarize_threshold must lie in (0, 1]");
        }
        if self.thresholds.auc_max < 1 {
            return bad("thresholds.auc_max must be >= 1");
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| RegError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }
}

/// Counts gathered along the way.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_source_keypoints: usize,
    pub n_target_keypoints: usize,
    pub n_matches: usize,
    pub n_inliers: usize,
}

/// Result of [`register_pair`]. A fitting failure leaves `transform`
/// empty and records the reason; it is not an error.
#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    /// Source frame to full target frame.
    pub transform: Option<Transform>,
    pub failure: Option<String>,
    /// Matches with targets in full target coordinates.
    pub matches: CorrespondenceSet,
    /// Per-match inlier flags of the fit (all false on failure).
    pub inlier_mask: Vec<bool>,
    pub crop: Option<CropFrame>,
    pub diagnostics: Diagnostics,
}

impl Registration {
    pub fn inliers(&self) -> CorrespondenceSet {
        self.matches.select(&self.inlier_mask)
    }
}

fn crop_frame(target: &ImageGrid, rois: Option<&RoiPair>, cfg: &PipelineConfig) -> Result<Option<CropFrame>> {
    if !cfg.crop_enabled {
        return Ok(None);
    }
    let rois = rois.ok_or_else(|| RegError::InvalidArgument("cropping requires macula and optic-disc boxes".into()))?;
    compute_crop(&rois.macula, &rois.optic_disc, target.width(), target.height(), cfg.crop_edge_rule).map(Some)
}

fn prepare(map: &ImageGrid, open: bool, cfg: &PipelineConfig) -> Result<ImageGrid> {
    let map = match &cfg.vesselness {
        Some(params) => enhance_vesselness(map, params)?.grid,
        None => map.clone(),
    };
    let bin = binarize(&map, cfg.binarize_threshold);
    if open {
        opening(&bin, &cfg.opening_element)
    } else {
        Ok(bin)
    }
}

/// Junction matches between two vessel maps, in their own pixel frames.
pub fn match_maps(source: &ImageGrid, target: &ImageGrid, cfg: &PipelineConfig) -> Result<(CorrespondenceSet, Diagnostics)> {
    let src_bin = prepare(source, cfg.opening_enabled && cfg.opening_side == Side::Source, cfg)?;
    let tgt_bin = prepare(target, cfg.opening_enabled && cfg.opening_side == Side::Target, cfg)?;
    let features = |bin: ImageGrid| -> Result<Vec<_>> {
        let sk = skeletonize(&bin)?;
        let kps = detect_junctions(&sk, cfg.nms_radius);
        let map = VesselMap::unknown(bin);
        Ok(kps.into_iter().map(|kp| (kp, describe(&map, &kp, cfg.patch_radius))).collect())
    };
    let src = features(src_bin)?;
    let tgt = features(tgt_bin)?;
    let matches = match_bruteforce(&src, &tgt, cfg.match_ratio, cfg.cross_check)?;
    let diag = Diagnostics {
        n_source_keypoints: src.len(),
        n_target_keypoints: tgt.len(),
        n_matches: matches.m(),
        n_inliers: 0,
    };
    Ok((matches, diag))
}

/// Fits `matches` (targets in the fitting frame) by `cfg.fit_strategy`.
pub fn fit_matches(matches: &CorrespondenceSet, cfg: &PipelineConfig) -> Result<(Transform, Vec<bool>)> {
    match cfg.fit_strategy {
        FitStrategy::RansacOnly => {
            let (h, mask) = ransac_homography(matches, &cfg.ransac)?;
            Ok((Transform::homography(h), mask))
        }
        FitStrategy::PolyOnly => {
            let p = fit_polynomial(matches, cfg.poly_degree)?;
            Ok((Transform::polynomial(p), vec![true; matches.m()]))
        }
        FitStrategy::RanPoly => {
            let (p, mask) = fit_ran_poly(matches, &cfg.ransac, cfg.poly_degree)?;
            Ok((Transform::polynomial(p), mask))
        }
    }
}

/// Registers `source` onto `target`. With cropping enabled `rois` must
/// be given; they refer to the full target image.
pub fn register_pair(
    source: &VesselMap,
    target: &VesselMap,
    rois: Option<&RoiPair>,
    cfg: &PipelineConfig,
) -> Result<Registration> {
    cfg.validate()?;
    let frame = crop_frame(&target.grid, rois, cfg)?;
    let tgt_view = match &frame {
        Some(f) => extract(&target.grid, f)?,
        None => target.grid.clone(),
    };
    let (local, diag) = match_maps(&source.grid, &tgt_view, cfg)?;
    Ok(finish(local, frame, diag, cfg))
}

/// Registration from externally supplied matches (targets in full
/// target coordinates) instead of detected ones.
pub fn register_with_matches(
    matches: &CorrespondenceSet,
    target_w: usize,
    target_h: usize,
    rois: Option<&RoiPair>,
    cfg: &PipelineConfig,
) -> Result<Registration> {
    cfg.validate()?;
    let frame = crop_frame(&ImageGrid::zeros(target_w.max(1), target_h.max(1)), rois, cfg)?;
    let local = match &frame {
        Some(f) => CorrespondenceSet::new(
            matches.pairs.iter().map(|p| PointPair { src: p.src, tgt: lower_to_crop(p.tgt, f) }).collect(),
        ),
        None => matches.clone(),
    };
    let diag = Diagnostics { n_matches: matches.m(), ..Default::default() };
    Ok(finish(local, frame, diag, cfg))
}

fn finish(local: CorrespondenceSet, frame: Option<CropFrame>, mut diag: Diagnostics, cfg: &PipelineConfig) -> Registration {
    let offset = frame.map(|f| f.offset()).unwrap_or([0.0, 0.0]);
    let matches = CorrespondenceSet::new(
        local
            .pairs
            .iter()
            .map(|p| PointPair { src: p.src, tgt: [p.tgt[0] + offset[0], p.tgt[1] + offset[1]] })
            .collect(),
    );
    match fit_matches(&local, cfg) {
        Ok((t, mask)) => {
            diag.n_inliers = mask.iter().filter(|&&b| b).count();
            Registration {
                transform: Some(t.with_offset(offset)),
                failure: None,
                inlier_mask: mask,
                matches,
                crop: frame,
                diagnostics: diag,
            }
        }
        Err(e) => Registration {
            transform: None,
            failure: Some(e.to_string()),
            inlier_mask: vec![false; matches.m()],
            matches,
            crop: frame,
            diagnostics: diag,
        },
    }
}

/// Target-to-source mapping for a fitted registration. Polynomials are
/// inverted on their inliers, falling back to a grid over the source
/// when the inliers cannot support the fit.
pub fn inverse_for(reg: &Registration, t: &Transform, source_w: usize, source_h: usize) -> Result<Transform> {
    let degree = match &t.model {
        Model::Polynomial(p) => p.degree,
        Model::Homography(_) => 1,
    };
    invert_for_warp(t, &reg.inliers(), degree).or_else(|e| {
        if e.is_fit_failure() {
            invert_on_grid(t, source_w, source_h, degree.max(3))
        } else {
            Err(e)
        }
    })
}

/// Warps the source map into the full target frame.
pub fn warp_source(source: &ImageGrid, inverse: &Transform, target_w: usize, target_h: usize) -> Result<ImageGrid> {
    Ok(warp(source, inverse, target_w, target_h)?.image)
}

/// Red/green overlay of `source` warped by `forward` onto `target`.
pub fn overlay_with_transform(source: &ImageGrid, target: &ImageGrid, forward: &Transform) -> Result<OverlayImage> {
    let degree = match &forward.model {
        Model::Polynomial(p) => p.degree.max(3),
        Model::Homography(_) => 1,
    };
    let inverse = invert_on_grid(forward, source.width(), source.height(), degree)?;
    render_overlay(&warp_source(source, &inverse, target.width(), target.height())?, target)
}

/// Reference mapping for counting acceptable matches: the given
/// ground-truth transform, else a fit to the ground-truth landmarks
/// (quadratic with at least six, homography with four or five).
pub fn reference_transform(gt_transform: Option<&Transform>, gt: Option<&CorrespondenceSet>) -> Option<Transform> {
    if let Some(t) = gt_transform {
        return Some(t.clone());
    }
    let gt = gt?;
    if gt.m() >= coefficient_count(2) {
        fit_polynomial(gt, 2).ok().map(Transform::polynomial)
    } else {
        fit_homography_dlt(gt).ok().map(Transform::homography)
    }
}

/// One pair held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct PairData {
    pub id: String,
    pub source: VesselMap,
    pub target: VesselMap,
    pub rois: Option<RoiPair>,
    /// Ground-truth landmark pairs (source to full target).
    pub gt: Option<CorrespondenceSet>,
    pub gt_transform: Option<Transform>,
    /// Precomputed matches replacing keypoint detection.
    pub matches: Option<CorrespondenceSet>,
}

/// Everything computed for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub evaluation: PairEvaluation,
    pub registration: Registration,
    /// Warped source in the full target frame (absent on failure or
    /// with `compute_dice` off).
    pub warped_source: Option<ImageGrid>,
}

/// Registers and scores one pair.
///
/// Pairs without ground-truth landmarks cannot be verified and count as
/// inaccurate unless the fit failed. Soft Dice compares the warped
/// source with the target over the crop window (the whole target when
/// cropping is off).
pub fn evaluate_pair(pair: &PairData, cfg: &PipelineConfig) -> Result<PairOutcome> {
    let reg = match &pair.matches {
        Some(m) => register_with_matches(m, pair.target.width(), pair.target.height(), pair.rois.as_ref(), cfg)?,
        None => register_pair(&pair.source, &pair.target, pair.rois.as_ref(), cfg)?,
    };
    let n_matches = reg.matches.m();
    let reference = reference_transform(pair.gt_transform.as_ref(), pair.gt.as_ref());
    let n_acceptable_matches = reference.map(|t| acceptable_matches(&reg.matches, &t, cfg.thresholds.match_tol));

    let Some(t) = reg.transform.clone() else {
        let evaluation = PairEvaluation {
            id: pair.id.clone(),
            mee: None,
            mae: None,
            classification: Classification::Failed,
            n_matches,
            n_acceptable_matches,
            dice_s: None,
        };
        return Ok(PairOutcome { evaluation, registration: reg, warped_source: None });
    };

    let (mee, mae, classification) = match &pair.gt {
        Some(gt) => match point_errors(&t, gt) {
            Ok(errors) => classify_pair(&errors, false, &cfg.thresholds),
            Err(e) if e.is_fit_failure() => (None, None, Classification::Inaccurate),
            Err(e) => return Err(e),
        },
        None => (None, None, Classification::Inaccurate),
    };

    let (tw, th) = (pair.target.width(), pair.target.height());
    let warped = if cfg.compute_dice {
        inverse_for(&reg, &t, pair.source.width(), pair.source.height())
            .and_then(|inv| warp_source(&pair.source.grid, &inv, tw, th))
            .ok()
    } else {
        None
    };
    let dice_s = match &warped {
        Some(w) => {
            let (a, b) = match &reg.crop {
                Some(f) => (extract(w, f)?, extract(&pair.target.grid, f)?),
                None => (w.clone(), pair.target.grid.clone()),
            };
            Some(soft_dice(&VesselMap::unknown(a), &VesselMap::unknown(b))?)
        }
        None => None,
    };
    let evaluation =
        PairEvaluation { id: pair.id.clone(), mee, mae, classification, n_matches, n_acceptable_matches, dice_s };
    Ok(PairOutcome { evaluation, registration: reg, warped_source: warped })
}

/// Evaluates all pairs in parallel; results are sorted by id.
pub fn run_pairs(pairs: &[PairData], cfg: &PipelineConfig) -> Result<Vec<PairOutcome>> {
    cfg.validate()?;
    let mut out = pairs.par_iter().map(|p| evaluate_pair(p, cfg)).collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.evaluation.id.cmp(&b.evaluation.id));
    Ok(out)
}

/// Per-pair results plus their aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub report: DatasetReport,
    pub pairs: Vec<PairEvaluation>,
}

impl RunReport {
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn report_for(outcomes: &[PairOutcome], cfg: &PipelineConfig) -> Result<RunReport> {
    let pairs: Vec<PairEvaluation> = outcomes.iter().map(|o| o.evaluation.clone()).collect();
    Ok(RunReport { report: aggregate(&pairs, &cfg.thresholds)?, pairs })
}

/// One manifest entry. Relative paths resolve against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub source: PathBuf,
    pub target: PathBuf,
    #[serde(default)]
    pub rois: Option<PathBuf>,
    #[serde(default)]
    pub gt: Option<PathBuf>,
    #[serde(default)]
    pub gt_transform: Option<PathBuf>,
    #[serde(default)]
    pub matches: Option<PathBuf>,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path.as_ref())?;
    let entries: Vec<ManifestEntry> =
        serde_json::from_str(&text).map_err(|e| RegError::Config(format!("malformed manifest: {e}")))?;
    if entries.is_empty() {
        return Err(RegError::Config("manifest lists no pairs".into()));
    }
    let mut ids: Vec<&str> = entries.iter().map(|e| e.id.as_str()).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(RegError::Config("manifest ids must be unique".into()));
    }
    Ok(entries)
}

/// Loads every file a manifest refers to.
pub fn load_pairs(manifest: impl AsRef<Path>) -> Result<Vec<PairData>> {
    let manifest = manifest.as_ref();
    let base = manifest.parent().unwrap_or(Path::new(""));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    load_manifest(manifest)?
        .par_iter()
        .map(|e| {
            Ok(PairData {
                id: e.id.clone(),
                source: VesselMap::unknown(load_image(resolve(&e.source))?),
                target: VesselMap::unknown(load_image(resolve(&e.target))?),
                rois: e.rois.as_deref().map(|p| RoiPair::load(resolve(p))).transpose()?,
                gt: e.gt.as_deref().map(|p| CorrespondenceSet::load(resolve(p))).transpose()?,
                gt_transform: e.gt_transform.as_deref().map(|p| Transform::load(resolve(p))).transpose()?,
                matches: e.matches.as_deref().map(|p| CorrespondenceSet::load(resolve(p))).transpose()?,
            })
        })
        .collect()
}

/// Runs the pipeline on every manifest pair. When `overlay_dir` is given
/// an overlay PNG `<id>.png` is written there for each registered pair.
pub fn run_dataset(manifest: impl AsRef<Path>, cfg: &PipelineConfig, overlay_dir: Option<&Path>) -> Result<RunReport> {
    cfg.validate()?;
    let pairs = load_pairs(manifest)?;
    let outcomes = run_pairs(&pairs, cfg)?;
    if let Some(dir) = overlay_dir {
        fs::create_dir_all(dir)?;
        for (o, p) in outcomes.iter().zip(sorted_by_id(&pairs)) {
            if let Some(w) = &o.warped_source {
                let name = format!("{}.png", sanitize(&p.id));
                render_overlay(w, &p.target.grid)?.save_png(dir.join(name))?;
            }
        }
    }
    report_for(&outcomes, cfg)
}

fn sorted_by_id(pairs: &[PairData]) -> Vec<&PairData> {
    let mut v: Vec<&PairData> = pairs.iter().collect();
    v.sort_by(|a, b| a.id.cmp(&b.id));
    v
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// RAN-Poly runs over each degree on the same pairs.
pub fn degree_sweep_pairs(pairs: &[PairData], cfg: &PipelineConfig, degrees: &[usize]) -> Result<Vec<(usize, DatasetReport)>> {
    if degrees.is_empty() {
        return Err(RegError::InvalidArgument("degree sweep needs at least one degree".into()));
    }
    degrees
        .iter()
        .map(|&n| {
            let cfg = PipelineConfig { fit_strategy: FitStrategy::RanPoly, poly_degree: n, ..cfg.clone() };
            let outcomes = run_pairs(pairs, &cfg)?;
            Ok((n, report_for(&outcomes, &cfg)?.report))
        })
        .collect()
}

pub fn degree_sweep(manifest: impl AsRef<Path>, cfg: &PipelineConfig, degrees: &[usize]) -> Result<Vec<(usize, DatasetReport)>> {
    if degrees.is_empty() {
        return Err(RegError::InvalidArgument("degree sweep needs at least one degree".into()));
    }
    degree_sweep_pairs(&load_pairs(manifest)?, cfg, degrees)
}

/// CSV table with a `degree` column in front of the report columns.
pub fn sweep_csv(rows: &[(usize, DatasetReport)]) -> String {
    let mut out = format!("degree,{}\n", DatasetReport::CSV_HEADER);
    for (n, r) in rows {
        out.push_str(&format!("{n},{}\n", r.csv_row()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crop::{RoiBox, RoiLabel};
    use crate::synth::{make_problem, SynthConfig, TransformKind};

    fn probe_mee(t: &Transform, truth: &Transform, size: f64) -> f64 {
        let mut errs = Vec::new();
        for gy in 1..10 {
            for gx in 1..10 {
                let p = [gx as f64 * size / 10.0, gy as f64 * size / 10.0];
                let (a, b) = (t.eval(p).unwrap(), truth.eval(p).unwrap());
                errs.push(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
            }
        }
        crate::evaluation::median(&errs).unwrap()
    }

    fn no_crop() -> PipelineConfig {
        PipelineConfig { crop_enabled: false, ..Default::default() }
    }

    #[test]
    fn default_config_roundtrips_through_json() {
        let cfg = PipelineConfig::default();
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(PipelineConfig::from_json_str(&s).unwrap(), cfg);
        assert_eq!(PipelineConfig::from_json_str("{}").unwrap(), cfg);
        assert!(PipelineConfig::from_json_str(r#"{"poly_degree":0}"#).is_err());
        assert!(PipelineConfig::from_json_str(r#"{"fit_strategy":"nope"}"#).is_err());
    }

    #[test]
    fn self_registration_is_identity() {
        let p = make_problem(&SynthConfig { seed: 1, image_size: 300, ..Default::default() }).unwrap();
        let map = VesselMap::unknown(p.source_img.clone());
        let reg = register_pair(&map, &map, None, &no_crop()).unwrap();
        let t = reg.transform.expect("self-registration succeeds");
        assert!(probe_mee(&t, &Transform::identity(), 300.0) < 1.0);
        assert!(reg.diagnostics.n_matches >= 10);
    }

    #[test]
    fn homography_problem_with_ransac_only() {
        // seed 0 plants a ~8 deg rotation; descriptors are not rotation
        // invariant, so rotations near the 15 deg bound may not match
        let cfg = SynthConfig { seed: 0, image_size: 400, transform_kind: TransformKind::Homography, ..Default::default() };
        let p = make_problem(&cfg).unwrap();
        let pc = PipelineConfig { fit_strategy: FitStrategy::RansacOnly, ..no_crop() };
        let reg = register_pair(
            &VesselMap::unknown(p.source_img.clone()),
            &VesselMap::unknown(p.target_img.clone()),
            None,
            &pc,
        )
        .unwrap();
        let t = reg.transform.expect("fit succeeds");
        let errs = point_errors(&t, &p.gt_points).unwrap();
        let mee = crate::evaluation::median(&errs).unwrap();
        assert!(mee < 2.0, "mee {mee}");
    }

    #[test]
    fn crop_requires_rois() {
        let map = VesselMap::unknown(ImageGrid::zeros(20, 20));
        assert!(register_pair(&map, &map, None, &PipelineConfig::default()).is_err());
    }

    #[test]
    fn blank_source_is_a_failed_pair() {
        let p = make_problem(&SynthConfig { seed: 3, image_size: 200, ..Default::default() }).unwrap();
        let pair = PairData {
            id: "blank".into(),
            source: VesselMap::unknown(ImageGrid::zeros(200, 200)),
            target: VesselMap::unknown(p.target_img.clone()),
            rois: None,
            gt: Some(p.gt_points.clone()),
            gt_transform: None,
            matches: None,
        };
        let out = evaluate_pair(&pair, &no_crop()).unwrap();
        assert_eq!(out.evaluation.classification, Classification::Failed);
        assert!(out.registration.failure.is_some());
        assert_eq!(out.evaluation.dice_s, None);
    }

    #[test]
    fn precropped_target_matches_crop_enabled_run() {
        let cfg = SynthConfig { seed: 4, image_size: 240, target_size: Some(360), ..Default::default() };
        let p = make_problem(&cfg).unwrap();
        let rois = p.rois.clone().unwrap();
        let pc = PipelineConfig::default();
        let src = VesselMap::unknown(p.source_img.clone());
        let full = register_pair(&src, &VesselMap::unknown(p.target_img.clone()), Some(&rois), &pc).unwrap();
        let frame = full.crop.unwrap();
        let cropped = VesselMap::unknown(extract(&p.target_img, &frame).unwrap());
        let local = register_pair(&src, &cropped, None, &PipelineConfig { crop_enabled: false, ..pc }).unwrap();
        let (a, b) = (full.transform.unwrap(), local.transform.unwrap());
        for probe in [[10.0, 20.0], [120.0, 120.0], [200.0, 50.0]] {
            let qa = a.eval(probe).unwrap();
            let qb = b.eval(probe).unwrap();
            assert!((qa[0] - qb[0] - frame.offset()[0]).abs() < 1e-6);
            assert!((qa[1] - qb[1] - frame.offset()[1]).abs() < 1e-6);
        }
    }

    #[test]
    fn supplied_matches_are_lowered_into_the_crop() {
        let rois = RoiPair {
            macula: RoiBox::new(RoiLabel::Macula, [45.0, 45.0, 55.0, 55.0]),
            optic_disc: RoiBox::new(RoiLabel::OpticDisc, [75.0, 45.0, 80.0, 55.0]),
        };
        let src: Vec<[f64; 2]> = (0..12).map(|i| [(i % 4) as f64 * 10.0, (i / 4) as f64 * 12.0 + (i % 3) as f64]).collect();
        let tgt: Vec<[f64; 2]> = src.iter().map(|p| [p[0] + 30.0, p[1] + 25.0]).collect();
        let m = CorrespondenceSet::from_points(&src, &tgt).unwrap();
        let reg = register_with_matches(&m, 100, 100, Some(&rois), &PipelineConfig::default()).unwrap();
        assert!(reg.crop.unwrap().origin != [0, 0]);
        let t = reg.transform.unwrap();
        let q = t.eval([5.0, 7.0]).unwrap();
        assert!((q[0] - 35.0).abs() < 1e-6 && (q[1] - 32.0).abs() < 1e-6);
        assert_eq!(reg.matches, m);
    }

    #[test]
    fn sweep_argument_checks() {
        assert!(degree_sweep_pairs(&[], &PipelineConfig::default(), &[]).is_err());
        let csv = sweep_csv(&[]);
        assert!(csv.starts_with("degree,n_pairs"));
    }
}
