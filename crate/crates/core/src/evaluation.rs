//! Registration metrics: per-pair MEE/MAE and classification, AUC over
//! MEE thresholds, acceptable-match counts and soft Dice, plus their
//! dataset-level aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{RegError, Result};
use crate::fitting::Transform;
use crate::keypoints::CorrespondenceSet;
use crate::vessel::VesselMap;

/// Metric thresholds, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// A registration is acceptable only if its MEE is strictly below this.
    pub mee: f64,
    /// ...and its MAE strictly below this.
    pub mae: f64,
    /// Match tolerance for counting acceptable keypoint matches.
    pub match_tol: f64,
    /// AUC integrates MEE thresholds 1..=auc_max.
    pub auc_max: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { mee: 20.0, mae: 50.0, match_tol: 20.0, auc_max: 25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Failed,
    Inaccurate,
    Acceptable,
}

/// Metrics of one registered pair. Error statistics are absent for
/// failed pairs and for pairs without ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEvaluation {
    pub id: String,
    pub mee: Option<f64>,
    pub mae: Option<f64>,
    pub classification: Classification,
    pub n_matches: usize,
    pub n_acceptable_matches: Option<usize>,
    pub dice_s: Option<f64>,
}

/// Dataset aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub n_pairs: usize,
    pub failed_rate: f64,
    pub inaccurate_rate: f64,
    pub acceptable_rate: f64,
    pub auc: f64,
    pub mean_matches: f64,
    pub mean_acceptable_matches: f64,
    /// Mean soft Dice over pairs that were not failed.
    pub mean_dice_s: f64,
    /// Pairs left out of `mean_dice_s`.
    pub dice_excluded: usize,
}

impl DatasetReport {
    pub const CSV_HEADER: &'static str = "n_pairs,failed_rate,inaccurate_rate,acceptable_rate,auc,mean_matches,mean_acceptable_matches,mean_dice_s,dice_excluded";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.n_pairs,
            self.failed_rate,
            self.inaccurate_rate,
            self.acceptable_rate,
            self.auc,
            self.mean_matches,
            self.mean_acceptable_matches,
            self.mean_dice_s,
            self.dice_excluded
        )
    }
}

/// Euclidean distance between each mapped source point and its
/// ground-truth target.
pub fn point_errors(t: &Transform, gt: &CorrespondenceSet) -> Result<Vec<f64>> {
    if gt.is_empty() {
        return Err(RegError::InvalidArgument("ground truth has no correspondences".into()));
    }
    gt.pairs
        .iter()
        .map(|p| {
            let q = t.eval(p.src)?;
            Ok(((q[0] - p.tgt[0]).powi(2) + (q[1] - p.tgt[1]).powi(2)).sqrt())
        })
        .collect()
}

/// Median with the even-count convention of averaging the middle two.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// `(mee, mae, class)` for one pair.
pub fn classify_pair(
    errors: &[f64],
    fit_failed: bool,
    thresholds: &Thresholds,
) -> (Option<f64>, Option<f64>, Classification) {
    if fit_failed {
        return (None, None, Classification::Failed);
    }
    let Some(mee) = median(errors) else {
        return (None, None, Classification::Failed);
    };
    let mae = errors.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let class = if mee < thresholds.mee && mae < thresholds.mae {
        Classification::Acceptable
    } else {
        Classification::Inaccurate
    };
    (Some(mee), Some(mae), class)
}

/// Mean over integer thresholds `t = 1..=t_max` of the fraction of pairs
/// with `mee <= t`. `None` entries are failed pairs and never count.
pub fn auc(mees: &[Option<f64>], t_max: usize) -> Result<f64> {
    if mees.is_empty() {
        return Err(RegError::InvalidArgument("AUC over an empty set of pairs".into()));
    }
    if t_max < 1 {
        return Err(RegError::InvalidArgument("AUC needs t_max >= 1".into()));
    }
    let n = mees.len() as f64;
    let total: f64 = (1..=t_max)
        .map(|t| {
            let hits = mees.iter().filter(|m| matches!(m, Some(e) if *e <= t as f64)).count();
            hits as f64 / n
        })
        .sum();
    Ok(total / t_max as f64)
}

/// Matches that land within `tol` of where the ground-truth mapping sends
/// their source point. Pairs the mapping cannot evaluate do not count.
pub fn acceptable_matches(p: &CorrespondenceSet, gt_t: &Transform, tol: f64) -> usize {
    p.pairs
        .iter()
        .filter(|pair| match gt_t.eval(pair.src) {
            Ok(q) => ((q[0] - pair.tgt[0]).powi(2) + (q[1] - pair.tgt[1]).powi(2)).sqrt() <= tol,
            Err(_) => false,
        })
        .count()
}

/// `2 sum(a b) / (sum(a) + sum(b))`, with `0/0 = 1`.
pub fn soft_dice(a: &VesselMap, b: &VesselMap) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(RegError::InvalidArgument("soft Dice inputs differ in size".into()));
    }
    let mut inter = 0.0;
    let mut total = 0.0;
    for (x, y) in a.grid.values().iter().zip(b.grid.values()) {
        inter += x * y;
        total += x + y;
    }
    Ok(if total == 0.0 { 1.0 } else { 2.0 * inter / total })
}

/// Folds per-pair results into a dataset report.
pub fn aggregate(pairs: &[PairEvaluation], thresholds: &Thresholds) -> Result<DatasetReport> {
    if pairs.is_empty() {
        return Err(RegError::InvalidArgument("cannot aggregate an empty dataset".into()));
    }
    let n = pairs.len();
    let count = |c: Classification| pairs.iter().filter(|p| p.classification == c).count();
    let failed = count(Classification::Failed);
    let acceptable = count(Classification::Acceptable);
    let inaccurate = n - failed - acceptable;
    let mees: Vec<Option<f64>> = pairs
        .iter()
        .map(|p| if p.classification == Classification::Failed { None } else { p.mee })
        .collect();
    let dice: Vec<f64> = pairs
        .iter()
        .filter(|p| p.classification != Classification::Failed)
        .filter_map(|p| p.dice_s)
        .collect();
    let acc_matches: Vec<usize> = pairs.iter().filter_map(|p| p.n_acceptable_matches).collect();
    let mean = |s: f64, k: usize| if k == 0 { 0.0 } else { s / k as f64 };
    Ok(DatasetReport {
        n_pairs: n,
        failed_rate: failed as f64 / n as f64,
        inaccurate_rate: inaccurate as f64 / n as f64,
        acceptable_rate: acceptable as f64 / n as f64,
        auc: auc(&mees, thresholds.auc_max)?,
        mean_matches: mean(pairs.iter().map(|p| p.n_matches as f64).sum(), n),
        mean_acceptable_matches: mean(acc_matches.iter().map(|&k| k as f64).sum(), acc_matches.len()),
        mean_dice_s: mean(dice.iter().sum(), dice.len()),
        dice_excluded: n - dice.len(),
    })
}
