//! Depth, pose and surface reconstruction metrics.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::RigidPose;
use crate::kdtree::NearestIndex;
use crate::pointmap::DepthMap;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no pixel is valid in both prediction and ground truth")]
    EmptyOverlap,
    #[error("ground-truth depth must be positive")]
    NonPositiveGroundTruth,
    #[error("prediction and ground truth differ in size")]
    SizeMismatch,
    #[error("need at least {needed} poses, got {got}")]
    TooFewPoses { needed: usize, got: usize },
    #[error("pose lists differ in length")]
    LengthMismatch,
    #[error("point set is empty")]
    EmptyPointSet,
    #[error("threshold must be positive and finite")]
    BadThreshold,
}

/// Thresholds, in degrees, at which mean average accuracy is integrated.
pub const MAA_THRESHOLDS: std::ops::RangeInclusive<u32> = 1..=30;

/// Lower median: element `(n − 1) / 2` of the sorted values.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    let mid = (v.len() - 1) / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    Some(*m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthNormalization {
    Median,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthEvalReport {
    pub abs_rel: f64,
    /// Fraction with `max(ŷ/y, y/ŷ) < 1.25`.
    pub delta_accuracy: f64,
    /// Fraction with `max(ŷ/y, y/ŷ) < τ`.
    pub inlier_ratio: f64,
    pub n_pixels: usize,
    pub normalization: DepthNormalization,
}

/// Scores `pred` against `gt` over pixels valid in both.
///
/// With median normalization each prediction becomes
/// `ŷ · (median(y) / median(ŷ))`, medians taken over the shared pixels.
pub fn eval_depth(
    pred: &DepthMap,
    gt: &DepthMap,
    normalization: DepthNormalization,
    tau: f64,
) -> Result<DepthEvalReport, MetricsError> {
    if pred.size() != gt.size() {
        return Err(MetricsError::SizeMismatch);
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(MetricsError::BadThreshold);
    }
    let pairs: Vec<(f64, f64)> = gt
        .iter_valid()
        .filter(|&(k, _)| pred.is_valid(k))
        .map(|(k, y)| (pred.depth(k), y))
        .collect();
    if pairs.is_empty() {
        return Err(MetricsError::EmptyOverlap);
    }
    if pairs.iter().any(|&(_, y)| !(y > 0.0)) {
        return Err(MetricsError::NonPositiveGroundTruth);
    }
    let factor = match normalization {
        DepthNormalization::None => None,
        DepthNormalization::Median => {
            let mp = lower_median(&pairs.iter().map(|p| p.0).collect::<Vec<_>>()).expect("nonempty");
            let mg = lower_median(&pairs.iter().map(|p| p.1).collect::<Vec<_>>()).expect("nonempty");
            // One ratio, so identical maps normalize to themselves exactly.
            Some(mg / mp)
        }
    };
    let n = pairs.len();
    let (mut abs_rel, mut delta, mut inliers) = (0.0, 0usize, 0usize);
    for &(p, y) in &pairs {
        let p = match factor {
            Some(s) => p * s,
            None => p,
        };
        abs_rel += (y - p).abs() / y;
        let ratio = (p / y).max(y / p);
        delta += usize::from(ratio < 1.25);
        inliers += usize::from(ratio < tau);
    }
    Ok(DepthEvalReport {
        abs_rel: abs_rel / n as f64,
        delta_accuracy: delta as f64 / n as f64,
        inlier_ratio: inliers as f64 / n as f64,
        n_pixels: n,
        normalization,
    })
}

/// Angular errors of one ordered pair `(i, j)`, in degrees. `translation`
/// is `None` when the ground-truth relative translation vanishes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairError {
    pub i: usize,
    pub j: usize,
    pub rotation: f64,
    pub translation: Option<f64>,
}

fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    // atan2 keeps precision near 0° and 180°.
    a.cross(b).norm().atan2(a.dot(b)).to_degrees()
}

/// Errors of `P_j P_i⁻¹` for every ordered pair `i ≠ j`, row-major in `(i, j)`.
pub fn relative_pose_errors(gt: &[RigidPose], pred: &[RigidPose]) -> Result<Vec<PairError>, MetricsError> {
    if gt.len() != pred.len() {
        return Err(MetricsError::LengthMismatch);
    }
    if gt.len() < 2 {
        return Err(MetricsError::TooFewPoses {
            needed: 2,
            got: gt.len(),
        });
    }
    let rel = |p: &[RigidPose], i: usize, j: usize| p[j].compose(&p[i].inverse());
    let mut max_t: f64 = 0.0;
    for i in 0..gt.len() {
        for j in 0..gt.len() {
            if i != j {
                max_t = max_t.max(rel(gt, i, j).translation.norm());
            }
        }
    }
    let zero_t = 1e-9 * max_t.max(1.0);
    let mut out = Vec::with_capacity(gt.len() * (gt.len() - 1));
    for i in 0..gt.len() {
        for j in 0..gt.len() {
            if i == j {
                continue;
            }
            let (g, p) = (rel(gt, i, j), rel(pred, i, j));
            let rotation = g.rotation.angle_to(&p.rotation).to_degrees();
            let translation = if g.translation.norm() <= zero_t {
                None
            } else if p.translation.norm() == 0.0 {
                Some(180.0)
            } else {
                Some(angle_between(&g.translation, &p.translation))
            };
            out.push(PairError {
                i,
                j,
                rotation,
                translation,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseEvalReport {
    /// Threshold in degrees → fraction of pairs with rotation error below it.
    pub rra_at: BTreeMap<String, f64>,
    /// Same for translation-direction error, over pairs where it is defined.
    pub rta_at: BTreeMap<String, f64>,
    /// Mean over τ = 1..30° of the fraction of pairs with both errors < τ.
    pub maa: f64,
    pub n_pairs: usize,
    /// Pairs whose ground-truth relative translation vanishes; left out of
    /// RTA and mAA.
    pub skipped_translation: usize,
}

fn threshold_key(t: f64) -> String {
    format!("{t}")
}

/// Fraction of `errors` strictly below each threshold, by counting.
fn accuracy(errors: &[f64], threshold: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    errors.iter().filter(|&&e| e < threshold).count() as f64 / errors.len() as f64
}

/// Mean average accuracy of per-pair errors over integer thresholds 1..30°.
pub fn mean_average_accuracy(pair_errors: &[f64]) -> f64 {
    let mut sorted = pair_errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 {
        return 0.0;
    }
    let steps = MAA_THRESHOLDS.count() as f64;
    MAA_THRESHOLDS
        .map(|t| sorted.partition_point(|&e| e < t as f64) as f64 / n as f64)
        .sum::<f64>()
        / steps
}

pub fn eval_relative_poses(
    gt: &[RigidPose],
    pred: &[RigidPose],
    thresholds: &[f64],
) -> Result<PoseEvalReport, MetricsError> {
    if thresholds.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(MetricsError::BadThreshold);
    }
    let errors = relative_pose_errors(gt, pred)?;
    let rot: Vec<f64> = errors.iter().map(|e| e.rotation).collect();
    let trans: Vec<f64> = errors.iter().filter_map(|e| e.translation).collect();
    let combined: Vec<f64> = errors
        .iter()
        .filter_map(|e| e.translation.map(|t| t.max(e.rotation)))
        .collect();
    Ok(PoseEvalReport {
        rra_at: thresholds
            .iter()
            .map(|&t| (threshold_key(t), accuracy(&rot, t)))
            .collect(),
        rta_at: thresholds
            .iter()
            .map(|&t| (threshold_key(t), accuracy(&trans, t)))
            .collect(),
        maa: mean_average_accuracy(&combined),
        n_pairs: errors.len(),
        skipped_translation: errors.len() - trans.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceEvalReport {
    /// Mean distance from each predicted point to the ground truth.
    pub accuracy: f64,
    /// Mean distance from each ground-truth point to the prediction.
    pub completeness: f64,
    pub overall: f64,
}

fn mean_nearest(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> f64 {
    let index = NearestIndex::new(to.iter().copied().enumerate().map(|(k, p)| (p, k)).collect());
    from.iter()
        .map(|p| index.nearest(p).expect("nonempty").dist_sq.sqrt())
        .sum::<f64>()
        / from.len() as f64
}

pub fn eval_surface(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Result<SurfaceEvalReport, MetricsError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(MetricsError::EmptyPointSet);
    }
    let accuracy = mean_nearest(pred, gt);
    let completeness = mean_nearest(gt, pred);
    Ok(SurfaceEvalReport {
        accuracy,
        completeness,
        overall: (accuracy + completeness) / 2.0,
    })
}
