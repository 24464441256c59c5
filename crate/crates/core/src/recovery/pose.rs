//! Relative and absolute pose from pair predictions.
//!
//! Naming: for images `(I¹, I²)`, `pair12` is the prediction for `(I¹, I²)`
//! holding `X^{1,1}` and `X^{2,1}`; `pair21` holds `X^{2,2}` and `X^{1,2}`.

use nalgebra::{UnitQuaternion, Vector2, Vector3};

use super::focal::{estimate_focal, FocalSolveConfig};
use super::matching::match_indices;
use super::pnp::{pnp_ransac, RansacConfig};
use super::procrustes::procrustes_points;
use super::RecoveryError;
use crate::geometry::{Intrinsics, RigidPose, SimTransform};
use crate::loss::norm_factor;
use crate::pointmap::{PairPrediction, Pointmap};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelativePoseMethod {
    Procrustes,
    Pnp,
}

/// Transform from the first camera's frame to the second camera's frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RelativePose {
    /// From Procrustes; the scale absorbs the two predictions' normalizations.
    Similarity(SimTransform),
    /// From PnP; translation in the units of `pair12`.
    Rigid(RigidPose),
}

impl RelativePose {
    pub fn rotation(&self) -> UnitQuaternion<f64> {
        match self {
            Self::Similarity(s) => s.rotation,
            Self::Rigid(p) => p.rotation,
        }
    }

    pub fn translation(&self) -> Vector3<f64> {
        match self {
            Self::Similarity(s) => s.translation,
            Self::Rigid(p) => p.translation,
        }
    }

    pub fn scale(&self) -> f64 {
        match self {
            Self::Similarity(s) => s.scale,
            Self::Rigid(_) => 1.0,
        }
    }

    pub fn rigid(&self) -> RigidPose {
        RigidPose::new(self.rotation(), self.translation())
    }
}

fn procrustes_relative(pair12: &PairPrediction, pair21: &PairPrediction) -> Result<SimTransform, RecoveryError> {
    let (x11, c11) = (&pair12.view1.points, &pair12.view1.confidence);
    let (x12, c12) = (&pair21.view2.points, &pair21.view2.confidence);
    if x11.size() != x12.size() {
        return Err(RecoveryError::ShapeMismatch);
    }
    let (mut src, mut dst, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for (k, p) in x11.iter_valid() {
        if x12.is_valid(k) {
            src.push(*p);
            dst.push(*x12.point(k));
            w.push(c11.weight(k) * c12.weight(k));
        }
    }
    procrustes_points(&src, &dst, &w)
}

/// Pose of camera 2 relative to camera 1 (maps frame-1 points into frame 2).
///
/// The Procrustes path aligns `X^{1,1}` onto `X^{1,2}` weighted by
/// `C^{1,1}·C^{1,2}`. The PnP path keeps the pixels of `I²` that are mutual
/// nearest neighbors of `X^{1,1}`, pairs each with its own point in `X^{2,1}`
/// and solves PnP with the focal estimated from `X^{2,2}`.
pub fn relative_pose(
    pair12: &PairPrediction,
    pair21: &PairPrediction,
    method: RelativePoseMethod,
    focal_cfg: &FocalSolveConfig,
    ransac_cfg: &RansacConfig,
) -> Result<RelativePose, RecoveryError> {
    match method {
        RelativePoseMethod::Procrustes => procrustes_relative(pair12, pair21).map(RelativePose::Similarity),
        RelativePoseMethod::Pnp => {
            let x22 = &pair21.view1;
            let size2 = x22.points.size();
            let focal = estimate_focal(&x22.points, &x22.confidence, size2, focal_cfg)?;
            let k2 = Intrinsics::centered(focal, size2);
            let x21 = &pair12.view2.points;
            if x21.size() != size2 {
                return Err(RecoveryError::ShapeMismatch);
            }
            let (pixels, points): (Vec<_>, Vec<_>) = match_indices(&pair12.view1.points, x21)
                .into_iter()
                .map(|(_, b, _)| {
                    let (i, j) = size2.pixel(b);
                    (Vector2::new(i as f64, j as f64), *x21.point(b))
                })
                .unzip();
            let res = pnp_ransac(&pixels, &points, &k2, ransac_cfg)?;
            Ok(RelativePose::Rigid(res.pose))
        }
    }
}

/// How to localize a query image against a database image.
#[derive(Clone, Copy, Debug)]
pub enum AbsolutePoseMethod<'a> {
    /// Match in pointmap space, lift database pixels to world through the
    /// ground-truth pointmap, then PnP-RANSAC.
    Pnp,
    /// Procrustes relative pose from `F(I^B, I^Q)` (given here) and
    /// `F(I^Q, I^B)`, rescaled by the ratio of ground-truth to predicted
    /// normalization factors of the database view.
    ScaledRelative { reverse_pair: &'a PairPrediction },
}

/// World-to-camera pose of the query image.
///
/// `query_pair` is `F(I^Q, I^B)`: `view1` is `X^{Q,Q}`, `view2` is `X^{B,Q}`.
/// `db_gt_pointmap` holds world coordinates for the database pixels.
pub fn absolute_pose(
    query_pair: &PairPrediction,
    db_gt_pointmap: &Pointmap,
    db_pose: &RigidPose,
    intrinsics: Option<&Intrinsics>,
    cfg: &RansacConfig,
    method: AbsolutePoseMethod<'_>,
) -> Result<RigidPose, RecoveryError> {
    let x_bq = &query_pair.view2.points;
    if x_bq.size() != db_gt_pointmap.size() {
        return Err(RecoveryError::ShapeMismatch);
    }
    match method {
        AbsolutePoseMethod::Pnp => {
            let x_qq = &query_pair.view1;
            let k = match intrinsics {
                Some(k) => *k,
                None => {
                    let size = x_qq.points.size();
                    let f = estimate_focal(&x_qq.points, &x_qq.confidence, size, &FocalSolveConfig::default())?;
                    Intrinsics::centered(f, size)
                }
            };
            // The 2D location of each matched database pixel in the query
            // image is the projection of its predicted point in the query frame.
            let (pixels, points): (Vec<_>, Vec<_>) = match_indices(&x_qq.points, x_bq)
                .into_iter()
                .filter(|&(_, b, _)| db_gt_pointmap.is_valid(b) && x_bq.point(b).z > 0.0)
                .map(|(_, b, _)| (k.project(x_bq.point(b)), *db_gt_pointmap.point(b)))
                .unzip();
            Ok(pnp_ransac(&pixels, &points, &k, cfg)?.pose)
        }
        AbsolutePoseMethod::ScaledRelative { reverse_pair } => {
            let x_bb = &reverse_pair.view1.points;
            let gt_cam = db_gt_pointmap.map_points(|p| db_pose.apply(p));
            let common: Vec<bool> = (0..x_bb.size().len())
                .map(|k| x_bb.is_valid(k) && gt_cam.is_valid(k))
                .collect();
            let valid = common.iter().filter(|&&b| b).count();
            if valid < 3 {
                return Err(RecoveryError::DegenerateScale { valid });
            }
            let z_gt = norm_factor(&gt_cam.restrict(&common), &empty_like(&gt_cam))
                .map_err(|_| RecoveryError::DegenerateScale { valid })?;
            let z_pred = norm_factor(&x_bb.restrict(&common), &empty_like(x_bb))
                .map_err(|_| RecoveryError::DegenerateScale { valid })?;
            let scale = z_gt / z_pred;
            let rel = procrustes_relative(reverse_pair, query_pair)?;
            let metric = RigidPose::new(rel.rotation, rel.translation * scale);
            Ok(metric.compose(db_pose))
        }
    }
}

fn empty_like(pm: &Pointmap) -> Pointmap {
    pm.restrict(&vec![false; pm.size().len()])
}
