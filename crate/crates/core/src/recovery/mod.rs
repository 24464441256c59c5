//! Camera recovery from pointmaps: correspondences, focal length, relative
//! and absolute pose.

mod focal;
mod matching;
mod pnp;
mod pose;
mod procrustes;

pub use focal::{estimate_focal, estimate_focal_detailed, focal_objective, FocalEstimate, FocalSolveConfig};
pub use matching::{match_indices, match_points, Correspondences, Match};
pub use pnp::{p3p, pnp_ransac, refine_pose, reprojection_error, PnpResult, RansacConfig};
pub use pose::{absolute_pose, relative_pose, AbsolutePoseMethod, RelativePose, RelativePoseMethod};
pub use procrustes::{procrustes_points, procrustes_pose, rigid_points};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecoveryError {
    #[error("degenerate configuration: {0}")]
    Degenerate(&'static str),
    #[error("focal unobservable: every usable point lies on the optical axis")]
    FocalUnobservable,
    #[error("need at least {needed} usable points, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("pose not found: best hypothesis has {inliers} inliers")]
    PoseNotFound { inliers: usize },
    #[error("inputs have mismatched sizes")]
    ShapeMismatch,
    #[error("degenerate scale: reference pointmap has {valid} valid pixels, need at least 3")]
    DegenerateScale { valid: usize },
    #[error("invalid configuration: {0}")]
    Config(&'static str),
}
