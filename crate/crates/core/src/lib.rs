//! Pointmap-based two-view and multi-view 3D reconstruction.
//!
//! A pointmap assigns a 3D point to every pixel of an image. Given pointmaps
//! predicted for image pairs, this crate recovers intrinsics, relative and
//! absolute poses, and a globally consistent reconstruction, and scores the
//! results. A synthetic scene generator supplies exact ground truth.

// `!(x > 0.0)` is used on purpose so NaN lands in the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod geometry;
pub mod io;
pub mod kdtree;
pub mod loss;
pub mod metrics;
pub mod oracle;
pub mod pointmap;
pub mod recovery;

pub use geometry::{ImageSize, Intrinsics, RigidPose, SimTransform};
pub use pointmap::{ConfidenceMap, DepthMap, PairPrediction, Pointmap, ViewPrediction};
