//! Pointmaps, depthmaps and confidence maps, plus the exact conversions
//! between them.
//!
//! All grids are stored row-major: pixel `(i, j)` lives at `j * width + i`,
//! where `i` runs along the width and `j` along the height. Pixel `(i, j)`
//! corresponds to image-plane coordinate `(i, j)` with no half-pixel offset.

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{ImageSize, Intrinsics, RigidPose, SimTransform};
use crate::oracle::Scene;

#[derive(Debug, Error, PartialEq)]
pub enum PointmapError {
    #[error("grid has {actual} cells, expected {expected} for a {width}x{height} image")]
    SizeMismatch {
        expected: usize,
        actual: usize,
        width: usize,
        height: usize,
    },
    #[error("valid pixel {index} has a non-finite value")]
    NonFinite { index: usize },
    #[error("confidence at pixel {index} is {value}, must be finite and > 0")]
    BadConfidence { index: usize, value: f64 },
    #[error("image sizes differ: {0:?} vs {1:?}")]
    ShapeMismatch(ImageSize, ImageSize),
    #[error("incomplete scene: view {view} has no depthmap")]
    IncompleteScene { view: usize },
    #[error("scene has no view {view}")]
    MissingView { view: usize },
}

fn check_len(size: ImageSize, len: usize) -> Result<(), PointmapError> {
    if size.len() != len {
        return Err(PointmapError::SizeMismatch {
            expected: size.len(),
            actual: len,
            width: size.width,
            height: size.height,
        });
    }
    Ok(())
}

/// Dense grid of 3D points with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Pointmap {
    size: ImageSize,
    points: Vec<Vector3<f64>>,
    valid: Vec<bool>,
}

impl Pointmap {
    pub fn new(size: ImageSize, points: Vec<Vector3<f64>>, valid: Vec<bool>) -> Result<Self, PointmapError> {
        check_len(size, points.len())?;
        check_len(size, valid.len())?;
        if let Some(index) = points
            .iter()
            .zip(&valid)
            .position(|(p, &v)| v && !p.iter().all(|c| c.is_finite()))
        {
            return Err(PointmapError::NonFinite { index });
        }
        Ok(Self { size, points, valid })
    }

    /// Every finite point is valid.
    pub fn from_points(size: ImageSize, points: Vec<Vector3<f64>>) -> Result<Self, PointmapError> {
        let valid = points.iter().map(|p| p.iter().all(|c| c.is_finite())).collect();
        Self::new(size, points, valid)
    }

    /// Builds a pointmap from `f(i, j)`; `None` marks the pixel invalid.
    pub fn from_fn(size: ImageSize, mut f: impl FnMut(usize, usize) -> Option<Vector3<f64>>) -> Self {
        let mut points = Vec::with_capacity(size.len());
        let mut valid = Vec::with_capacity(size.len());
        for j in 0..size.height {
            for i in 0..size.width {
                match f(i, j) {
                    Some(p) if p.iter().all(|c| c.is_finite()) => {
                        points.push(p);
                        valid.push(true);
                    }
                    _ => {
                        points.push(Vector3::zeros());
                        valid.push(false);
                    }
                }
            }
        }
        Self { size, points, valid }
    }

    pub fn size(&self) -> ImageSize {
        self.size
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn point(&self, index: usize) -> &Vector3<f64> {
        &self.points[index]
    }

    #[inline]
    pub fn is_valid(&self, index: usize) -> bool {
        self.valid[index]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// `(linear index, point)` for every valid pixel, row-major.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, &Vector3<f64>)> + '_ {
        self.points
            .iter()
            .zip(&self.valid)
            .enumerate()
            .filter_map(|(k, (p, &v))| v.then_some((k, p)))
    }

    /// Applies `f` to every valid point; invalid pixels stay invalid.
    pub fn map_points(&self, mut f: impl FnMut(&Vector3<f64>) -> Vector3<f64>) -> Self {
        let mut out = self.clone();
        for (p, &v) in out.points.iter_mut().zip(&self.valid) {
            if v {
                *p = f(p);
            }
        }
        out.revalidate();
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map_points(|p| p * s)
    }

    pub fn transformed(&self, t: &SimTransform) -> Self {
        self.map_points(|p| t.apply(p))
    }

    /// Marks additional pixels invalid. A pixel never goes from invalid to valid.
    pub fn restrict(&self, mask: &[bool]) -> Self {
        let mut out = self.clone();
        for (v, &m) in out.valid.iter_mut().zip(mask) {
            *v = *v && m;
        }
        out
    }

    fn revalidate(&mut self) {
        for (p, v) in self.points.iter().zip(self.valid.iter_mut()) {
            if *v && !p.iter().all(|c| c.is_finite()) {
                *v = false;
            }
        }
    }
}

/// Per-pixel depth along the camera z axis.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    size: ImageSize,
    depth: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Pixels whose depth is not finite and positive are forced invalid.
    pub fn new(size: ImageSize, depth: Vec<f64>, valid: Vec<bool>) -> Result<Self, PointmapError> {
        check_len(size, depth.len())?;
        check_len(size, valid.len())?;
        let valid = depth
            .iter()
            .zip(valid)
            .map(|(d, v)| v && d.is_finite() && *d > 0.0)
            .collect();
        Ok(Self { size, depth, valid })
    }

    /// Every finite positive depth is valid.
    pub fn from_depths(size: ImageSize, depth: Vec<f64>) -> Result<Self, PointmapError> {
        let valid = vec![true; depth.len()];
        Self::new(size, depth, valid)
    }

    pub fn size(&self) -> ImageSize {
        self.size
    }

    pub fn depths(&self) -> &[f64] {
        &self.depth
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn depth(&self, index: usize) -> f64 {
        self.depth[index]
    }

    #[inline]
    pub fn is_valid(&self, index: usize) -> bool {
        self.valid[index]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.depth
            .iter()
            .zip(&self.valid)
            .enumerate()
            .filter_map(|(k, (&d, &v))| v.then_some((k, d)))
    }

    pub fn scaled(&self, s: f64) -> Self {
        let depth = self.depth.iter().map(|d| d * s).collect();
        // `new` re-derives validity, so a nonpositive scale only shrinks the mask.
        Self::new(self.size, depth, self.valid.clone()).expect("same size")
    }
}

/// Strictly positive per-pixel weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMap {
    size: ImageSize,
    weight: Vec<f64>,
}

impl ConfidenceMap {
    pub fn new(size: ImageSize, weight: Vec<f64>) -> Result<Self, PointmapError> {
        check_len(size, weight.len())?;
        if let Some((index, &value)) = weight.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
            return Err(PointmapError::BadConfidence { index, value });
        }
        Ok(Self { size, weight })
    }

    pub fn uniform(size: ImageSize, value: f64) -> Self {
        Self::new(size, vec![value; size.len()]).expect("uniform confidence must be positive")
    }

    pub fn size(&self) -> ImageSize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    #[inline]
    pub fn weight(&self, index: usize) -> f64 {
        self.weight[index]
    }
}

/// One branch of a pairwise prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewPrediction {
    pub points: Pointmap,
    pub confidence: ConfidenceMap,
}

impl ViewPrediction {
    pub fn new(points: Pointmap, confidence: ConfidenceMap) -> Result<Self, PointmapError> {
        if points.size() != confidence.size() {
            return Err(PointmapError::ShapeMismatch(points.size(), confidence.size()));
        }
        Ok(Self { points, confidence })
    }

    /// Sum of confidence over valid pixels, with the pixel count.
    pub fn confidence_sum(&self) -> (f64, usize) {
        self.points
            .iter_valid()
            .fold((0.0, 0), |(s, n), (k, _)| (s + self.confidence.weight(k), n + 1))
    }
}

/// Output of a two-view predictor for images `(I¹, I²)`. Both pointmaps are
/// expressed in the camera frame of the first image.
#[derive(Clone, Debug, PartialEq)]
pub struct PairPrediction {
    pub view1: ViewPrediction,
    pub view2: ViewPrediction,
}

impl PairPrediction {
    pub fn new(view1: ViewPrediction, view2: ViewPrediction) -> Self {
        Self { view1, view2 }
    }

    /// Average confidence across the valid pixels of both views.
    pub fn mean_confidence(&self) -> f64 {
        let (s1, n1) = self.view1.confidence_sum();
        let (s2, n2) = self.view2.confidence_sum();
        if n1 + n2 == 0 {
            return 0.0;
        }
        (s1 + s2) / (n1 + n2) as f64
    }

    /// Applies a similarity to both pointmaps, keeping confidences.
    pub fn transformed(&self, t: &SimTransform) -> Self {
        Self {
            view1: ViewPrediction {
                points: self.view1.points.transformed(t),
                confidence: self.view1.confidence.clone(),
            },
            view2: ViewPrediction {
                points: self.view2.points.transformed(t),
                confidence: self.view2.confidence.clone(),
            },
        }
    }
}

/// Ground-truth pair: both pointmaps in the first view's camera frame.
#[derive(Clone, Debug, PartialEq)]
pub struct GtPair {
    pub view1: Pointmap,
    pub view2: Pointmap,
}

/// `X_{i,j} = K⁻¹ [i·D, j·D, D]ᵀ` on every valid pixel.
pub fn depth_to_pointmap(depth: &DepthMap, intrinsics: &Intrinsics) -> Pointmap {
    let size = depth.size();
    let mut points = Vec::with_capacity(size.len());
    for j in 0..size.height {
        for i in 0..size.width {
            let k = size.index(i, j);
            points.push(if depth.is_valid(k) {
                intrinsics.backproject(i as f64, j as f64, depth.depth(k))
            } else {
                Vector3::zeros()
            });
        }
    }
    let mut pm = Pointmap {
        size,
        points,
        valid: depth.valid().to_vec(),
    };
    pm.revalidate();
    pm
}

/// Depth is the z component; pixels with `z ≤ 0` become invalid.
pub fn pointmap_to_depth(pm: &Pointmap) -> DepthMap {
    let depth: Vec<f64> = pm
        .points()
        .iter()
        .zip(pm.valid())
        .map(|(p, &v)| if v { p.z } else { 0.0 })
        .collect();
    DepthMap::new(pm.size(), depth, pm.valid().to_vec()).expect("same size")
}

/// Re-expresses `pm` from `from_pose`'s camera frame into `to_pose`'s:
/// `X' = P_to · P_from⁻¹ · h(X)`.
pub fn change_frame(pm: &Pointmap, from_pose: &RigidPose, to_pose: &RigidPose) -> Pointmap {
    let relative = to_pose.compose(&from_pose.inverse());
    pm.map_points(|p| relative.apply(p))
}

/// Ground-truth pointmaps for views `n` and `m` of `scene`, both in view
/// `n`'s camera frame.
pub fn make_gt_pair(scene: &Scene, n: usize, m: usize) -> Result<GtPair, PointmapError> {
    let self_frame = |v: usize| -> Result<(Pointmap, RigidPose), PointmapError> {
        let view = scene.views.get(v).ok_or(PointmapError::MissingView { view: v })?;
        let depth = view.depth.as_ref().ok_or(PointmapError::IncompleteScene { view: v })?;
        Ok((depth_to_pointmap(depth, &view.intrinsics), view.pose))
    };
    let (view1, pose_n) = self_frame(n)?;
    let (x_mm, pose_m) = self_frame(m)?;
    let view2 = if n == m {
        view1.clone()
    } else {
        change_frame(&x_mm, &pose_m, &pose_n)
    };
    Ok(GtPair { view1, view2 })
}
