//! Camera and transform primitives.
//!
//! Poses follow a single convention everywhere: a [`RigidPose`] maps *world*
//! coordinates into the *camera* frame (`x_cam = R * x_world + t`).
//! Similarities use the scaled form `y = s * (R * x + t)`, which is the form
//! produced by Procrustes alignment and used for per-pair transforms in
//! global alignment.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Image resolution in pixels. `width` indexes `i`, `height` indexes `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: usize,
    pub height: usize,
}

impl ImageSize {
    /// Returns `None` when either dimension is zero.
    pub fn new(width: usize, height: usize) -> Option<Self> {
        (width >= 1 && height >= 1).then_some(Self { width, height })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major linear index of pixel `(i, j)`.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    /// Inverse of [`ImageSize::index`].
    #[inline]
    pub fn pixel(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    /// The centered principal point `(W/2, H/2)`.
    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(self.width as f64 / 2.0, self.height as f64 / 2.0)
    }
}

/// Pinhole intrinsics with square pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub focal: f64,
    pub principal_point: Vector2<f64>,
}

impl Intrinsics {
    pub fn new(focal: f64, principal_point: Vector2<f64>) -> Self {
        Self { focal, principal_point }
    }

    /// Intrinsics with the principal point at the image center.
    pub fn centered(focal: f64, size: ImageSize) -> Self {
        Self::new(focal, size.center())
    }

    pub fn is_valid(&self) -> bool {
        self.focal.is_finite() && self.focal > 0.0 && self.principal_point.iter().all(|v| v.is_finite())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.focal,
            0.0,
            self.principal_point.x,
            0.0,
            self.focal,
            self.principal_point.y,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Projects a camera-frame point to pixel coordinates.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(
            self.focal * p.x / p.z + self.principal_point.x,
            self.focal * p.y / p.z + self.principal_point.y,
        )
    }

    /// Back-projects pixel `(u, v)` at depth `depth`: `K⁻¹ [u·d, v·d, d]ᵀ`.
    /// The z component is `depth` exactly.
    #[inline]
    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (u - self.principal_point.x) * depth / self.focal,
            (v - self.principal_point.y) * depth / self.focal,
            depth,
        )
    }
}

/// World-to-camera rigid transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidPose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::zeros())
    }

    /// Builds a pose from an orthonormal rotation matrix.
    pub fn from_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self::new(quaternion_from_matrix(rotation), translation)
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Self::new(inv, -(inv * self.translation))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidPose) -> Self {
        let rotation = renormalize(self.rotation * other.rotation);
        Self::new(rotation, self.rotation * other.translation + self.translation)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    pub fn as_similarity(&self) -> SimTransform {
        SimTransform::new(1.0, self.rotation, self.translation)
    }
}

/// Similarity transform `x ↦ s · (R x + t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimTransform {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for SimTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl SimTransform {
    pub fn new(scale: f64, rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            scale,
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(1.0, UnitQuaternion::identity(), Vector3::zeros())
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p + self.translation)
    }

    pub fn inverse(&self) -> Self {
        let inv = self.rotation.inverse();
        Self::new(1.0 / self.scale, inv, -(self.scale * (inv * self.translation)))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &SimTransform) -> Self {
        let rotation = renormalize(self.rotation * other.rotation);
        Self::new(
            self.scale * other.scale,
            rotation,
            self.rotation * other.translation + self.translation / other.scale,
        )
    }

    /// The rigid part `(R, t)`, dropping the scale.
    pub fn rigid(&self) -> RigidPose {
        RigidPose::new(self.rotation, self.translation)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }
}

/// Re-projects a quaternion onto the unit sphere to stop drift after products.
#[inline]
pub fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

/// Unit quaternion of an orthonormal matrix with determinant +1.
pub fn quaternion_from_matrix(m: &Matrix3<f64>) -> UnitQuaternion<f64> {
    renormalize(UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(
        *m,
    )))
}

/// Builds a unit quaternion from `[w, x, y, z]`, normalizing it.
pub fn quaternion_from_wxyz(q: [f64; 4]) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(Quaternion::new(q[0], q[1], q[2], q[3]))
}

/// `[w, x, y, z]` components of a unit quaternion.
pub fn quaternion_to_wxyz(q: &UnitQuaternion<f64>) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

/// Geodesic angle between two rotations, in radians.
pub fn rotation_angle_between(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    a.angle_to(b)
}
