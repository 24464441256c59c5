//! Synthetic ground truth: analytic scenes, exact depthmaps and corrupted
//! pair predictions standing in for a learned pointmap regressor.
//!
//! All randomness comes from `ChaCha8Rng` seeded with `seed_from_u64`.

mod noise;
mod raycast;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ImageSize, Intrinsics, RigidPose};
use crate::pointmap::{DepthMap, Pointmap};

pub use noise::{predict_pair, NoiseModel};
pub use raycast::{cast, Primitive, MAX_MESH_TRIANGLES};

/// Name of the generator behind every oracle stream.
pub const RNG_ALGORITHM: &str = "chacha8";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("scene spec requests no views")]
    NoViews,
    #[error("scene spec has no geometry")]
    EmptyGeometry,
    #[error("blind camera: view {view} sees no geometry")]
    BlindCamera { view: usize },
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("view {view} does not exist")]
    MissingView { view: usize },
    #[error("invalid noise model: {0}")]
    InvalidNoise(&'static str),
}

/// Randomized orbit around the geometry centroid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrbitSpec {
    pub radius: f64,
    /// Total azimuth span covered by the views, in degrees.
    pub arc_degrees: f64,
    /// Camera offset along world y; negative is above (y points down).
    pub elevation: f64,
    /// Uniform azimuth jitter per view, in degrees.
    pub azimuth_jitter: f64,
    /// Uniform relative jitter on the radius.
    pub radius_jitter: f64,
    pub elevation_jitter: f64,
}

impl Default for OrbitSpec {
    fn default() -> Self {
        Self {
            radius: 4.0,
            arc_degrees: 90.0,
            elevation: -1.0,
            azimuth_jitter: 5.0,
            radius_jitter: 0.1,
            elevation_jitter: 0.2,
        }
    }
}

/// An explicitly placed camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    #[serde(default)]
    pub focal: Option<f64>,
}

/// JSON-facing scene description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels; defaults to the image width.
    #[serde(default)]
    pub focal: Option<f64>,
    /// Uniform relative jitter applied to each orbit view's focal.
    #[serde(default)]
    pub focal_jitter: f64,
    /// Number of orbit views; ignored when `cameras` is nonempty.
    #[serde(default)]
    pub views: usize,
    #[serde(default)]
    pub orbit: OrbitSpec,
    #[serde(default)]
    pub cameras: Vec<CameraSpec>,
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_depth")]
    pub max_depth: f64,
}

fn default_max_depth() -> f64 {
    1e3
}

/// One rendered camera. `depth` is `None` only for scenes loaded without
/// ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneView {
    pub intrinsics: Intrinsics,
    pub pose: RigidPose,
    pub size: ImageSize,
    pub depth: Option<DepthMap>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub views: Vec<SceneView>,
    pub geometry: Vec<Primitive>,
    pub seed: u64,
    pub max_depth: f64,
}

/// World-to-camera pose of a camera at `position` looking at `target`,
/// with image rows pointing along world `+y` as far as possible.
pub fn look_at(position: &Vector3<f64>, target: &Vector3<f64>) -> Option<RigidPose> {
    let forward = (target - position).try_normalize(1e-12)?;
    let down_hint = Vector3::new(0.0, 1.0, 0.0);
    let right = down_hint
        .cross(&forward)
        .try_normalize(1e-9)
        .or_else(|| Vector3::new(0.0, 0.0, -1.0).cross(&forward).try_normalize(1e-9))?;
    let down = forward.cross(&right);
    // Columns of the camera-to-world rotation are the camera axes in world.
    let cam_to_world = Matrix3::from_columns(&[right, down, forward]);
    let r = cam_to_world.transpose();
    Some(RigidPose::from_matrix(&r, -(r * position)))
}

fn v3(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

impl SceneSpec {
    fn validate(&self) -> Result<(), OracleError> {
        if self.cameras.is_empty() && self.views == 0 {
            return Err(OracleError::NoViews);
        }
        if self.primitives.is_empty() {
            return Err(OracleError::EmptyGeometry);
        }
        if ImageSize::new(self.width, self.height).is_none() {
            return Err(OracleError::InvalidSpec("image dimensions must be >= 1".into()));
        }
        if let Some(f) = self.focal {
            if !(f > 0.0 && f.is_finite()) {
                return Err(OracleError::InvalidSpec("focal must be positive".into()));
            }
        }
        if !(0.0..1.0).contains(&self.focal_jitter) {
            return Err(OracleError::InvalidSpec("focal_jitter must lie in [0, 1)".into()));
        }
        if !(self.max_depth > 0.0) {
            return Err(OracleError::InvalidSpec("max_depth must be positive".into()));
        }
        let o = &self.orbit;
        if !(o.radius > 0.0) || !(0.0..1.0).contains(&o.radius_jitter) {
            return Err(OracleError::InvalidSpec("orbit radius must be positive".into()));
        }
        for p in &self.primitives {
            p.validate().map_err(OracleError::InvalidSpec)?;
        }
        Ok(())
    }

    /// Mean of the bounded primitives' centroids, or the origin.
    pub fn centroid(&self) -> Vector3<f64> {
        let cs: Vec<_> = self.primitives.iter().filter_map(Primitive::centroid).collect();
        if cs.is_empty() {
            Vector3::zeros()
        } else {
            cs.iter().sum::<Vector3<f64>>() / cs.len() as f64
        }
    }

    fn cameras(&self, rng: &mut ChaCha8Rng) -> Result<Vec<(Intrinsics, RigidPose)>, OracleError> {
        let size = ImageSize::new(self.width, self.height).expect("validated");
        let base_focal = self.focal.unwrap_or(self.width as f64);
        let bad_camera = |k: usize| OracleError::InvalidSpec(format!("camera {k} has no viewing direction"));
        if !self.cameras.is_empty() {
            return self
                .cameras
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    let pose = look_at(&v3(&c.position), &v3(&c.look_at)).ok_or_else(|| bad_camera(k))?;
                    let f = c.focal.unwrap_or(base_focal);
                    if !(f > 0.0 && f.is_finite()) {
                        return Err(OracleError::InvalidSpec(format!("camera {k} focal must be positive")));
                    }
                    Ok((Intrinsics::centered(f, size), pose))
                })
                .collect();
        }
        let o = &self.orbit;
        let target = self.centroid();
        let n = self.views;
        (0..n)
            .map(|k| {
                let frac = if n == 1 { 0.5 } else { k as f64 / (n - 1) as f64 };
                let jitter = |rng: &mut ChaCha8Rng, amp: f64| {
                    if amp > 0.0 {
                        rng.random_range(-amp..=amp)
                    } else {
                        0.0
                    }
                };
                let azimuth = ((frac - 0.5) * o.arc_degrees + jitter(rng, o.azimuth_jitter)).to_radians();
                let radius = o.radius * (1.0 + jitter(rng, o.radius_jitter));
                let elevation = o.elevation + jitter(rng, o.elevation_jitter);
                let focal = base_focal * (1.0 + jitter(rng, self.focal_jitter));
                let position = target + Vector3::new(radius * azimuth.sin(), elevation, -radius * azimuth.cos());
                let pose = look_at(&position, &target).ok_or_else(|| bad_camera(k))?;
                Ok((Intrinsics::centered(focal, size), pose))
            })
            .collect()
    }
}

impl Scene {
    pub fn view(&self, v: usize) -> Result<&SceneView, OracleError> {
        self.views.get(v).ok_or(OracleError::MissingView { view: v })
    }

    /// Ray parameter of the nearest hit from `origin` along `direction`.
    pub fn cast_ray(&self, origin: &Vector3<f64>, direction: &Vector3<f64>) -> Option<f64> {
        cast(&self.geometry, origin, direction, f64::INFINITY)
    }

    /// Depth seen by pixel `(u, v)` of camera `(intrinsics, pose)`.
    ///
    /// The ray direction has unit z in the camera frame, so the hit
    /// parameter is the depth itself.
    pub fn render_depth(&self, intrinsics: &Intrinsics, pose: &RigidPose, u: f64, v: f64) -> Option<f64> {
        let dir_cam = intrinsics.backproject(u, v, 1.0);
        let dir = pose.rotation.inverse() * dir_cam;
        cast(&self.geometry, &pose.center(), &dir, self.max_depth)
    }

    /// Ground-truth world points of view `v`.
    pub fn world_pointmap(&self, v: usize) -> Result<Pointmap, OracleError> {
        let view = self.view(v)?;
        let depth = view.depth.as_ref().ok_or(OracleError::MissingView { view: v })?;
        let inv = view.pose.inverse();
        Ok(crate::pointmap::depth_to_pointmap(depth, &view.intrinsics).map_points(|p| inv.apply(p)))
    }

    /// Per-pixel flags for view `n`: the pixel's surface point is visible,
    /// unoccluded and inside the image of view `m`.
    pub fn covisibility(&self, n: usize, m: usize) -> Result<Vec<bool>, OracleError> {
        let world = self.world_pointmap(n)?;
        let target = self.view(m)?;
        let (w, h) = (target.size.width as f64, target.size.height as f64);
        Ok((0..world.size().len())
            .map(|k| {
                if !world.is_valid(k) {
                    return false;
                }
                let pc = target.pose.apply(world.point(k));
                if pc.z <= 0.0 {
                    return false;
                }
                let uv: Vector2<f64> = target.intrinsics.project(&pc);
                if !(uv.x >= 0.0 && uv.x <= w - 1.0 && uv.y >= 0.0 && uv.y <= h - 1.0) {
                    return false;
                }
                self.render_depth(&target.intrinsics, &target.pose, uv.x, uv.y)
                    .is_some_and(|d| (d - pc.z).abs() <= 1e-6 * pc.z.max(1.0))
            })
            .collect())
    }

    /// Diagonal of the bounding box of all valid world points.
    pub fn scale(&self) -> f64 {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in 0..self.views.len() {
            if let Ok(pm) = self.world_pointmap(v) {
                for (_, p) in pm.iter_valid() {
                    lo = lo.inf(p);
                    hi = hi.sup(p);
                }
            }
        }
        if lo.x.is_finite() {
            (hi - lo).norm()
        } else {
            0.0
        }
    }

    pub fn poses(&self) -> Vec<RigidPose> {
        self.views.iter().map(|v| v.pose).collect()
    }
}

/// Places cameras and renders exact depthmaps. Pure in `(spec, seed)`.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene, OracleError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cameras = spec.cameras(&mut rng)?;
    let size = ImageSize::new(spec.width, spec.height).expect("validated");
    let mut scene = Scene {
        views: Vec::with_capacity(cameras.len()),
        geometry: spec.primitives.clone(),
        seed,
        max_depth: spec.max_depth,
    };
    for (k, (intrinsics, pose)) in cameras.into_iter().enumerate() {
        let mut depth = vec![0.0; size.len()];
        let mut valid = vec![false; size.len()];
        for j in 0..size.height {
            for i in 0..size.width {
                if let Some(d) = scene.render_depth(&intrinsics, &pose, i as f64, j as f64) {
                    let idx = size.index(i, j);
                    depth[idx] = d;
                    valid[idx] = true;
                }
            }
        }
        if !valid.iter().any(|&b| b) {
            return Err(OracleError::BlindCamera { view: k });
        }
        let depth = DepthMap::new(size, depth, valid).expect("sizes match");
        scene.views.push(SceneView {
            intrinsics,
            pose,
            size,
            depth: Some(depth),
        });
    }
    Ok(scene)
}

/// A small scene: floor, back wall, sphere, box and triangle.
pub fn demo_spec(width: usize, height: usize, views: usize) -> SceneSpec {
    SceneSpec {
        width,
        height,
        focal: None,
        focal_jitter: 0.0,
        views,
        orbit: OrbitSpec::default(),
        cameras: Vec::new(),
        primitives: vec![
            Primitive::Quad {
                corner: [-2.0, 1.0, -2.0],
                edge_u: [4.0, 0.0, 0.0],
                edge_v: [0.0, 0.0, 4.0],
            },
            Primitive::Quad {
                corner: [-2.0, -2.0, 2.0],
                edge_u: [4.0, 0.0, 0.0],
                edge_v: [0.0, 3.0, 0.0],
            },
            Primitive::Sphere {
                center: [0.3, 0.2, 0.2],
                radius: 0.8,
            },
            Primitive::AaBox {
                min: [-1.4, 0.0, -0.6],
                max: [-0.6, 1.0, 0.4],
            },
            Primitive::Triangle {
                vertices: [[0.8, 1.0, -0.9], [1.6, 1.0, -0.3], [1.2, -0.2, -0.5]],
            },
        ],
        seed: 0,
        max_depth: default_max_depth(),
    }
}
