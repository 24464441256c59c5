//! Perspective-n-point with RANSAC.
//!
//! Each hypothesis is built from a 4-point sample: a P3P solve on the first
//! three points yields up to four candidate poses and the fourth point picks
//! the one that reprojects best. The winning hypothesis is refined on its
//! inliers with damped Gauss-Newton on pixel reprojection residuals, and
//! the inlier set is re-derived after each refit with a cut that shrinks to
//! the spread of the fitted residuals.

use nalgebra::{DMatrix, Matrix3, Matrix6, Vector2, Vector3, Vector6};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::procrustes::rigid_points;
use super::RecoveryError;
use crate::geometry::{renormalize, Intrinsics, RigidPose};
use nalgebra::UnitQuaternion;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Reprojection error threshold, in pixels.
    pub inlier_threshold: f64,
    /// Early-exit confidence in (0, 1).
    pub confidence: f64,
    pub rng_seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1024,
            inlier_threshold: 4.0,
            confidence: 0.999,
            rng_seed: 0,
        }
    }
}

impl RansacConfig {
    fn validate(&self) -> Result<(), RecoveryError> {
        if self.max_iterations == 0 {
            return Err(RecoveryError::Config("max_iterations must be >= 1"));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(RecoveryError::Config("inlier_threshold must be > 0"));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(RecoveryError::Config("confidence must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PnpResult {
    pub pose: RigidPose,
    pub inliers: Vec<bool>,
    /// RANSAC hypotheses evaluated.
    pub iterations: usize,
}

impl PnpResult {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// Pixel reprojection error; infinite for points at or behind the camera.
#[inline]
pub fn reprojection_error(
    pose: &RigidPose,
    intrinsics: &Intrinsics,
    point: &Vector3<f64>,
    pixel: &Vector2<f64>,
) -> f64 {
    let pc = pose.apply(point);
    if pc.z <= 0.0 {
        return f64::INFINITY;
    }
    (intrinsics.project(&pc) - pixel).norm()
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

fn poly_deriv_eval(c: &[f64], x: f64) -> f64 {
    c.iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (k, &ck)| acc * x + k as f64 * ck)
}

/// Real roots of `Σ c_k x^k` (ascending coefficients), Newton-polished.
fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let mut c: Vec<f64> = coeffs.iter().map(|x| x / scale).collect();
    while c.len() > 1 && c.last().unwrap().abs() < 1e-14 {
        c.pop();
    }
    let degree = c.len() - 1;
    if degree == 0 {
        return Vec::new();
    }
    let lead = c[degree];
    let mut companion = DMatrix::<f64>::zeros(degree, degree);
    for k in 0..degree {
        companion[(0, k)] = -c[degree - 1 - k] / lead;
        if k + 1 < degree {
            companion[(k + 1, k)] = 1.0;
        }
    }
    companion
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..8 {
                let d = poly_deriv_eval(&c, x);
                if d == 0.0 {
                    break;
                }
                let step = poly_eval(&c, x) / d;
                x -= step;
                if step.abs() <= 1e-16 * (1.0 + x.abs()) {
                    break;
                }
            }
            x
        })
        .collect()
}

/// Newton refinement of the ray distances against the three law-of-cosines
/// constraints.
fn refine_distances(s: Vector3<f64>, d2: [f64; 3], cos: [f64; 3]) -> Vector3<f64> {
    // Constraint k involves rays (p, q): s_p² + s_q² − 2 s_p s_q cos_k = d2_k.
    const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];
    let residual = |s: &Vector3<f64>| {
        Vector3::from_fn(|k, _| {
            let (p, q) = PAIRS[k];
            s[p] * s[p] + s[q] * s[q] - 2.0 * s[p] * s[q] * cos[k] - d2[k]
        })
    };
    let mut s = s;
    let mut r = residual(&s);
    for _ in 0..5 {
        let mut j = Matrix3::zeros();
        for (k, &(p, q)) in PAIRS.iter().enumerate() {
            j[(k, p)] = 2.0 * s[p] - 2.0 * s[q] * cos[k];
            j[(k, q)] = 2.0 * s[q] - 2.0 * s[p] * cos[k];
        }
        let Some(step) = j.lu().solve(&r) else { break };
        let next = s - step;
        let rn = residual(&next);
        if rn.norm() >= r.norm() {
            break;
        }
        s = next;
        r = rn;
    }
    s
}

/// All poses `P` with `P·X_k` on the ray of unit bearing `b_k`, k = 0..3.
pub fn p3p(world: &[Vector3<f64>; 3], bearings: &[Vector3<f64>; 3]) -> Vec<RigidPose> {
    let b: [Vector3<f64>; 3] = std::array::from_fn(|k| bearings[k].normalize());
    // cos_ab between rays 0,1; cos_ac rays 0,2; cos_bc rays 1,2.
    let (cos_ab, cos_ac, cos_bc) = (b[0].dot(&b[1]), b[0].dot(&b[2]), b[1].dot(&b[2]));
    let ab2 = (world[0] - world[1]).norm_squared();
    let ac2 = (world[0] - world[2]).norm_squared();
    let bc2 = (world[1] - world[2]).norm_squared();
    if ab2 == 0.0 || ac2 == 0.0 || bc2 == 0.0 {
        return Vec::new();
    }

    // With s_1 = u s_0 and s_2 = v s_0, eliminating s_0 gives u = N(v)/M(v)
    // and a quartic in v:  ac²(M² + N² − 2 cos_ab N M) − ab² (1 − 2 cos_ac v + v²) M² = 0.
    let diff = bc2 - ab2;
    let numer = [diff + ac2, -2.0 * cos_ac * diff, diff - ac2];
    let denom = [2.0 * ac2 * cos_ab, -2.0 * ac2 * cos_bc];
    let ray_ac = [1.0, -2.0 * cos_ac, 1.0];
    let mm = poly_mul(&denom, &denom);
    let nn = poly_mul(&numer, &numer);
    let nm = poly_mul(&numer, &denom);
    let rhs = poly_mul(&ray_ac, &mm);
    let coef = |p: &[f64], k: usize| p.get(k).copied().unwrap_or(0.0);
    let quartic: Vec<f64> = (0..5)
        .map(|k| {
            let lhs = coef(&mm, k) + coef(&nn, k) - 2.0 * cos_ab * coef(&nm, k);
            ac2 * lhs - ab2 * coef(&rhs, k)
        })
        .collect();

    let mut poses = Vec::new();
    for v in real_roots(&quartic) {
        let m = poly_eval(&denom, v);
        let along = poly_eval(&ray_ac, v);
        if m.abs() < 1e-14 || along <= 0.0 {
            continue;
        }
        let u = poly_eval(&numer, v) / m;
        let s0 = (ac2 / along).sqrt();
        let s = Vector3::new(s0, u * s0, v * s0);
        if s.iter().any(|&x| !(x > 0.0)) {
            continue;
        }
        let s = refine_distances(s, [ab2, ac2, bc2], [cos_ab, cos_ac, cos_bc]);
        let cam: Vec<_> = (0..3).map(|k| b[k] * s[k]).collect();
        if let Ok(pose) = rigid_points(world, &cam, &[1.0; 3]) {
            poses.push(pose);
        }
    }
    poses
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn reprojection_cost(
    pose: &RigidPose,
    pixels: &[Vector2<f64>],
    points: &[Vector3<f64>],
    k: &Intrinsics,
    mask: &[bool],
) -> f64 {
    let mut cost = 0.0;
    for ((u, x), &m) in pixels.iter().zip(points).zip(mask) {
        if m {
            let pc = pose.apply(x);
            if pc.z <= 0.0 {
                return f64::INFINITY;
            }
            cost += (k.project(&pc) - u).norm_squared();
        }
    }
    cost
}

/// Levenberg-Marquardt on squared pixel residuals over `mask`.
pub fn refine_pose(
    pose: &RigidPose,
    pixels: &[Vector2<f64>],
    points: &[Vector3<f64>],
    intrinsics: &Intrinsics,
    mask: &[bool],
) -> RigidPose {
    let f = intrinsics.focal;
    let mut pose = *pose;
    let mut cost = reprojection_cost(&pose, pixels, points, intrinsics, mask);
    if !cost.is_finite() {
        return pose;
    }
    let mut lambda = 1e-6;
    for _ in 0..30 {
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for ((u, x), &m) in pixels.iter().zip(points).zip(mask) {
            if !m {
                continue;
            }
            let rx = pose.rotation * x;
            let pc = rx + pose.translation;
            let r = intrinsics.project(&pc) - u;
            let (iz, iz2) = (1.0 / pc.z, 1.0 / (pc.z * pc.z));
            let jp = nalgebra::Matrix2x3::new(f * iz, 0.0, -f * pc.x * iz2, 0.0, f * iz, -f * pc.y * iz2);
            let mut j = nalgebra::Matrix2x6::<f64>::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(jp * -skew(&rx)));
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&jp);
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut damped = jtj;
            for d in 0..6 {
                damped[(d, d)] += lambda * (1.0 + jtj[(d, d)]);
            }
            let Some(delta) = damped.cholesky().map(|c| c.solve(&-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let dr = UnitQuaternion::from_scaled_axis(Vector3::new(delta[0], delta[1], delta[2]));
            let candidate = RigidPose::new(
                renormalize(dr * pose.rotation),
                pose.translation + Vector3::new(delta[3], delta[4], delta[5]),
            );
            let c = reprojection_cost(&candidate, pixels, points, intrinsics, mask);
            if c < cost {
                let rel = (cost - c) / cost.max(f64::MIN_POSITIVE);
                pose = candidate;
                cost = c;
                lambda = (lambda * 0.1).max(1e-12);
                improved = rel > 1e-15;
                break;
            }
            lambda *= 10.0;
        }
        if !improved || cost == 0.0 {
            break;
        }
    }
    pose
}

fn inlier_mask(
    pose: &RigidPose,
    pixels: &[Vector2<f64>],
    points: &[Vector3<f64>],
    k: &Intrinsics,
    threshold: f64,
) -> Vec<bool> {
    pixels
        .iter()
        .zip(points)
        .map(|(u, x)| reprojection_error(pose, k, x, u) < threshold)
        .collect()
}

/// Refit rounds after RANSAC; each refits on the inliers and re-derives them.
const MAX_REFITS: usize = 8;

/// Inlier cut for the next refit: four robust standard deviations of the
/// current inliers' residuals, never above `threshold` and never below
/// `threshold / 1000`. Outliers that fall inside `threshold` by chance sit
/// far outside the residual spread of a well-fit pose and get dropped here.
fn trimmed_threshold(
    pose: &RigidPose,
    pixels: &[Vector2<f64>],
    points: &[Vector3<f64>],
    k: &Intrinsics,
    mask: &[bool],
    threshold: f64,
) -> f64 {
    let mut res: Vec<f64> = pixels
        .iter()
        .zip(points)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((u, x), _)| reprojection_error(pose, k, x, u))
        .collect();
    if res.is_empty() {
        return threshold;
    }
    let mid = (res.len() - 1) / 2;
    let (_, median, _) = res.select_nth_unstable_by(mid, f64::total_cmp);
    let sigma = 1.4826 * *median;
    (4.0 * sigma).clamp(threshold * 1e-3, threshold)
}

/// Robust pose (world-to-camera) from 2D pixels and their 3D world points.
pub fn pnp_ransac(
    pixels: &[Vector2<f64>],
    points: &[Vector3<f64>],
    intrinsics: &Intrinsics,
    cfg: &RansacConfig,
) -> Result<PnpResult, RecoveryError> {
    cfg.validate()?;
    if pixels.len() != points.len() {
        return Err(RecoveryError::ShapeMismatch);
    }
    let n = pixels.len();
    if n < 4 {
        return Err(RecoveryError::InsufficientData { needed: 4, got: n });
    }
    if !intrinsics.is_valid() {
        return Err(RecoveryError::Config("invalid intrinsics"));
    }
    let bearings: Vec<Vector3<f64>> = pixels
        .iter()
        .map(|u| intrinsics.backproject(u.x, u.y, 1.0).normalize())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut best: Option<(RigidPose, usize)> = None;
    let mut needed = cfg.max_iterations;
    let mut iterations = 0;
    while iterations < needed.min(cfg.max_iterations) {
        iterations += 1;
        let sample = index::sample(&mut rng, n, 4).into_vec();
        let world = [points[sample[0]], points[sample[1]], points[sample[2]]];
        let rays = [bearings[sample[0]], bearings[sample[1]], bearings[sample[2]]];
        let check = sample[3];
        let Some(pose) = p3p(&world, &rays)
            .into_iter()
            .map(|p| (reprojection_error(&p, intrinsics, &points[check], &pixels[check]), p))
            .filter(|(e, _)| e.is_finite())
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, p)| p)
        else {
            continue;
        };
        let count = pixels
            .iter()
            .zip(points)
            .filter(|(u, x)| reprojection_error(&pose, intrinsics, x, u) < cfg.inlier_threshold)
            .count();
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((pose, count));
            let ratio = count as f64 / n as f64;
            let miss = 1.0 - ratio.powi(4);
            needed = if miss <= 0.0 {
                0
            } else if miss >= 1.0 {
                cfg.max_iterations
            } else {
                ((1.0 - cfg.confidence).ln() / miss.ln()).ceil().max(1.0) as usize
            };
        }
    }
    let (mut pose, count) = best.ok_or(RecoveryError::PoseNotFound { inliers: 0 })?;
    if count < 4 {
        return Err(RecoveryError::PoseNotFound { inliers: count });
    }
    let mut inliers = inlier_mask(&pose, pixels, points, intrinsics, cfg.inlier_threshold);
    for _ in 0..MAX_REFITS {
        pose = refine_pose(&pose, pixels, points, intrinsics, &inliers);
        let cut = trimmed_threshold(&pose, pixels, points, intrinsics, &inliers, cfg.inlier_threshold);
        let next = inlier_mask(&pose, pixels, points, intrinsics, cut);
        if next.iter().filter(|&&b| b).count() < 4 {
            break;
        }
        let same = next == inliers;
        inliers = next;
        if same {
            break;
        }
    }
    Ok(PnpResult {
        pose,
        inliers,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> RigidPose {
        RigidPose::new(
            UnitQuaternion::from_euler_angles(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-3.0..3.0),
            ),
            Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ),
        )
    }

    /// World points in front of `pose`'s camera, with their exact pixels.
    fn scene(
        rng: &mut ChaCha8Rng,
        pose: &RigidPose,
        k: &Intrinsics,
        n: usize,
    ) -> (Vec<Vector2<f64>>, Vec<Vector3<f64>>) {
        let inv = pose.inverse();
        (0..n)
            .map(|_| {
                let pc = Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(3.0..8.0),
                );
                (k.project(&pc), inv.apply(&pc))
            })
            .unzip()
    }

    #[test]
    fn quartic_roots() {
        // (x−1)(x+2)(x−3)(x+0.5)
        let c = poly_mul(
            &poly_mul(&[-1.0, 1.0], &[2.0, 1.0]),
            &poly_mul(&[-3.0, 1.0], &[0.5, 1.0]),
        );
        let mut r = real_roots(&c);
        r.sort_by(f64::total_cmp);
        let expected = [-2.0, -0.5, 1.0, 3.0];
        for (a, b) in r.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn p3p_contains_true_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let k = Intrinsics::new(500.0, Vector2::new(320.0, 240.0));
        for _ in 0..200 {
            let pose = random_pose(&mut rng);
            let (px, pts) = scene(&mut rng, &pose, &k, 3);
            let rays: [Vector3<f64>; 3] = std::array::from_fn(|i| k.backproject(px[i].x, px[i].y, 1.0));
            let sols = p3p(&[pts[0], pts[1], pts[2]], &rays);
            let best = sols
                .iter()
                .map(|s| s.rotation.angle_to(&pose.rotation) + (s.translation - pose.translation).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-7, "best error {best} over {} solutions", sols.len());
        }
    }

    #[test]
    fn ransac_noiseless() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = Intrinsics::new(400.0, Vector2::new(200.0, 150.0));
        let pose = random_pose(&mut rng);
        let (px, pts) = scene(&mut rng, &pose, &k, 60);
        let res = pnp_ransac(&px, &pts, &k, &RansacConfig::default()).unwrap();
        assert!(res.pose.rotation.angle_to(&pose.rotation) < 1e-9);
        assert!((res.pose.translation - pose.translation).norm() < 1e-9);
        assert_eq!(res.inlier_count(), 60);
    }

    #[test]
    fn three_points_rejected() {
        let k = Intrinsics::new(100.0, Vector2::zeros());
        let err = pnp_ransac(
            &[Vector2::zeros(); 3],
            &[Vector3::zeros(); 3],
            &k,
            &RansacConfig::default(),
        );
        assert_eq!(err, Err(RecoveryError::InsufficientData { needed: 4, got: 3 }));
    }
}
