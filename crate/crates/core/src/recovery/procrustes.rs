//! Weighted closed-form similarity alignment (Umeyama).
//!
//! Finds `(σ, R, t)` minimizing `Σ w ‖σ (R x + t) − y‖²`.

use nalgebra::{Matrix3, Vector3};

use super::RecoveryError;
use crate::geometry::{quaternion_from_matrix, RigidPose, SimTransform};
use crate::pointmap::{ConfidenceMap, Pointmap};

/// Relative threshold on the second singular value of the cross-covariance.
const RANK_TOLERANCE: f64 = 1e-10;

struct Moments {
    mean_src: Vector3<f64>,
    mean_dst: Vector3<f64>,
    cross: Matrix3<f64>,
    var_src: f64,
}

fn moments(src: &[Vector3<f64>], dst: &[Vector3<f64>], w: &[f64]) -> Result<Moments, RecoveryError> {
    if src.len() != dst.len() || src.len() != w.len() {
        return Err(RecoveryError::ShapeMismatch);
    }
    let used = w.iter().filter(|&&x| x > 0.0).count();
    if used < 3 {
        return Err(RecoveryError::Degenerate("fewer than 3 weighted points"));
    }
    let total: f64 = w.iter().filter(|&&x| x > 0.0).sum();
    let mut mean_src = Vector3::zeros();
    let mut mean_dst = Vector3::zeros();
    for ((x, y), &wi) in src.iter().zip(dst).zip(w) {
        if wi > 0.0 {
            mean_src += x * wi;
            mean_dst += y * wi;
        }
    }
    mean_src /= total;
    mean_dst /= total;
    let mut cross = Matrix3::zeros();
    let mut var_src = 0.0;
    for ((x, y), &wi) in src.iter().zip(dst).zip(w) {
        if wi > 0.0 {
            let (dx, dy) = (x - mean_src, y - mean_dst);
            cross += dy * dx.transpose() * wi;
            var_src += wi * dx.norm_squared();
        }
    }
    Ok(Moments {
        mean_src,
        mean_dst,
        cross: cross / total,
        var_src: var_src / total,
    })
}

/// Rotation from the cross-covariance with the determinant-sign correction.
/// Returns `(R, Σ d_k s_k)` where `d` is the sign pattern applied.
fn rotation(cross: &Matrix3<f64>) -> Result<(Matrix3<f64>, f64), RecoveryError> {
    let svd = cross.svd(true, true);
    let (u, v_t) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    if !(s[order[0]] > 0.0) || s[order[1]] <= RANK_TOLERANCE * s[order[0]] {
        return Err(RecoveryError::Degenerate("rank-deficient cross-covariance"));
    }
    let mut d = Vector3::new(1.0, 1.0, 1.0);
    if (u.determinant() * v_t.determinant()) < 0.0 {
        d[order[2]] = -1.0;
    }
    let r = u * Matrix3::from_diagonal(&d) * v_t;
    Ok((r, s.dot(&d)))
}

/// Weighted similarity from `src` to `dst` over point lists.
pub fn procrustes_points(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
    weights: &[f64],
) -> Result<SimTransform, RecoveryError> {
    let m = moments(src, dst, weights)?;
    if !(m.var_src > 0.0) {
        return Err(RecoveryError::Degenerate("source points coincide"));
    }
    let (r, trace) = rotation(&m.cross)?;
    let scale = trace / m.var_src;
    if !(scale > 0.0) {
        return Err(RecoveryError::Degenerate("nonpositive scale"));
    }
    // y ≈ σ R x + t'  with  t' = μy − σ R μx,  and  t = t' / σ.
    let t = (m.mean_dst - scale * r * m.mean_src) / scale;
    Ok(SimTransform::new(scale, quaternion_from_matrix(&r), t))
}

/// Weighted rigid transform (no scale) from `src` to `dst`: `y ≈ R x + t`.
pub fn rigid_points(src: &[Vector3<f64>], dst: &[Vector3<f64>], weights: &[f64]) -> Result<RigidPose, RecoveryError> {
    let m = moments(src, dst, weights)?;
    let (r, _) = rotation(&m.cross)?;
    Ok(RigidPose::from_matrix(&r, m.mean_dst - r * m.mean_src))
}

/// Similarity aligning `src` onto `dst` over pixels valid in both, weighted
/// by `weights`.
pub fn procrustes_pose(src: &Pointmap, dst: &Pointmap, weights: &ConfidenceMap) -> Result<SimTransform, RecoveryError> {
    if src.size() != dst.size() || src.size() != weights.size() {
        return Err(RecoveryError::ShapeMismatch);
    }
    let (mut xs, mut ys, mut ws) = (Vec::new(), Vec::new(), Vec::new());
    for (k, x) in src.iter_valid() {
        if dst.is_valid(k) {
            xs.push(*x);
            ys.push(*dst.point(k));
            ws.push(weights.weight(k));
        }
    }
    procrustes_points(&xs, &ys, &ws)
}
