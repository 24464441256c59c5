//! Scale-normalized 3D regression and confidence-weighted losses.
//!
//! These are scoring kernels rather than a training loop: they evaluate how
//! well a pair prediction matches ground truth up to scale, and provide the
//! analytic gradient with respect to the predicted points.
//!
//! Pixels take part in a loss only when valid in both the prediction and the
//! ground truth. Per-pixel sums run row-major, view 1 then view 2.

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::ImageSize;
use crate::pointmap::{ConfidenceMap, GtPair, PairPrediction, Pointmap};

/// Largest argument passed to `exp` in [`confidence_activation`].
pub const CONFIDENCE_EXP_CLAMP: f64 = 80.0;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("empty normalization set: no valid pixels")]
    EmptyNormalization,
    #[error("all valid points lie at the origin")]
    ZeroNorm,
    #[error("image sizes differ between prediction and ground truth")]
    ShapeMismatch,
    #[error("confidence at view {view} pixel {index} is {value}, must be > 0")]
    NonPositiveConfidence { view: usize, index: usize, value: f64 },
    #[error("raw confidence at pixel {index} is not finite")]
    NonFiniteRaw { index: usize },
    #[error("grid has {actual} cells, expected {expected}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("alpha must be finite and >= 0, got {0}")]
    BadAlpha(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the `-log C` regularizer.
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub total: f64,
    /// Per-pixel regression terms for view 1 and view 2 (zero where inactive).
    pub per_pixel: [Vec<f64>; 2],
    /// Pixels that contributed to the loss.
    pub active: [Vec<bool>; 2],
    pub norm_pred: f64,
    pub norm_gt: f64,
}

/// Average distance of all valid points to the origin, over both maps.
pub fn norm_factor(pm1: &Pointmap, pm2: &Pointmap) -> Result<f64, LossError> {
    norm_factor_masked([pm1, pm2], [pm1.valid(), pm2.valid()])
}

fn norm_factor_masked(maps: [&Pointmap; 2], masks: [&[bool]; 2]) -> Result<f64, LossError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (pm, mask) in maps.iter().zip(masks) {
        for (p, _) in pm.points().iter().zip(mask).filter(|(_, &m)| m) {
            sum += p.norm();
            count += 1;
        }
    }
    if count == 0 {
        return Err(LossError::EmptyNormalization);
    }
    let z = sum / count as f64;
    if z <= 0.0 {
        return Err(LossError::ZeroNorm);
    }
    Ok(z)
}

struct Normalized {
    active: [Vec<bool>; 2],
    z_pred: f64,
    z_gt: f64,
    /// `X/z - X̄/z̄` per pixel (zero where inactive).
    residual: [Vec<Vector3<f64>>; 2],
}

fn normalize_pair(pred: [&Pointmap; 2], gt: [&Pointmap; 2]) -> Result<Normalized, LossError> {
    for v in 0..2 {
        if pred[v].size() != gt[v].size() {
            return Err(LossError::ShapeMismatch);
        }
    }
    let active: [Vec<bool>; 2] = std::array::from_fn(|v| {
        pred[v]
            .valid()
            .iter()
            .zip(gt[v].valid())
            .map(|(&a, &b)| a && b)
            .collect()
    });
    let masks = [active[0].as_slice(), active[1].as_slice()];
    let z_pred = norm_factor_masked(pred, masks)?;
    let z_gt = norm_factor_masked(gt, masks)?;
    let residual = std::array::from_fn(|v| {
        pred[v]
            .points()
            .iter()
            .zip(gt[v].points())
            .zip(&active[v])
            .map(|((p, g), &a)| if a { p / z_pred - g / z_gt } else { Vector3::zeros() })
            .collect()
    });
    Ok(Normalized {
        active,
        z_pred,
        z_gt,
        residual,
    })
}

/// Per-pixel `‖X/z − X̄/z̄‖`; the total is the plain sum of the terms.
pub fn regression_loss(pred: [&Pointmap; 2], gt: [&Pointmap; 2]) -> Result<LossReport, LossError> {
    let n = normalize_pair(pred, gt)?;
    let per_pixel: [Vec<f64>; 2] = std::array::from_fn(|v| n.residual[v].iter().map(|r| r.norm()).collect());
    let total = sum_active(&per_pixel, &n.active, |_, _, l| l);
    Ok(LossReport {
        total,
        per_pixel,
        active: n.active,
        norm_pred: n.z_pred,
        norm_gt: n.z_gt,
    })
}

fn sum_active(
    per_pixel: &[Vec<f64>; 2],
    active: &[Vec<bool>; 2],
    mut term: impl FnMut(usize, usize, f64) -> f64,
) -> f64 {
    let mut total = 0.0;
    for v in 0..2 {
        for (k, (&l, &a)) in per_pixel[v].iter().zip(&active[v]).enumerate() {
            if a {
                total += term(v, k, l);
            }
        }
    }
    total
}

fn check_confidence(pred: &PairPrediction) -> Result<[&ConfidenceMap; 2], LossError> {
    let confs = [&pred.view1.confidence, &pred.view2.confidence];
    for (v, c) in confs.iter().enumerate() {
        if let Some((index, &value)) = c.weights().iter().enumerate().find(|(_, w)| !(**w > 0.0)) {
            return Err(LossError::NonPositiveConfidence { view: v, index, value });
        }
    }
    Ok(confs)
}

/// `Σ_v Σ_i C_i · ℓ_regr(v, i) − α · log C_i` over active pixels.
pub fn confidence_loss(pred: &PairPrediction, gt: &GtPair, cfg: &LossConfig) -> Result<LossReport, LossError> {
    if !(cfg.alpha.is_finite() && cfg.alpha >= 0.0) {
        return Err(LossError::BadAlpha(cfg.alpha));
    }
    let confs = check_confidence(pred)?;
    let mut report = regression_loss([&pred.view1.points, &pred.view2.points], [&gt.view1, &gt.view2])?;
    report.total = sum_active(&report.per_pixel, &report.active, |v, k, l| {
        let c = confs[v].weight(k);
        c * l - cfg.alpha * c.ln()
    });
    Ok(report)
}

/// Per-pixel gradients for the two views of a pair.
pub type PairGradient = [Vec<Vector3<f64>>; 2];

/// Confidence loss together with its gradient with respect to every
/// predicted point. The normalization factor `z` is differentiated through.
pub fn confidence_loss_gradient(
    pred: &PairPrediction,
    gt: &GtPair,
    cfg: &LossConfig,
) -> Result<(LossReport, PairGradient), LossError> {
    let report = confidence_loss(pred, gt, cfg)?;
    let confs = check_confidence(pred)?;
    let maps = [&pred.view1.points, &pred.view2.points];
    let n = normalize_pair(maps, [&gt.view1, &gt.view2])?;
    let count: usize = n.active.iter().map(|a| a.iter().filter(|&&x| x).count()).sum();

    // dL/dX_k = C_k u_k / z − (Σ_i C_i u_i·X_i) / z² · ∇_k z,
    // with u_i the unit residual and ∇_k z = X_k / (‖X_k‖ · N).
    let mut coupling = 0.0;
    let mut unit: [Vec<Vector3<f64>>; 2] = [Vec::new(), Vec::new()];
    for v in 0..2 {
        unit[v] = n.residual[v]
            .iter()
            .zip(&n.active[v])
            .map(|(r, &a)| {
                let len = r.norm();
                if a && len > 0.0 {
                    r / len
                } else {
                    Vector3::zeros()
                }
            })
            .collect();
        for (k, u) in unit[v].iter().enumerate() {
            if n.active[v][k] {
                coupling += confs[v].weight(k) * u.dot(maps[v].point(k));
            }
        }
    }
    let z = n.z_pred;
    let grads = std::array::from_fn(|v| {
        (0..maps[v].size().len())
            .map(|k| {
                if !n.active[v][k] {
                    return Vector3::zeros();
                }
                let x = maps[v].point(k);
                let len = x.norm();
                let dz = if len > 0.0 {
                    x / (len * count as f64)
                } else {
                    Vector3::zeros()
                };
                unit[v][k] * (confs[v].weight(k) / z) - dz * (coupling / (z * z))
            })
            .collect()
    });
    Ok((report, grads))
}

/// `C = 1 + exp(raw)`, with the exponent clamped at
/// [`CONFIDENCE_EXP_CLAMP`]. Results that round to exactly 1 are bumped to
/// the next representable value so the output stays strictly above 1.
pub fn confidence_activation(size: ImageSize, raw: &[f64]) -> Result<ConfidenceMap, LossError> {
    if raw.len() != size.len() {
        return Err(LossError::SizeMismatch {
            expected: size.len(),
            actual: raw.len(),
        });
    }
    let weight = raw
        .iter()
        .enumerate()
        .map(|(index, &r)| {
            if r.is_nan() || r == f64::INFINITY {
                return Err(LossError::NonFiniteRaw { index });
            }
            Ok(activate(r))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ConfidenceMap::new(size, weight).expect("activation output is > 1"))
}

#[inline]
pub fn activate(raw: f64) -> f64 {
    let w = 1.0 + raw.min(CONFIDENCE_EXP_CLAMP).exp();
    if w > 1.0 {
        w
    } else {
        1.0 + f64::EPSILON
    }
}
