//! Focal length from a pointmap in its own camera frame.
//!
//! Minimizes `Σ_p w_p ‖a_p − f b_p‖` with `a_p` the centered pixel
//! coordinate and `b_p = (x/z, y/z)`, by Weiszfeld-style reweighting:
//! `f ← Σ w u ⟨b, a⟩ / Σ w u ⟨b, b⟩`, `u = 1 / max(‖a − f b‖, ε)`.

use nalgebra::Vector2;

use super::RecoveryError;
use crate::geometry::ImageSize;
use crate::pointmap::{ConfidenceMap, Pointmap};

/// Pixel weights below this are ignored.
const MIN_WEIGHT: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocalSolveConfig {
    pub iterations: usize,
    /// Floor on residual norms in the reweighting step.
    pub epsilon: f64,
}

impl Default for FocalSolveConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FocalEstimate {
    pub focal: f64,
    /// Objective at the initialization and after each iteration.
    pub objective_trace: Vec<f64>,
}

struct Sample {
    a: Vector2<f64>,
    b: Vector2<f64>,
    w: f64,
}

fn samples(pm: &Pointmap, weights: &[f64], size: ImageSize) -> Vec<Sample> {
    let c = size.center();
    pm.iter_valid()
        .filter(|(k, p)| p.z > 0.0 && weights[*k] >= MIN_WEIGHT)
        .map(|(k, p)| {
            let (i, j) = size.pixel(k);
            Sample {
                a: Vector2::new(i as f64 - c.x, j as f64 - c.y),
                b: Vector2::new(p.x / p.z, p.y / p.z),
                w: weights[k],
            }
        })
        .collect()
}

fn objective(samples: &[Sample], f: f64) -> f64 {
    samples.iter().map(|s| s.w * (s.a - f * s.b).norm()).sum()
}

/// The weighted sum of reprojection residual norms at focal `f`.
pub fn focal_objective(pm: &Pointmap, conf: &ConfidenceMap, f: f64) -> f64 {
    objective(&samples(pm, conf.weights(), pm.size()), f)
}

pub fn estimate_focal(
    pm: &Pointmap,
    conf: &ConfidenceMap,
    size: ImageSize,
    cfg: &FocalSolveConfig,
) -> Result<f64, RecoveryError> {
    estimate_focal_detailed(pm, conf, size, cfg).map(|e| e.focal)
}

pub fn estimate_focal_detailed(
    pm: &Pointmap,
    conf: &ConfidenceMap,
    size: ImageSize,
    cfg: &FocalSolveConfig,
) -> Result<FocalEstimate, RecoveryError> {
    if pm.size() != size || conf.size() != size {
        return Err(RecoveryError::ShapeMismatch);
    }
    if cfg.iterations == 0 || !(cfg.epsilon > 0.0) {
        return Err(RecoveryError::Config(
            "focal solver needs iterations >= 1 and epsilon > 0",
        ));
    }
    let samples = samples(pm, conf.weights(), size);
    if samples.len() < 2 {
        return Err(RecoveryError::InsufficientData {
            needed: 2,
            got: samples.len(),
        });
    }
    let (num, den) = samples.iter().fold((0.0, 0.0), |(n, d), s| {
        (n + s.w * s.a.dot(&s.b), d + s.w * s.b.norm_squared())
    });
    if den <= 0.0 {
        return Err(RecoveryError::FocalUnobservable);
    }
    let mut f = num / den;
    let mut trace = vec![objective(&samples, f)];
    for _ in 0..cfg.iterations {
        let (num, den) = samples.iter().fold((0.0, 0.0), |(n, d), s| {
            let u = s.w / (s.a - f * s.b).norm().max(cfg.epsilon);
            (n + u * s.a.dot(&s.b), d + u * s.b.norm_squared())
        });
        let next = num / den;
        if !next.is_finite() || next == f {
            break;
        }
        // Rounding can make a converged step tick upward; stop there instead.
        let value = objective(&samples, next);
        if value > *trace.last().expect("nonempty") {
            break;
        }
        f = next;
        trace.push(value);
    }
    Ok(FocalEstimate {
        focal: f,
        objective_trace: trace,
    })
}
