//! Corruption of ground-truth pairs into synthetic network output.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{OracleError, Scene};
use crate::pointmap::{make_gt_pair, ConfidenceMap, PairPrediction, Pointmap, ViewPrediction};

/// Confidence emitted when it carries no information.
pub const UNINFORMATIVE_CONFIDENCE: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Gaussian std per coordinate, as a fraction of the pixel's depth.
    pub point_sigma: f64,
    /// Probability that a valid pixel is replaced by a uniform outlier.
    pub outlier_rate: f64,
    /// Outliers are uniform in the pair's bounding box scaled by this factor
    /// about its center.
    pub outlier_magnitude: f64,
    /// 0: constant confidence; 1: confidence fully driven by injected error.
    pub confidence_fidelity: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            point_sigma: 0.0,
            outlier_rate: 0.0,
            outlier_magnitude: 1.0,
            confidence_fidelity: 0.0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), OracleError> {
        let all_finite = [
            self.point_sigma,
            self.outlier_rate,
            self.outlier_magnitude,
            self.confidence_fidelity,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !all_finite {
            return Err(OracleError::InvalidNoise("all parameters must be finite"));
        }
        if self.point_sigma < 0.0 || self.outlier_magnitude < 0.0 {
            return Err(OracleError::InvalidNoise("sigma and magnitude must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) || !(0.0..=1.0).contains(&self.confidence_fidelity) {
            return Err(OracleError::InvalidNoise("rates must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Confidence for a point displaced by `relative_error` (fraction of depth).
    pub fn confidence(&self, relative_error: f64) -> f64 {
        let s0 = self.point_sigma.max(1e-3);
        let informative = 1.0 + 2.0 * (-relative_error / (3.0 * s0)).exp();
        let c = (1.0 - self.confidence_fidelity) * UNINFORMATIVE_CONFIDENCE + self.confidence_fidelity * informative;
        // Keeps the map strictly above 1 even when the exponential underflows.
        c.max(1.0 + f64::EPSILON)
    }
}

/// Prediction for `(I^n, I^m)`: the ground-truth pair from `make_gt_pair`,
/// corrupted per `noise`. Pixels are visited view 1 then view 2, row-major,
/// each drawing a fixed number of variates from a stream keyed by `(n, m)`.
pub fn predict_pair(
    scene: &Scene,
    n: usize,
    m: usize,
    noise: &NoiseModel,
    seed: u64,
) -> Result<PairPrediction, OracleError> {
    noise.validate()?;
    for v in [n, m] {
        let view = scene.view(v)?;
        if view.depth.is_none() {
            return Err(OracleError::MissingView { view: v });
        }
    }
    let gt = make_gt_pair(scene, n, m).expect("views checked above");
    let own_depth = |v: usize, k: usize| scene.views[v].depth.as_ref().expect("checked").depth(k);

    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for pm in [&gt.view1, &gt.view2] {
        for (_, p) in pm.iter_valid() {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
    }
    let center = (lo + hi) * 0.5;
    let half = (hi - lo) * 0.5 * noise.outlier_magnitude;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 32) | m as u64);

    let mut corrupt = |pm: &Pointmap, view: usize| -> ViewPrediction {
        let size = pm.size();
        let mut points = pm.points().to_vec();
        let mut conf = vec![UNINFORMATIVE_CONFIDENCE; size.len()];
        for k in 0..size.len() {
            let gauss = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            let roll: f64 = rng.random();
            let uniform = Vector3::from_fn(|_, _| rng.random_range(-1.0..=1.0));
            if !pm.is_valid(k) {
                continue;
            }
            let depth = own_depth(view, k);
            let original = points[k];
            let noisy = if roll < noise.outlier_rate {
                center + half.component_mul(&uniform)
            } else {
                original + gauss * (noise.point_sigma * depth)
            };
            points[k] = noisy;
            conf[k] = noise.confidence((noisy - original).norm() / depth);
        }
        let points = Pointmap::new(size, points, pm.valid().to_vec()).expect("finite by construction");
        let conf = ConfidenceMap::new(size, conf).expect("positive by construction");
        ViewPrediction::new(points, conf).expect("same size")
    };
    let view1 = corrupt(&gt.view1, n);
    let view2 = corrupt(&gt.view2, m);
    Ok(PairPrediction::new(view1, view2))
}
