//! Fusing several depth predictions of one view.

use super::AlignError;
use crate::metrics::lower_median;
use crate::pointmap::{ConfidenceMap, DepthMap};

/// Rescales each prediction onto the first by the median of per-pixel
/// ratios, then averages with confidence weights. Predictions sharing no
/// valid pixel with the first are dropped; the count is returned.
pub fn aggregate_depths(predictions: &[(DepthMap, ConfidenceMap)]) -> Result<(DepthMap, usize), AlignError> {
    let (reference, _) = predictions.first().ok_or(AlignError::Aggregation("no predictions"))?;
    let size = reference.size();
    if predictions.iter().any(|(d, c)| d.size() != size || c.size() != size) {
        return Err(AlignError::Aggregation("predictions differ in size"));
    }
    if predictions.len() == 1 {
        return Ok((reference.clone(), 0));
    }
    let mut dropped = 0;
    let mut sum = vec![0.0; size.len()];
    let mut weight = vec![0.0; size.len()];
    for (index, (depth, conf)) in predictions.iter().enumerate() {
        let scale = if index == 0 {
            1.0
        } else {
            let ratios: Vec<f64> = depth
                .iter_valid()
                .filter(|&(k, _)| reference.is_valid(k))
                .map(|(k, d)| reference.depth(k) / d)
                .collect();
            match lower_median(&ratios) {
                Some(s) => s,
                None => {
                    dropped += 1;
                    continue;
                }
            }
        };
        for (k, d) in depth.iter_valid() {
            let w = conf.weight(k);
            sum[k] += w * d * scale;
            weight[k] += w;
        }
    }
    let valid: Vec<bool> = weight.iter().map(|&w| w > 0.0).collect();
    let fused = sum
        .iter()
        .zip(&weight)
        .map(|(&s, &w)| if w > 0.0 { s / w } else { 0.0 })
        .collect();
    let out = DepthMap::new(size, fused, valid).expect("sizes match");
    Ok((out, dropped))
}
