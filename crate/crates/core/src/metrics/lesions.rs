//! Lesion-level matching of predicted and ground-truth components.

use serde::{Deserialize, Serialize};

use super::components::{filter_components_by_volume, Components};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LesionReport {
    pub n_gt: usize,
    /// Ground-truth lesions touched by any predicted component.
    pub n_detected: usize,
    /// Ground-truth lesions touched by a predicted component that survives
    /// the volume filter.
    pub n_detected_sizelimit: usize,
    /// Predicted components with no ground-truth voxel.
    pub n_fp_nolimit: usize,
    /// Same, counting only predicted components of at least `min_mm3`.
    pub n_fp_sizelimit: usize,
    pub lesion_sensitivity: f64,
    pub lesion_sensitivity_sizelimit: f64,
    pub min_mm3: f64,
}

fn overlap_counts(pred: &Components, gt: &Components) -> (usize, usize) {
    let mut gt_hit = vec![false; gt.count()];
    let mut pred_hit = vec![false; pred.count()];
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        if p != 0 && g != 0 {
            gt_hit[g as usize - 1] = true;
            pred_hit[p as usize - 1] = true;
        }
    }
    let detected = gt_hit.iter().filter(|&&h| h).count();
    let fp = pred_hit.iter().filter(|&&h| !h).count();
    (detected, fp)
}

/// A lesion is detected when it shares at least one voxel with a predicted
/// component; a predicted component is a false positive when it shares none
/// with the ground truth. Ground-truth components are never filtered.
pub fn match_lesions(pred: &Components, gt: &Components, min_mm3: f64) -> Result<LesionReport> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimensionMismatch {
            expected: gt.dims().as_array(),
            actual: pred.dims().as_array(),
        });
    }
    if pred.spacing() != gt.spacing() {
        return Err(Error::SpacingMismatch {
            expected: gt.spacing().as_array(),
            actual: pred.spacing().as_array(),
        });
    }
    let (n_detected, n_fp_nolimit) = overlap_counts(pred, gt);
    let filtered = filter_components_by_volume(pred, min_mm3);
    let (n_detected_sizelimit, n_fp_sizelimit) = overlap_counts(&filtered, gt);
    let n_gt = gt.count();
    let rate = |k: usize| if n_gt == 0 { 0.0 } else { k as f64 / n_gt as f64 };
    Ok(LesionReport {
        n_gt,
        n_detected,
        n_detected_sizelimit,
        n_fp_nolimit,
        n_fp_sizelimit,
        lesion_sensitivity: rate(n_detected),
        lesion_sensitivity_sizelimit: rate(n_detected_sizelimit),
        min_mm3,
    })
}
