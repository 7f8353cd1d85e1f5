//! Voxel-level ROC analysis and Youden operating points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, ProbabilityMap};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub true_positives: usize,
    pub false_positives: usize,
}

impl RocPoint {
    pub fn youden(&self) -> f64 {
        self.sensitivity + self.specificity - 1.0
    }
}

/// One point per distinct score, thresholds strictly decreasing; a voxel is
/// called positive at threshold `t` iff its score is `>= t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
}

/// ROC over arbitrary scored samples.
///
/// The area is accumulated with the trapezoid rule over tie groups, which
/// equals the Mann-Whitney probability `P(s+ > s-) + P(s+ = s-) / 2`.
pub fn roc_from_scores(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::Undefined(format!(
            "AUC needs both classes ({positives} positive, {negatives} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (p, n) = (positives as f64, negatives as f64);
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (tp_before, fp_before) = (tp, fp);
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // Twice the trapezoid in count units; exact in integers.
        area += ((fp - fp_before) * (tp + tp_before)) as f64;
        points.push(RocPoint {
            threshold,
            sensitivity: tp as f64 / p,
            specificity: 1.0 - fp as f64 / n,
            true_positives: tp,
            false_positives: fp,
        });
    }
    Ok(RocCurve {
        points,
        auc: area / (2.0 * p * n),
        positives,
        negatives,
    })
}

/// ROC of `probs` against `gt`, restricted to voxels inside `brain`.
pub fn roc_auc(probs: &ProbabilityMap, gt: &BinaryMask, brain: &BinaryMask) -> Result<RocCurve> {
    gt.check_matches(probs.dims(), probs.spacing())?;
    brain.check_matches(probs.dims(), probs.spacing())?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (i, &p) in probs.values().iter().enumerate() {
        if brain.is_set(i) {
            scores.push(f64::from(p));
            labels.push(gt.is_set(i));
        }
    }
    roc_from_scores(&scores, &labels)
}

/// Point maximising `J = sensitivity + specificity - 1`; among equal `J`
/// the highest threshold wins.
pub fn youden_optimal(curve: &RocCurve) -> Result<RocPoint> {
    // J scaled by P*N is an integer, so ties are detected exactly.
    let scaled = |pt: &RocPoint| {
        pt.true_positives as i128 * curve.negatives as i128
            - pt.false_positives as i128 * curve.positives as i128
    };
    let mut best: Option<&RocPoint> = None;
    for pt in &curve.points {
        match best {
            Some(b) if scaled(pt) <= scaled(b) => {}
            _ => best = Some(pt),
        }
    }
    best.copied().ok_or(Error::Empty("ROC curve"))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force Mann-Whitney over all positive/negative pairs.
    fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut acc = 0.0;
        let mut pairs = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    if si > sj {
                        acc += 1.0;
                    } else if si == sj {
                        acc += 0.5;
                    }
                }
            }
        }
        acc / pairs
    }

    #[test]
    fn separable_and_tied_extremes() {
        let labels = [true, true, false, false];
        let c = roc_from_scores(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap();
        assert_eq!(c.auc, 1.0);
        let c = roc_from_scores(&[0.5; 4], &labels).unwrap();
        assert_eq!(c.auc, 0.5);
    }

    #[test]
    fn four_point_fixture() {
        let scores = [0.9, 0.4, 0.35, 0.8];
        let labels = [true, false, true, false];
        assert_eq!(pairwise_auc(&scores, &labels), 0.5);
        assert_eq!(roc_from_scores(&scores, &labels).unwrap().auc, 0.5);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(roc_from_scores(&[0.1, 0.2], &[true, true]), Err(Error::Undefined(_))));
    }

    #[test]
    fn curve_is_monotone() {
        let scores = [0.1, 0.7, 0.7, 0.3, 0.9, 0.2];
        let labels = [false, true, false, true, true, false];
        let c = roc_from_scores(&scores, &labels).unwrap();
        for w in c.points.windows(2) {
            assert!(w[0].threshold > w[1].threshold);
            assert!(w[0].sensitivity <= w[1].sensitivity);
        }
        assert_eq!(c.points.len(), 5);
    }

    #[test]
    fn youden_perfect_and_degenerate() {
        let c = roc_from_scores(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        let best = youden_optimal(&c).unwrap();
        assert_eq!((best.youden(), best.sensitivity, best.specificity), (1.0, 1.0, 1.0));
        assert_eq!(best.threshold, 0.8);

        let c = roc_from_scores(&[0.4; 4], &[true, false, true, false]).unwrap();
        let best = youden_optimal(&c).unwrap();
        assert_eq!(best.youden(), 0.0);
        assert_eq!(best.threshold, 0.4);
    }

    #[test]
    fn youden_interior_matches_scan() {
        // Six distinct scores; optimum strictly inside the curve.
        let scores = [0.95, 0.85, 0.6, 0.55, 0.3, 0.1];
        let labels = [true, false, true, true, false, false];
        let c = roc_from_scores(&scores, &labels).unwrap();
        assert_eq!(c.points.len(), 6);
        // Exhaustive scan over every candidate threshold.
        let mut best = (f64::NEG_INFINITY, f64::NAN);
        for &t in &scores {
            let tp = scores.iter().zip(&labels).filter(|(s, l)| **s >= t && **l).count() as f64;
            let fp = scores.iter().zip(&labels).filter(|(s, l)| **s >= t && !**l).count() as f64;
            let j = tp / 3.0 - fp / 3.0;
            if j > best.0 || (j == best.0 && t > best.1) {
                best = (j, t);
            }
        }
        let got = youden_optimal(&c).unwrap();
        assert_eq!(got.threshold, best.1);
        assert!((got.youden() - best.0).abs() < 1e-12);
        assert_eq!(got.threshold, 0.55);
    }
}
