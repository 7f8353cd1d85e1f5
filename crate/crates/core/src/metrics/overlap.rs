//! Thresholded voxel confusion counts and the overlap scores built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, ProbabilityMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VoxelConfusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl VoxelConfusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Counts in-brain voxels with `prob >= threshold` called positive.
pub fn confusion_at_threshold(
    probs: &ProbabilityMap,
    gt: &BinaryMask,
    brain: &BinaryMask,
    threshold: f64,
) -> Result<VoxelConfusion> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside [0, 1]")));
    }
    gt.check_matches(probs.dims(), probs.spacing())?;
    brain.check_matches(probs.dims(), probs.spacing())?;
    let mut c = VoxelConfusion::default();
    for (i, &p) in probs.values().iter().enumerate() {
        if !brain.is_set(i) {
            continue;
        }
        match (f64::from(p) >= threshold, gt.is_set(i)) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Binary prediction mask `prob >= threshold` (inside the brain only).
pub fn threshold_mask(probs: &ProbabilityMap, brain: &BinaryMask, threshold: f64) -> Result<BinaryMask> {
    brain.check_matches(probs.dims(), probs.spacing())?;
    let values = probs
        .values()
        .iter()
        .zip(brain.values())
        .map(|(&p, &m)| u8::from(m != 0 && f64::from(p) >= threshold))
        .collect();
    BinaryMask::new(probs.dims(), probs.spacing(), values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapScores {
    pub precision: f64,
    pub recall: f64,
    pub dice: f64,
    /// Set when any ratio was 0/0 and reported as 0.
    pub degenerate: bool,
}

pub fn precision_recall_dice(c: &VoxelConfusion) -> OverlapScores {
    let mut degenerate = false;
    let mut ratio = |num: u64, den: u64| {
        if den == 0 {
            degenerate = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let dice = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    OverlapScores {
        precision,
        recall,
        dice,
        degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{Dims, Spacing};

    fn toy() -> (ProbabilityMap, BinaryMask, BinaryMask) {
        let d = Dims::new(3, 1, 1);
        let s = Spacing::isotropic(1.0);
        (
            ProbabilityMap::new(d, s, vec![0.95, 0.5, 0.1]).unwrap(),
            BinaryMask::new(d, s, vec![1, 0, 0]).unwrap(),
            BinaryMask::ones(d, s).unwrap(),
        )
    }

    #[test]
    fn toy_counts() {
        let (p, gt, brain) = toy();
        let c = confusion_at_threshold(&p, &gt, &brain, 0.93).unwrap();
        assert_eq!(c, VoxelConfusion { tp: 1, fp: 0, tn: 2, fn_: 0 });
    }

    #[test]
    fn threshold_boundaries() {
        let (p, gt, brain) = toy();
        let all = confusion_at_threshold(&p, &gt, &brain, 0.0).unwrap();
        assert_eq!((all.tn, all.fn_), (0, 0));
        let none = confusion_at_threshold(&p, &gt, &brain, 0.9500001).unwrap();
        assert_eq!((none.tp, none.fp), (0, 0));
        // Inclusive comparison.
        let at = confusion_at_threshold(&p, &gt, &brain, 0.5).unwrap();
        assert_eq!(at.fp, 1);
        assert!(confusion_at_threshold(&p, &gt, &brain, 1.5).is_err());
    }

    #[test]
    fn counts_only_in_mask() {
        let (p, gt, _) = toy();
        let brain = BinaryMask::new(p.dims(), p.spacing(), vec![1, 1, 0]).unwrap();
        assert_eq!(confusion_at_threshold(&p, &gt, &brain, 0.3).unwrap().total(), 2);
    }

    #[test]
    fn score_arithmetic() {
        let s = precision_recall_dice(&VoxelConfusion { tp: 3, fp: 3, tn: 10, fn_: 1 });
        assert_eq!((s.precision, s.recall, s.dice), (0.5, 0.75, 0.6));
        assert!(!s.degenerate);
        let s = precision_recall_dice(&VoxelConfusion { tp: 5, fp: 0, tn: 1, fn_: 0 });
        assert_eq!((s.precision, s.recall, s.dice), (1.0, 1.0, 1.0));
        let s = precision_recall_dice(&VoxelConfusion { tp: 0, fp: 4, tn: 1, fn_: 2 });
        assert_eq!((s.precision, s.recall, s.dice), (0.0, 0.0, 0.0));
        assert!(!s.degenerate);
        let s = precision_recall_dice(&VoxelConfusion { tp: 0, fp: 0, tn: 9, fn_: 0 });
        assert!(s.degenerate);
        assert_eq!(s.dice, 0.0);
    }
}
