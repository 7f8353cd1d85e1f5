//! Statistical evaluation: voxel ROC/AUC inside the brain, Youden operating
//! points, dev-set threshold calibration, overlap scores, lesion-level
//! component matching, and rank-sum subgroup comparisons.

mod components;
mod lesions;
mod overlap;
mod report;
mod roc;
pub mod wilcoxon;

pub use components::{connected_components, filter_components_by_volume, Components, Connectivity};
pub use lesions::{match_lesions, LesionReport};
pub use overlap::{confusion_at_threshold, precision_recall_dice, threshold_mask, OverlapScores, VoxelConfusion};
pub use report::{aggregate_report, Metric, MetricTable, PValueCell, PValueRow, PValueTable, Report, SummaryStat, TableRow};
pub use roc::{roc_auc, roc_from_scores, youden_optimal, RocCurve, RocPoint};
pub use wilcoxon::{wilcoxon_rank_sum, PValueMethod, RankSumTest};

use serde::{Deserialize, Serialize};

use crate::cohort::Subgroup;
use crate::error::{Error, Result};
use crate::volume::{BinaryMask, ProbabilityMap};

/// Evaluation knobs; defaults are 26-connectivity and a 10 mm³ lesion size
/// limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub threshold: f64,
    pub connectivity: Connectivity,
    pub min_mm3: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            threshold: 0.5,
            connectivity: Connectivity::TwentySix,
            min_mm3: 10.0,
        }
    }
}

/// Per-patient results; ROC fields are `None` when the in-brain ground truth
/// holds a single class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientEval {
    pub study_id: String,
    pub subgroup: Subgroup,
    pub auc: Option<f64>,
    pub youden_threshold: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub threshold: f64,
    pub confusion: VoxelConfusion,
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
    pub overlap_degenerate: bool,
    pub lesion_report: LesionReport,
}

impl PatientEval {
    pub fn single_class(&self) -> bool {
        self.auc.is_none()
    }
}

pub fn evaluate_patient(
    study_id: &str,
    subgroup: Subgroup,
    probs: &ProbabilityMap,
    gt: &BinaryMask,
    brain: &BinaryMask,
    settings: &EvalSettings,
) -> Result<PatientEval> {
    let (auc, youden) = match roc_auc(probs, gt, brain) {
        Ok(curve) => (Some(curve.auc), Some(youden_optimal(&curve)?)),
        Err(Error::Undefined(_)) => (None, None),
        Err(e) => return Err(e),
    };
    let confusion = confusion_at_threshold(probs, gt, brain, settings.threshold)?;
    let scores = precision_recall_dice(&confusion);
    let predicted = threshold_mask(probs, brain, settings.threshold)?;
    let pred_components = connected_components(&predicted, settings.connectivity);
    let gt_components = connected_components(gt, settings.connectivity);
    let lesion_report = match_lesions(&pred_components, &gt_components, settings.min_mm3)?;
    Ok(PatientEval {
        study_id: study_id.to_string(),
        subgroup,
        auc,
        youden_threshold: youden.map(|p| p.threshold),
        sensitivity: youden.map(|p| p.sensitivity),
        specificity: youden.map(|p| p.specificity),
        threshold: settings.threshold,
        confusion,
        dice: scores.dice,
        precision: scores.precision,
        recall: scores.recall,
        overlap_degenerate: scores.degenerate,
        lesion_report,
    })
}

/// Mean of the per-patient Youden thresholds (single-class patients, which
/// have none, are skipped).
pub fn calibrate_threshold(dev_evals: &[PatientEval]) -> Result<f64> {
    let thresholds: Vec<f64> = dev_evals.iter().filter_map(|e| e.youden_threshold).collect();
    if thresholds.is_empty() {
        return Err(Error::Empty("development evaluations with a Youden threshold"));
    }
    Ok(thresholds.iter().sum::<f64>() / thresholds.len() as f64)
}
