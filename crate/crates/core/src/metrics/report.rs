//! Subgroup summary tables (mean ± SD) and pairwise rank-sum p-value tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::wilcoxon::{wilcoxon_rank_sum, PValueMethod};
use super::PatientEval;
use crate::cohort::Subgroup;
use crate::error::{Error, Result};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Auc,
    Sensitivity,
    Specificity,
    Dice,
    Recall,
    Precision,
    LesionSensitivity,
    FpNoLimit,
    FpSizeLimit,
}

impl Metric {
    pub fn header(self) -> &'static str {
        match self {
            Metric::Auc => "AUC",
            Metric::Sensitivity => "Sensitivity",
            Metric::Specificity => "Specificity",
            Metric::Dice => "Dice",
            Metric::Recall => "Recall",
            Metric::Precision => "Precision",
            Metric::LesionSensitivity => "Sensitivity",
            Metric::FpNoLimit => "FP (no size limit)",
            Metric::FpSizeLimit => "FP (size limit)",
        }
    }

    pub fn value(self, e: &PatientEval) -> Option<f64> {
        let lr = &e.lesion_report;
        match self {
            Metric::Auc => e.auc,
            Metric::Sensitivity => e.sensitivity,
            Metric::Specificity => e.specificity,
            Metric::Dice => Some(e.dice),
            Metric::Recall => Some(e.recall),
            Metric::Precision => Some(e.precision),
            Metric::LesionSensitivity => Some(lr.lesion_sensitivity),
            Metric::FpNoLimit => Some(lr.n_fp_nolimit as f64),
            Metric::FpSizeLimit => Some(lr.n_fp_sizelimit as f64),
        }
    }

    fn format(self, mean: f64, sd: Option<f64>) -> String {
        let sd_or = |s: Option<f64>, f: &dyn Fn(f64) -> String| s.map_or_else(|| "n/a".to_string(), f);
        match self {
            Metric::Sensitivity | Metric::Specificity | Metric::LesionSensitivity => {
                format!("{:.0}±{}%", mean * 100.0, sd_or(sd, &|s| format!("{:.0}", s * 100.0)))
            }
            Metric::FpNoLimit | Metric::FpSizeLimit => {
                format!("{mean:.1}±{}", sd_or(sd, &|s| format!("{s:.1}")))
            }
            _ => format!("{mean:.2}±{}", sd_or(sd, &|s| format!("{s:.2}"))),
        }
    }
}

/// Mean and sample standard deviation; the SD is undefined below two values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStat {
    pub n: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
}

impl SummaryStat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return SummaryStat { n, mean: None, sd: None };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = (n >= 2).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        });
        SummaryStat {
            n,
            mean: Some(mean),
            sd,
        }
    }

    pub fn format(&self, metric: Metric) -> String {
        match self.mean {
            Some(m) => metric.format(m, self.sd),
            None => "n/a".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub subgroup: Option<Subgroup>,
    pub cells: Vec<SummaryStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub id: String,
    pub title: String,
    pub metrics: Vec<Metric>,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PValueCell {
    pub p_value: f64,
    pub method: PValueMethod,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueRow {
    pub label: String,
    pub cells: Vec<Option<PValueCell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValueTable {
    pub id: String,
    pub title: String,
    pub metrics: Vec<Metric>,
    pub rows: Vec<PValueRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub n_patients: usize,
    pub tables: Vec<MetricTable>,
    pub p_tables: Vec<PValueTable>,
    pub notices: Vec<String>,
}

const FAMILIES: [(&str, &str, [Metric; 3]); 3] = [
    (
        "A",
        "Voxel-by-voxel detection accuracy using ROC statistics",
        [Metric::Auc, Metric::Sensitivity, Metric::Specificity],
    ),
    (
        "B",
        "Detection and segmentation accuracy at the operating threshold",
        [Metric::Dice, Metric::Recall, Metric::Precision],
    ),
    (
        "C",
        "Lesion-by-lesion detection accuracy at the operating threshold",
        [Metric::LesionSensitivity, Metric::FpNoLimit, Metric::FpSizeLimit],
    ),
];

const PAIRS: [(Subgroup, Subgroup); 3] = [
    (Subgroup::G1, Subgroup::G2),
    (Subgroup::G1, Subgroup::G3),
    (Subgroup::G2, Subgroup::G3),
];

fn values(evals: &[&PatientEval], metric: Metric) -> Vec<f64> {
    evals.iter().filter_map(|e| metric.value(e)).collect()
}

/// Builds the three summary tables (subgroup rows plus an all-cases row) and
/// the three pairwise p-value tables. Evaluations are folded in input order.
pub fn aggregate_report(evals: &[PatientEval]) -> Result<Report> {
    if evals.is_empty() {
        return Err(Error::Empty("patient evaluations"));
    }
    let mut notices = Vec::new();
    let single_class: Vec<&str> = evals
        .iter()
        .filter(|e| e.single_class())
        .map(|e| e.study_id.as_str())
        .collect();
    if !single_class.is_empty() {
        notices.push(format!(
            "excluded from ROC statistics (single-class ground truth): {}",
            single_class.join(", ")
        ));
    }
    let by_group: Vec<(Subgroup, Vec<&PatientEval>)> = Subgroup::ALL
        .iter()
        .map(|&g| (g, evals.iter().filter(|e| e.subgroup == g).collect()))
        .collect();
    let everyone: Vec<&PatientEval> = evals.iter().collect();

    let mut tables = Vec::new();
    for (suffix, title, metrics) in FAMILIES {
        let mut rows: Vec<TableRow> = by_group
            .iter()
            .map(|(g, members)| TableRow {
                label: g.row_label().to_string(),
                subgroup: Some(*g),
                cells: metrics.iter().map(|&m| SummaryStat::of(&values(members, m))).collect(),
            })
            .collect();
        rows.push(TableRow {
            label: "All cases".to_string(),
            subgroup: None,
            cells: metrics.iter().map(|&m| SummaryStat::of(&values(&everyone, m))).collect(),
        });
        tables.push(MetricTable {
            id: format!("3{suffix}"),
            title: title.to_string(),
            metrics: metrics.to_vec(),
            rows,
        });
    }

    let populated = by_group.iter().filter(|(_, m)| !m.is_empty()).count();
    let mut p_tables = Vec::new();
    if populated < 2 {
        notices.push("fewer than two subgroups present; p-value tables omitted".to_string());
    } else {
        for (suffix, title, metrics) in FAMILIES {
            let mut rows = Vec::new();
            for (ga, gb) in PAIRS {
                let a = &by_group[ga as usize].1;
                let b = &by_group[gb as usize].1;
                let mut cells = Vec::new();
                for &m in &metrics {
                    let (va, vb) = (values(a, m), values(b, m));
                    let cell = if va.is_empty() || vb.is_empty() {
                        None
                    } else {
                        let t = wilcoxon_rank_sum(&va, &vb)?;
                        Some(PValueCell {
                            p_value: t.p_value,
                            method: t.method,
                            significant: t.p_value < SIGNIFICANCE_LEVEL,
                        })
                    };
                    cells.push(cell);
                }
                rows.push(PValueRow {
                    label: format!("{} vs {}", ga.name(), gb.name()),
                    cells,
                });
            }
            p_tables.push(PValueTable {
                id: format!("4{suffix}"),
                title: title.to_string(),
                metrics: metrics.to_vec(),
                rows,
            });
        }
    }
    Ok(Report {
        n_patients: evals.len(),
        tables,
        p_tables,
        notices,
    })
}

fn aligned(out: &mut String, rows: &[Vec<String>]) {
    let ncol = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..ncol)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s:<width$}", width = widths[c]))
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
}

impl Report {
    /// Plain-text rendering; significant p-values are wrapped in `**`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Summary of detection and segmentation metrics (mean ± SD), {} patients", self.n_patients);
        for t in &self.tables {
            let _ = writeln!(out, "\n{}: {}\n", t.id, t.title);
            let mut grid = vec![std::iter::once("# of lesions".to_string())
                .chain(t.metrics.iter().map(|m| m.header().to_string()))
                .collect::<Vec<_>>()];
            for r in &t.rows {
                grid.push(
                    std::iter::once(r.label.clone())
                        .chain(r.cells.iter().zip(&t.metrics).map(|(c, &m)| c.format(m)))
                        .collect(),
                );
            }
            aligned(&mut out, &grid);
        }
        if !self.p_tables.is_empty() {
            let _ = writeln!(out, "\nP-values comparing subgroups (Wilcoxon rank sum test)");
        }
        for t in &self.p_tables {
            let _ = writeln!(out, "\n{}: {}\n", t.id, t.title);
            let mut grid = vec![std::iter::once("Subgroups".to_string())
                .chain(t.metrics.iter().map(|m| m.header().to_string()))
                .collect::<Vec<_>>()];
            for r in &t.rows {
                grid.push(
                    std::iter::once(r.label.clone())
                        .chain(r.cells.iter().map(|c| match c {
                            Some(c) if c.significant => format!("**{:.4}**", c.p_value),
                            Some(c) => format!("{:.4}", c.p_value),
                            None => "n/a".to_string(),
                        }))
                        .collect(),
                );
            }
            aligned(&mut out, &grid);
        }
        if !self.p_tables.is_empty() {
            let _ = writeln!(
                out,
                "\nG1 = 1-3 lesions, G2 = 4-10 lesions, G3 = >10 lesions. Significant (p < {SIGNIFICANCE_LEVEL}) values in bold."
            );
        }
        for n in &self.notices {
            let _ = writeln!(out, "\nNote: {n}");
        }
        out
    }
}
