//! ROC curves and AUC for comparing detectors.
//!
//! The curve sweeps the decision threshold down through every distinct
//! score (`score > t` is a positive call). Tied scores enter the curve
//! together as one diagonal step, which makes the trapezoidal area equal to
//! the Mann-Whitney statistic `P(s+ > s-) + ½ P(s+ = s-)`.

use serde::{Deserialize, Serialize};

use crate::detect::{CsdReport, GroundTruth};
use crate::error::{ensure_finite, Error, Result};

/// Scores paired with ground-truth anomaly labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    entries: Vec<(f64, bool)>,
}

impl LabeledScores {
    pub fn new(entries: Vec<(f64, bool)>) -> Result<Self> {
        ensure_finite(entries.iter().map(|(s, _)| s), "scores")?;
        let positives = entries.iter().filter(|(_, l)| *l).count();
        if positives == 0 || positives == entries.len() {
            return Err(Error::InvalidInput(
                "ROC needs at least one positive and one negative label".into(),
            ));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(f64, bool)] {
        &self.entries
    }

    pub fn positives(&self) -> usize {
        self.entries.iter().filter(|(_, l)| *l).count()
    }

    pub fn negatives(&self) -> usize {
        self.entries.len() - self.positives()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Cells scoring strictly above this are called positive. The first
    /// point uses `+inf`.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

pub fn roc_auc(scores: &LabeledScores) -> RocCurve {
    let mut sorted = scores.entries.clone();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let p = scores.positives() as f64;
    let n = scores.negatives() as f64;

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == score {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // lower the threshold just below `score`; report the next distinct
        // score (or -inf) as the point's threshold
        let next = sorted.get(i).map_or(f64::NEG_INFINITY, |e| e.0);
        points.push(RocPoint {
            threshold: next,
            fpr: fp as f64 / n,
            tpr: tp as f64 / p,
        });
    }

    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum();
    RocCurve { points, auc }
}

fn label_entries(report: &CsdReport, truth: &GroundTruth) -> Result<Vec<(f64, bool)>> {
    for name in truth.referenced_channels() {
        if !report.channels.iter().any(|c| c == name) {
            return Err(Error::InvalidInput(format!(
                "ground truth names channel `{name}` which the report does not contain"
            )));
        }
    }
    Ok(report
        .rows
        .iter()
        .flat_map(|row| {
            report.channels.iter().enumerate().map(move |(c, name)| {
                (
                    row.scores[c],
                    truth.is_anomalous(name, row.start_sample, row.end_sample),
                )
            })
        })
        .collect())
}

/// One labelled score per `(row, channel)` cell of a report.
///
/// A cell is positive when its channel is listed as anomalous in `truth`, or
/// when one of the truth's sample ranges on that channel overlaps the row's
/// samples. Every channel named in `truth` must exist in the report.
pub fn label_report(report: &CsdReport, truth: &GroundTruth) -> Result<LabeledScores> {
    LabeledScores::new(label_entries(report, truth)?)
}

/// Reports pooled into one ROC, each with the truth of its own recording.
#[derive(Debug, Clone)]
pub struct ReportGroup<'a> {
    pub name: String,
    pub members: Vec<(&'a CsdReport, &'a GroundTruth)>,
}

impl<'a> ReportGroup<'a> {
    pub fn single(report: &'a CsdReport, truth: &'a GroundTruth) -> Self {
        Self {
            name: report.method.name().to_string(),
            members: vec![(report, truth)],
        }
    }

    pub fn labels(&self) -> Result<LabeledScores> {
        let mut entries = Vec::new();
        for (report, truth) in &self.members {
            entries.extend(label_entries(report, truth)?);
        }
        LabeledScores::new(entries)
    }

    /// Channel names and row spans of every member, in order.
    fn cells(&self) -> Vec<(Vec<String>, Vec<(usize, usize)>)> {
        self.members
            .iter()
            .map(|(r, _)| {
                (
                    r.channels.clone(),
                    r.rows
                        .iter()
                        .map(|row| (row.start_sample, row.end_sample))
                        .collect(),
                )
            })
            .collect()
    }
}

/// One line of a method comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub auc: f64,
    /// AUC minus the first (baseline) row's AUC; `None` for the baseline.
    pub increment: Option<f64>,
}

/// ROC per group plus an AUC table against the first group. All groups must
/// cover the same `(row, channel)` cells in the same order.
pub fn compare_groups(groups: &[ReportGroup<'_>]) -> Result<(Vec<RocCurve>, Vec<ComparisonRow>)> {
    let first = groups
        .first()
        .ok_or(Error::Empty("no reports to compare"))?;
    if groups.iter().any(|g| g.members.is_empty()) {
        return Err(Error::Empty("report group without members"));
    }
    let reference = first.cells();
    let mut curves = Vec::with_capacity(groups.len());
    for group in groups {
        if group.cells() != reference {
            return Err(Error::InvalidInput(format!(
                "`{}` covers different segments or channels than `{}`",
                group.name, first.name
            )));
        }
        curves.push(roc_auc(&group.labels()?));
    }
    let baseline = curves[0].auc;
    let rows = groups
        .iter()
        .zip(&curves)
        .enumerate()
        .map(|(i, (group, curve))| ComparisonRow {
            name: group.name.clone(),
            auc: curve.auc,
            increment: (i > 0).then_some(curve.auc - baseline),
        })
        .collect();
    Ok((curves, rows))
}

/// [`compare_groups`] with one group per report, all against one truth.
pub fn compare_reports(
    reports: &[CsdReport],
    truth: &GroundTruth,
) -> Result<(Vec<RocCurve>, Vec<ComparisonRow>)> {
    let groups: Vec<_> = reports
        .iter()
        .map(|r| ReportGroup::single(r, truth))
        .collect();
    compare_groups(&groups)
}
