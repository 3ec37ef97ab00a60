//! Calibration report: joins per-round estimates with measured accuracy
//! changes and summarizes how well the effect scores track reality.
//!
//! One row per (estimable round, class); estimable rounds start at 3, the
//! first round with two calibration samples behind it. The summary adds the
//! per-class Pearson correlation between effect scores and measured deltas,
//! the final regression R², and the mean absolute prediction error.

use std::collections::BTreeMap;
use std::fs;

use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};
use crate::harness::RunPaths;
use crate::manifest::{EstimateStatus, Record};

/// Earliest round with enough history for a calibrated estimate.
pub const FIRST_ESTIMABLE_ROUND: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub round: usize,
    pub class: usize,
    pub ef: f64,
    pub status: EstimateStatus,
    pub predicted: Option<f64>,
    pub measured: f64,
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: usize,
    pub rows: usize,
    /// Pearson correlation between ef and measured acc_delta; absent when
    /// either side has no spread.
    pub pearson: Option<f64>,
    /// R² of the most recently fitted regressor for this class.
    pub final_r2: Option<f64>,
    pub mean_abs_error: Option<f64>,
}

/// Outlier handling note carried in every summary, since the fence rule is
/// a pinned convention rather than a universal one.
pub const OUTLIER_RULE: &str = "samples outside q1 - 1.5*iqr or q3 + 1.5*iqr \
    on either coordinate are dropped; comparisons strict, boundary values kept";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rounds: usize,
    pub classes: Vec<ClassSummary>,
    /// Mean of the per-class final R² values, where available.
    pub mean_r2: Option<f64>,
    pub outlier_rule: String,
}

/// Sample Pearson correlation coefficient; `None` when undefined.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Builds report rows and the per-class summary from manifest records.
pub fn build_report(records: &[Record]) -> Result<(Vec<ReportRow>, Summary)> {
    let rounds = records
        .iter()
        .find_map(|r| match r {
            Record::RunStart { config, .. } => Some(config.rounds),
            _ => None,
        })
        .ok_or_else(|| AppError::Manifest("manifest has no run_start record".into()))?;

    let mut measured: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for rec in records {
        if let Record::Measured {
            round,
            class,
            acc_delta,
            ..
        } = rec
        {
            measured.insert((*round, *class), *acc_delta);
        }
    }

    let mut rows = Vec::new();
    for rec in records {
        let Record::Estimate {
            round,
            class,
            ef,
            status,
            predicted,
            r2,
            ..
        } = rec
        else {
            continue;
        };
        if *round < FIRST_ESTIMABLE_ROUND {
            continue;
        }
        let measured = *measured.get(&(*round, *class)).ok_or_else(|| {
            AppError::Manifest(format!(
                "estimate at round {round} class {class} has no measured counterpart"
            ))
        })?;
        rows.push(ReportRow {
            round: *round,
            class: *class,
            ef: *ef,
            status: *status,
            predicted: *predicted,
            measured,
            r2: *r2,
        });
    }
    rows.sort_by_key(|r| (r.round, r.class));

    let mut by_class: BTreeMap<usize, Vec<&ReportRow>> = BTreeMap::new();
    for row in &rows {
        by_class.entry(row.class).or_default().push(row);
    }
    let mut classes = Vec::new();
    for (class, class_rows) in &by_class {
        let efs: Vec<f64> = class_rows.iter().map(|r| r.ef).collect();
        let deltas: Vec<f64> = class_rows.iter().map(|r| r.measured).collect();
        let errors: Vec<f64> = class_rows
            .iter()
            .filter_map(|r| r.predicted.map(|p| (p - r.measured).abs()))
            .collect();
        let final_r2 = class_rows.iter().rev().find_map(|r| r.r2);
        classes.push(ClassSummary {
            class: *class,
            rows: class_rows.len(),
            pearson: pearson(&efs, &deltas),
            final_r2,
            mean_abs_error: if errors.is_empty() {
                None
            } else {
                Some(errors.iter().sum::<f64>() / errors.len() as f64)
            },
        });
    }
    let r2s: Vec<f64> = classes.iter().filter_map(|c| c.final_r2).collect();
    let mean_r2 = if r2s.is_empty() {
        None
    } else {
        Some(r2s.iter().sum::<f64>() / r2s.len() as f64)
    };
    Ok((
        rows,
        Summary {
            rounds,
            classes,
            mean_r2,
            outlier_rule: OUTLIER_RULE.to_string(),
        },
    ))
}

/// Writes `report.jsonl` and `summary.json`, replacing older contents.
pub fn write_report(paths: &RunPaths, rows: &[ReportRow], summary: &Summary) -> Result<()> {
    let mut body = String::new();
    for row in rows {
        body.push_str(
            &serde_json::to_string(row)
                .map_err(|e| AppError::Manifest(format!("serializing report row: {e}")))?,
        );
        body.push('\n');
    }
    let report = paths.report();
    fs::write(&report, body).map_err(|e| AppError::io(&report, e))?;
    let summary_json = serde_json::to_string_pretty(summary)
        .map_err(|e| AppError::Manifest(format!("serializing summary: {e}")))?;
    let summary_path = paths.summary();
    fs::write(&summary_path, summary_json).map_err(|e| AppError::io(&summary_path, e))
}
