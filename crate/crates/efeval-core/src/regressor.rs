//! Per-class calibration of effect scores to accuracy change.
//!
//! Each completed round contributes one `(effect score, measured accuracy
//! change)` pair per class. An ordinary least-squares line through those
//! pairs, after dropping interquartile-range outliers, turns the raw dot
//! product into an accuracy-change prediction for the round that has not been
//! re-tested yet.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// One historical calibration point for a class.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EfSample {
    /// Update round that produced the pair.
    pub round: usize,
    pub class: usize,
    /// Effect score of the update on this class's evaluation set.
    pub ef: f64,
    /// Measured accuracy change on the same set, after minus before.
    pub acc_delta: f64,
}

/// Fitted least-squares line for one class at one round.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RegressionModel {
    pub class: usize,
    /// Round whose accuracy change this model is meant to predict.
    pub round: usize,
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination over the samples kept by the fit.
    pub r2: f64,
    pub n_used: usize,
    pub n_removed: usize,
}

/// Quantile by linear interpolation at rank `(n - 1) * p`.
///
/// `values` must be sorted ascending.
pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput {
            context: "quantile of empty list",
        });
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("quantile rank {p} outside [0, 1]")));
    }
    debug_assert!(values.windows(2).all(|w| w[0] <= w[1]));
    let h = (values.len() - 1) as f64 * p;
    let lo = h as usize;
    let hi = if lo + 1 < values.len() { lo + 1 } else { lo };
    Ok(values[lo] + (h - lo as f64) * (values[hi] - values[lo]))
}

/// Tukey fences `(Q1 - 1.5 IQR, Q3 + 1.5 IQR)` of a sorted value list.
fn fences(sorted: &[f64]) -> Result<(f64, f64)> {
    let q1 = quantile(sorted, 0.25)?;
    let q3 = quantile(sorted, 0.75)?;
    let iqr = q3 - q1;
    Ok((q1 - 1.5 * iqr, q3 + 1.5 * iqr))
}

/// Splits samples into kept and removed by Tukey fences.
///
/// Fences are computed independently for the effect scores and the accuracy
/// deltas; a sample is removed when either coordinate lies strictly outside
/// its fences, so boundary values are kept. Input order is preserved within
/// each output list.
pub fn filter_outliers(samples: &[EfSample]) -> Result<(Vec<EfSample>, Vec<EfSample>)> {
    if samples.is_empty() {
        return Err(Error::EmptyInput {
            context: "outlier filter over no samples",
        });
    }
    let mut efs: Vec<f64> = samples.iter().map(|s| s.ef).collect();
    let mut deltas: Vec<f64> = samples.iter().map(|s| s.acc_delta).collect();
    efs.sort_by(f64::total_cmp);
    deltas.sort_by(f64::total_cmp);
    let (ef_lo, ef_hi) = fences(&efs)?;
    let (d_lo, d_hi) = fences(&deltas)?;

    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for &s in samples {
        let out = s.ef < ef_lo || s.ef > ef_hi || s.acc_delta < d_lo || s.acc_delta > d_hi;
        if out {
            removed.push(s);
        } else {
            kept.push(s);
        }
    }
    Ok((kept, removed))
}

/// Fits a least-squares line of accuracy delta on effect score.
///
/// Outliers are removed first; the line and its coefficient of determination
/// are computed over the kept samples only. Samples are brought into a
/// canonical internal order first, so the result is bit-identical under any
/// reordering of the input.
pub fn fit(class: usize, round: usize, samples: &[EfSample]) -> Result<RegressionModel> {
    for s in samples {
        if s.class != class {
            return Err(Error::CacheConsistency(format!(
                "sample from class {} in fit for class {}",
                s.class, class
            )));
        }
        if !s.ef.is_finite() || !s.acc_delta.is_finite() {
            return Err(Error::NumericOverflow {
                context: "calibration sample",
            });
        }
    }
    if samples.len() < 2 {
        return Err(Error::InsufficientData { got: samples.len() });
    }
    let (mut kept, removed) = filter_outliers(samples)?;
    if kept.len() < 2 {
        return Err(Error::InsufficientData { got: kept.len() });
    }
    kept.sort_by(|a, b| {
        a.ef.total_cmp(&b.ef)
            .then(a.acc_delta.total_cmp(&b.acc_delta))
            .then(a.round.cmp(&b.round))
    });

    let n = kept.len() as f64;
    let mean_x = kept.iter().map(|s| s.ef).sum::<f64>() / n;
    let mean_y = kept.iter().map(|s| s.acc_delta).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for s in &kept {
        let dx = s.ef - mean_x;
        sxx += dx * dx;
        sxy += dx * (s.acc_delta - mean_y);
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateRegressor);
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;

    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for s in &kept {
        let resid = s.acc_delta - (slope * s.ef + intercept);
        ss_res += resid * resid;
        let dy = s.acc_delta - mean_y;
        ss_tot += dy * dy;
    }
    let r2 = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };

    Ok(RegressionModel {
        class,
        round,
        slope,
        intercept,
        r2,
        n_used: kept.len(),
        n_removed: removed.len(),
    })
}

/// Predicted accuracy change for an effect score.
pub fn predict(model: &RegressionModel, ef: f64) -> f64 {
    model.slope * ef + model.intercept
}
