//! Error metrics for comparing estimated and reference signals.

use nalgebra::Vector3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rrmse {
    pub rmse: f64,
    /// RMSE as a percentage of the mean of the two signals' ranges.
    pub percent: f64,
}

fn selected<'a>(values: &'a [f64], mask: Option<&'a [bool]>) -> impl Iterator<Item = f64> + 'a {
    values
        .iter()
        .enumerate()
        .filter(move |(i, _)| mask.is_none_or(|m| m[*i]))
        .map(|(_, v)| *v)
}

fn range(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    hi - lo
}

/// `RMSE` and `100·RMSE / (½(range(est) + range(truth)))`, evaluated on the
/// samples where `mask` is true (all samples when `None`).
pub fn compute_rrmse(estimate: &[f64], truth: &[f64], mask: Option<&[bool]>) -> Result<Rrmse> {
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "compared series",
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    if let Some(m) = mask {
        if m.len() != truth.len() {
            return Err(Error::DimensionMismatch {
                what: "mask",
                expected: truth.len(),
                got: m.len(),
            });
        }
    }
    let n = selected(truth, mask).count();
    if n < 2 {
        return Err(Error::validation(format!("rRMSE needs at least 2 samples, got {n}")));
    }
    let sq: f64 = selected(estimate, mask)
        .zip(selected(truth, mask))
        .map(|(e, t)| (e - t).powi(2))
        .sum();
    let rmse = (sq / n as f64).sqrt();
    let denom = 0.5 * (range(selected(estimate, mask)) + range(selected(truth, mask)));
    if !(denom > 0.0) {
        return Err(Error::DegenerateRange(format!("mean signal range is {denom}")));
    }
    Ok(Rrmse {
        rmse,
        percent: 100.0 * rmse / denom,
    })
}

/// Per-axis [`compute_rrmse`] of 3-vector series.
pub fn compute_rrmse_axes(estimate: &[Vector3<f64>], truth: &[Vector3<f64>], mask: Option<&[bool]>) -> Result<[Rrmse; 3]> {
    let axis = |k: usize| -> Result<Rrmse> {
        let e: Vec<f64> = estimate.iter().map(|v| v[k]).collect();
        let t: Vec<f64> = truth.iter().map(|v| v[k]).collect();
        compute_rrmse(&e, &t, mask)
    };
    Ok([axis(0)?, axis(1)?, axis(2)?])
}

/// RMSE over `window` as a percentage of `norm`, the convention used for
/// muscle tensions normalized by the largest maximal force.
pub fn normalized_rmse(estimate: &[f64], truth: &[f64], norm: f64, window: std::ops::Range<usize>) -> Result<f64> {
    if estimate.len() != truth.len() || window.end > truth.len() || window.is_empty() {
        return Err(Error::validation("window must be a non-empty range inside both series"));
    }
    if !(norm > 0.0) {
        return Err(Error::DegenerateRange(format!("normalization {norm}")));
    }
    let n = window.len() as f64;
    let sq: f64 = window.map(|i| (estimate[i] - truth[i]).powi(2)).sum();
    Ok(100.0 * (sq / n).sqrt() / norm)
}
