//! The four comparison metrics, each computed over one fold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute error below which a prediction counts as precise.
pub const POP_THRESHOLD: f64 = 0.05;

fn check(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            actual: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::EmptyInput("metrics need at least one prediction".into()));
    }
    Ok(())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    mse(y, yhat).map(f64::sqrt)
}

/// Share of predictions on the same side of 1 as the observed CMF; a product
/// of exactly zero counts as consistent.
pub fn consistency_rate(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    let hits = y
        .iter()
        .zip(yhat)
        .filter(|(a, b)| (*a - 1.0) * (*b - 1.0) >= 0.0)
        .count();
    Ok(hits as f64 / y.len() as f64)
}

/// Percentage of predictions strictly within [`POP_THRESHOLD`].
pub fn pop(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    let hits = y
        .iter()
        .zip(yhat)
        .filter(|(a, b)| (*a - *b).abs() < POP_THRESHOLD)
        .count();
    Ok(100.0 * hits as f64 / y.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub cr: f64,
    pub pop: f64,
}

impl Metrics {
    pub fn compute(y: &[f64], yhat: &[f64]) -> Result<Metrics> {
        Ok(Metrics {
            mae: mae(y, yhat)?,
            rmse: rmse(y, yhat)?,
            cr: consistency_rate(y, yhat)?,
            pop: pop(y, yhat)?,
        })
    }

    /// Unweighted mean over folds.
    pub fn average(folds: &[Metrics]) -> Option<Metrics> {
        if folds.is_empty() {
            return None;
        }
        let n = folds.len() as f64;
        let mean = |f: fn(&Metrics) -> f64| folds.iter().map(f).sum::<f64>() / n;
        Some(Metrics {
            mae: mean(|m| m.mae),
            rmse: mean(|m| m.rmse),
            cr: mean(|m| m.cr),
            pop: mean(|m| m.pop),
        })
    }
}
