//! R^2, RMSE, MAE and MAPE with per-sample residuals.
//!
//! Residuals are `predicted - actual`. MAPE is a fraction, not a percentage.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Actual values with magnitude at or below this are rejected by [`mape`].
pub const MAPE_ZERO_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {actual} actual values vs {predicted} predictions")]
    LengthMismatch { actual: usize, predicted: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("actual values are constant; R^2 is undefined")]
    ConstantActual,
    #[error("actual value at position {0} is too close to zero for MAPE")]
    NearZeroActual(usize),
}

fn check(actual: &[f64], predicted: &[f64], needed: usize) -> Result<(), MetricsError> {
    if actual.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch {
            actual: actual.len(),
            predicted: predicted.len(),
        });
    }
    if actual.len() < needed {
        return Err(MetricsError::TooFewSamples {
            needed,
            got: actual.len(),
        });
    }
    Ok(())
}

/// Coefficient of determination, 1 - SS_res / SS_tot.
pub fn r2(actual: &[f64], predicted: &[f64]) -> Result<f64, MetricsError> {
    check(actual, predicted, 2)?;
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|a| (a - mean) * (a - mean)).sum();
    if ss_tot == 0.0 {
        return Err(MetricsError::ConstantActual);
    }
    let ss_res: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (p - a) * (p - a))
        .sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn mse(actual: &[f64], predicted: &[f64]) -> Result<f64, MetricsError> {
    check(actual, predicted, 1)?;
    let ss: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (p - a) * (p - a))
        .sum();
    Ok(ss / actual.len() as f64)
}

pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64, MetricsError> {
    mse(actual, predicted).map(f64::sqrt)
}

pub fn mae(actual: &[f64], predicted: &[f64]) -> Result<f64, MetricsError> {
    check(actual, predicted, 1)?;
    let s: f64 = actual.iter().zip(predicted).map(|(a, p)| (p - a).abs()).sum();
    Ok(s / actual.len() as f64)
}

pub fn mape(actual: &[f64], predicted: &[f64]) -> Result<f64, MetricsError> {
    check(actual, predicted, 1)?;
    let mut s = 0.0;
    for (i, (a, p)) in actual.iter().zip(predicted).enumerate() {
        if a.abs() <= MAPE_ZERO_TOLERANCE {
            return Err(MetricsError::NearZeroActual(i));
        }
        s += ((p - a) / a).abs();
    }
    Ok(s / actual.len() as f64)
}

/// Residual of one evaluated sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub row_id: u64,
    /// predicted - actual
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub r2: f64,
    pub rmse: f64,
    pub mae: f64,
    pub mape: f64,
    pub residuals: Vec<Residual>,
}

/// All four metrics plus residuals for one set of predictions.
pub fn evaluate(
    actual: &[f64],
    predicted: &[f64],
    row_ids: &[u64],
) -> Result<EvalReport, MetricsError> {
    check(actual, predicted, 2)?;
    if row_ids.len() != actual.len() {
        return Err(MetricsError::LengthMismatch {
            actual: row_ids.len(),
            predicted: predicted.len(),
        });
    }
    Ok(EvalReport {
        r2: r2(actual, predicted)?,
        rmse: rmse(actual, predicted)?,
        mae: mae(actual, predicted)?,
        mape: mape(actual, predicted)?,
        residuals: row_ids
            .iter()
            .zip(actual.iter().zip(predicted))
            .map(|(&row_id, (a, p))| Residual {
                row_id,
                error: p - a,
            })
            .collect(),
    })
}
