//! MAE / RMSE, per feature (scalar errors) and aggregated (vector norms).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorPair {
    pub mae: f64,
    pub rmse: f64,
    pub count: usize,
}

impl ErrorPair {
    /// From a non-empty set of error magnitudes.
    pub fn from_magnitudes(errors: impl IntoIterator<Item = f64>) -> Option<Self> {
        let (mut abs, mut sq, mut count) = (0.0, 0.0, 0usize);
        for e in errors {
            abs += e.abs();
            sq += e * e;
            count += 1;
        }
        if count == 0 {
            return None;
        }
        let mae = abs / count as f64;
        // Power-mean inequality; max() absorbs rounding in the last ulp.
        let rmse = (sq / count as f64).sqrt().max(mae);
        Some(Self { mae, rmse, count })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub per_feature: Vec<ErrorPair>,
    /// MAE of `‖e‖₂` and RMSE from `‖e‖₂²`.
    pub aggregate_norm: ErrorPair,
}

pub fn mae_rmse<A: AsRef<[f64]>, P: AsRef<[f64]>>(actual: &[A], predicted: &[P]) -> Result<MetricSummary> {
    if actual.len() != predicted.len() || actual.is_empty() {
        return Err(Error::LengthMismatch { actual: actual.len(), predicted: predicted.len() });
    }
    let n = actual[0].as_ref().len();
    for v in actual.iter().map(AsRef::as_ref).chain(predicted.iter().map(AsRef::as_ref)) {
        if v.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: v.len() });
        }
    }
    let errors: Vec<Vec<f64>> = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| a.as_ref().iter().zip(p.as_ref()).map(|(x, y)| y - x).collect())
        .collect();
    let per_feature =
        (0..n).map(|j| ErrorPair::from_magnitudes(errors.iter().map(|e| e[j])).expect("non-empty")).collect();
    let aggregate_norm = ErrorPair::from_magnitudes(errors.iter().map(|e| e.iter().map(|v| v * v).sum::<f64>().sqrt()))
        .expect("non-empty");
    Ok(MetricSummary { per_feature, aggregate_norm })
}
