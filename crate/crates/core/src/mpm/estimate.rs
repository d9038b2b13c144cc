//! Local parameter learning for the multivariate model `dX = A dt + B dW`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sqrt_psd;
use crate::series::{MultiSeries, Sampled, WindowView};

/// Fewest rows for which the five-point stencil has an interior point.
pub const MIN_MPM_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct DriftSamples {
    /// `W x n`, one drift estimate per window row.
    pub samples: DMatrix<f64>,
    /// Column means.
    pub mean: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdeParams {
    pub drift: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub diffusion: DMatrix<f64>,
    pub window_used: usize,
}

impl SdeParams {
    pub fn dim(&self) -> usize {
        self.drift.len()
    }

    /// Constant-coefficient parameters with `C = B B^T`.
    pub fn from_drift_diffusion(drift: DVector<f64>, diffusion: DMatrix<f64>) -> Result<Self> {
        let n = drift.len();
        if diffusion.shape() != (n, n) {
            return Err(Error::DimensionMismatch { expected: n, got: diffusion.nrows() });
        }
        let covariance = &diffusion * diffusion.transpose();
        Ok(Self { drift, covariance, diffusion, window_used: 0 })
    }
}

/// Per-row drift estimates: the fourth-order central stencil where two
/// neighbours exist on both sides, forward differences at the first two rows
/// and the second-to-last row, and a backward difference at the last row.
pub fn estimate_drift(window: &WindowView<'_, MultiSeries>, dt: f64) -> Result<DriftSamples> {
    let w = window.len();
    if w < MIN_MPM_WINDOW {
        return Err(Error::WindowTooSmall { got: w, min: MIN_MPM_WINDOW });
    }
    let n = window.dim();
    let mut samples = DMatrix::<f64>::zeros(w, n);
    for i in 0..w {
        let here = window.row(i);
        if i >= 2 && i + 2 < w {
            let (m2, m1, p1, p2) = (window.row(i - 2), window.row(i - 1), window.row(i + 1), window.row(i + 2));
            for j in 0..n {
                samples[(i, j)] = ((2.0 / 3.0) * (p1[j] - m1[j]) + (1.0 / 12.0) * (m2[j] - p2[j])) / dt;
            }
        } else if i + 1 < w {
            let next = window.row(i + 1);
            for j in 0..n {
                samples[(i, j)] = (next[j] - here[j]) / dt;
            }
        } else {
            let prev = window.row(i - 1);
            for j in 0..n {
                samples[(i, j)] = (here[j] - prev[j]) / dt;
            }
        }
    }
    let mean = DVector::from_iterator(n, (0..n).map(|j| samples.column(j).sum() / w as f64));
    Ok(DriftSamples { samples, mean })
}

/// Residual covariance `C = Σ ã ãᵀ dt / (W − 1)` and its symmetric root `B`.
pub fn estimate_diffusion(drift: &DriftSamples, dt: f64) -> Result<SdeParams> {
    let (w, n) = drift.samples.shape();
    if w < 2 {
        return Err(Error::DegenerateWindow(w));
    }
    let mut covariance = DMatrix::<f64>::zeros(n, n);
    for i in 0..w {
        for j in 0..n {
            let rj = drift.samples[(i, j)] - drift.mean[j];
            for k in j..n {
                covariance[(j, k)] += rj * (drift.samples[(i, k)] - drift.mean[k]);
            }
        }
    }
    let scale = dt / (w - 1) as f64;
    for j in 0..n {
        for k in j..n {
            covariance[(j, k)] *= scale;
            covariance[(k, j)] = covariance[(j, k)];
        }
    }
    let root = sqrt_psd(&covariance)?;
    let largest = covariance.diagonal().iter().copied().fold(0.0, f64::max);
    if root.clamped < -1e-10 * largest {
        log::warn!("clamped negative covariance eigenvalue {:e}", root.clamped);
    }
    Ok(SdeParams { drift: drift.mean.clone(), covariance, diffusion: root.root, window_used: w })
}

pub fn estimate_sde(window: &WindowView<'_, MultiSeries>, dt: f64) -> Result<SdeParams> {
    estimate_diffusion(&estimate_drift(window, dt)?, dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Transient,
    Nominal,
    Steady,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPolicy {
    pub w_base: usize,
    pub w_min: usize,
    pub w_max: usize,
    pub threshold: f64,
    pub lookback: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowDecision {
    pub drift_magnitude: f64,
    pub chosen_width: usize,
    pub regime: Regime,
}

impl WindowPolicy {
    pub fn new(w_min: usize, w_base: usize, w_max: usize, threshold: f64, lookback: usize) -> Result<Self> {
        if w_min < MIN_MPM_WINDOW {
            return Err(Error::InvalidConfig(format!("window.min must be at least {MIN_MPM_WINDOW}, got {w_min}")));
        }
        if !(w_min <= w_base && w_base <= w_max) {
            return Err(Error::InvalidConfig(format!(
                "window widths must satisfy min <= base <= max, got {w_min}/{w_base}/{w_max}"
            )));
        }
        if lookback == 0 {
            return Err(Error::InvalidConfig("window.lookback must be at least 1".into()));
        }
        if !(threshold.is_finite() && threshold > 0.0) {
            return Err(Error::InvalidConfig(format!("window.threshold must be positive, got {threshold}")));
        }
        Ok(Self { w_base, w_min, w_max, threshold, lookback })
    }

    /// Rows of history every branch of the rule needs.
    pub fn warmup(&self) -> usize {
        self.w_max + self.lookback
    }

    pub fn classify(&self, drift_magnitude: f64) -> WindowDecision {
        let (chosen_width, regime) = if drift_magnitude > self.threshold {
            (self.w_min, Regime::Transient)
        } else if drift_magnitude < self.threshold / 5.0 {
            (self.w_max, Regime::Steady)
        } else {
            (self.w_base, Regime::Nominal)
        };
        WindowDecision { drift_magnitude, chosen_width, regime }
    }
}

/// `‖X(t_i) − X(t_{i−L})‖₂ / (L dt)` at row `i`.
pub fn drift_magnitude(series: &MultiSeries, i: usize, lookback: usize, dt: f64) -> f64 {
    let now = series.row(i);
    let then = series.row(i - lookback);
    let sq: f64 = now.iter().zip(then).map(|(a, b)| (a - b) * (a - b)).sum();
    sq.sqrt() / (lookback as f64 * dt)
}

/// Twice the median drift magnitude over the first `w_max + L` rows. Falls
/// back to the smallest positive normal float when that median is zero.
pub fn default_threshold(series: &MultiSeries, w_max: usize, lookback: usize, dt: f64) -> Result<f64> {
    let span = w_max + lookback;
    if series.len() < span || span <= lookback {
        return Err(Error::InsufficientData { needed: span, got: series.len() });
    }
    let mut d: Vec<f64> = (lookback..span).map(|i| drift_magnitude(series, i, lookback, dt)).collect();
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let median = if m % 2 == 1 { d[m / 2] } else { 0.5 * (d[m / 2 - 1] + d[m / 2]) };
    Ok((2.0 * median).max(f64::MIN_POSITIVE))
}

/// Decision for the state at row `end_index − 1`.
pub fn select_window(series: &MultiSeries, end_index: usize, policy: &WindowPolicy, dt: f64) -> Result<WindowDecision> {
    if end_index < policy.warmup() || end_index > series.len() {
        return Err(Error::OutOfBounds { end_index, width: policy.warmup(), len: series.len() });
    }
    let d = drift_magnitude(series, end_index - 1, policy.lookback, dt);
    Ok(policy.classify(d))
}
