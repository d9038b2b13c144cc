//! Linear benchmarks: autoregressions on differenced data fit by ordinary least
//! squares, with AIC order selection. Moving-average terms are not modelled,
//! so these are ARI(p, d) and VAR(p) on d-differenced data.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::least_squares;
use crate::series::{MultiSeries, Sampled, UniformSeries};

pub const BASELINE_NOTE: &str = "baseline: ARI/VAR-OLS, MA terms omitted";
pub const MAX_DIFFERENCING: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArOrder {
    pub p: usize,
    pub d: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub order: ArOrder,
    /// Lag coefficients, lag 1 first.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Maximum-likelihood residual variance, `RSS / N_eff`.
    pub residual_variance: f64,
    /// `N_eff ln(residual_variance) + 2 (p + 1)`.
    pub aic: f64,
    pub n_eff: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarModel {
    pub p: usize,
    pub d: usize,
    /// `Φ_l`, lag 1 first: `z_t = c + Σ Φ_l z_{t−l} + e_t`.
    pub coefficient_matrices: Vec<DMatrix<f64>>,
    pub intercept: DVector<f64>,
    pub residual_covariance: DMatrix<f64>,
    pub n_eff: usize,
}

impl VarModel {
    pub fn dim(&self) -> usize {
        self.intercept.len()
    }
}

/// `d`-th order differences.
pub fn difference(values: &[f64], d: usize) -> Vec<f64> {
    let mut z = values.to_vec();
    for _ in 0..d {
        z = z.windows(2).map(|w| w[1] - w[0]).collect();
    }
    z
}

/// First element of each difference level `0..d`.
pub fn difference_heads(values: &[f64], d: usize) -> Vec<f64> {
    (0..d).map(|k| difference(&values[..=k], k)[0]).collect()
}

/// Inverse of [`difference`] given the heads it dropped.
pub fn undifference(heads: &[f64], z: &[f64]) -> Vec<f64> {
    let mut level = z.to_vec();
    for &h in heads.iter().rev() {
        let mut out = Vec::with_capacity(level.len() + 1);
        out.push(h);
        let mut acc = h;
        for v in &level {
            acc += v;
            out.push(acc);
        }
        level = out;
    }
    level
}

fn check_d(d: usize) -> Result<()> {
    if d > MAX_DIFFERENCING {
        return Err(Error::InvalidConfig(format!("differencing order must be at most {MAX_DIFFERENCING}, got {d}")));
    }
    Ok(())
}

/// `N_eff ln σ² + 2 (p + 1)`; a zero variance is floored so the value stays finite.
pub fn aic(n_eff: usize, residual_variance: f64, p: usize) -> f64 {
    n_eff as f64 * residual_variance.max(f64::MIN_POSITIVE).ln() + 2.0 * (p + 1) as f64
}

/// Regresses `z[t]` on `[1, z[t−1], …, z[t−p]]` for `t ≥ start`.
fn fit_differenced(z: &[f64], order: ArOrder, start: usize) -> Result<ArModel> {
    let p = order.p;
    if z.len() < p + 2 || start < p || start >= z.len() {
        return Err(Error::InsufficientData { needed: p + 2 + order.d, got: z.len() + order.d });
    }
    let n_eff = z.len() - start;
    let y = DMatrix::from_iterator(n_eff, 1, z[start..].iter().copied());
    let (lo, hi) = z[start..].iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));

    let (intercept, coefficients, rss) = if lo == hi {
        // Constant response: the exact fit needs no lag terms.
        (lo, vec![0.0; p], 0.0)
    } else {
        let x = DMatrix::from_fn(n_eff, p + 1, |r, c| if c == 0 { 1.0 } else { z[start + r - c] });
        let beta = least_squares(&x, &y)?;
        let resid = &y - &x * &beta;
        (beta[0], beta.iter().skip(1).copied().collect(), resid.norm_squared())
    };
    let residual_variance = rss / n_eff as f64;
    let aic = aic(n_eff, residual_variance, p);
    Ok(ArModel { order, coefficients, intercept, residual_variance, aic, n_eff })
}

pub fn fit_ar(series: &UniformSeries, order: ArOrder) -> Result<ArModel> {
    check_d(order.d)?;
    let z = difference(series.values(), order.d);
    fit_differenced(&z, order, order.p)
}

/// Grid search over `p ≤ p_max`, `d ≤ d_max` minimizing AIC. Every candidate
/// is scored on the same targets (original indices `t ≥ p_max + d_max`) so the
/// criteria are comparable; ties go to smaller `d`, then smaller `p`.
pub fn select_order(series: &UniformSeries, p_max: usize, d_max: usize) -> Result<ArOrder> {
    check_d(d_max)?;
    let len = series.len();
    if len < p_max + d_max + 2 {
        return Err(Error::InsufficientData { needed: p_max + d_max + 2, got: len });
    }
    let mut best: Option<(f64, ArOrder)> = None;
    let mut last_err = None;
    for d in 0..=d_max {
        let z = difference(series.values(), d);
        for p in 0..=p_max {
            let order = ArOrder { p, d };
            match fit_differenced(&z, order, p_max + d_max - d) {
                Ok(m) if best.is_none_or(|(aic, _)| m.aic < aic) => best = Some((m.aic, order)),
                Ok(_) => {}
                Err(e) => last_err = Some(e),
            }
        }
    }
    best.map(|(_, o)| o).ok_or_else(|| last_err.unwrap_or(Error::SingularDesign))
}

/// Recursive point forecasts, reintegrated to the original scale.
pub fn forecast_ar(model: &ArModel, history: &UniformSeries, horizon: usize) -> Result<Vec<f64>> {
    let ArOrder { p, d } = model.order;
    let values = history.values();
    if values.len() < p + d + 1 {
        return Err(Error::InsufficientData { needed: p + d + 1, got: values.len() });
    }
    let mut z = difference(values, d);
    let mut lasts = last_levels(values, d);
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let k = z.len();
        let next = model.intercept + model.coefficients.iter().enumerate().map(|(l, c)| c * z[k - 1 - l]).sum::<f64>();
        z.push(next);
        out.push(integrate_step(&mut lasts, next));
    }
    Ok(out)
}

/// Last value of each difference level `0..d`.
fn last_levels(values: &[f64], d: usize) -> Vec<f64> {
    (0..d).map(|k| *difference(&values[values.len() - 1 - k..], k).last().expect("non-empty")).collect()
}

fn integrate_step(lasts: &mut [f64], mut level: f64) -> f64 {
    if lasts.is_empty() {
        return level;
    }
    for k in (0..lasts.len()).rev() {
        lasts[k] += level;
        level = lasts[k];
    }
    level
}

fn difference_columns(series: &MultiSeries, d: usize) -> Vec<Vec<f64>> {
    (0..series.dim()).map(|j| difference(series.column(j).values(), d)).collect()
}

fn fit_var_differenced(z: &[Vec<f64>], p: usize, d: usize, start: usize) -> Result<VarModel> {
    let n = z.len();
    let len = z[0].len();
    if len < p + 2 || start < p || start >= len {
        return Err(Error::InsufficientData { needed: p + 2 + d, got: len + d });
    }
    let n_eff = len - start;
    let x = DMatrix::from_fn(n_eff, 1 + n * p, |r, c| {
        if c == 0 {
            1.0
        } else {
            let lag = (c - 1) / n + 1;
            z[(c - 1) % n][start + r - lag]
        }
    });
    let y = DMatrix::from_fn(n_eff, n, |r, j| z[j][start + r]);
    let beta = least_squares(&x, &y)?;
    let resid = &y - &x * &beta;
    let residual_covariance = resid.transpose() * &resid / n_eff as f64;
    let intercept = beta.row(0).transpose();
    let coefficient_matrices = (0..p).map(|l| DMatrix::from_fn(n, n, |i, k| beta[(1 + l * n + k, i)])).collect();
    Ok(VarModel { p, d, coefficient_matrices, intercept, residual_covariance, n_eff })
}

/// Per-equation least squares on the shared lag matrix of `d`-differenced data.
pub fn fit_var(series: &MultiSeries, p: usize, d: usize) -> Result<VarModel> {
    check_d(d)?;
    fit_var_differenced(&difference_columns(series, d), p, d, p)
}

/// Lag order `p ≤ p_max` minimizing `N ln det Σ + 2 n (n p + 1)` on a common sample.
pub fn select_var_order(series: &MultiSeries, p_max: usize, d: usize) -> Result<usize> {
    check_d(d)?;
    let z = difference_columns(series, d);
    let n = series.dim();
    let mut best: Option<(f64, usize)> = None;
    let mut last_err = None;
    for p in 0..=p_max {
        match fit_var_differenced(&z, p, d, p_max) {
            Ok(m) => {
                let det = m.residual_covariance.determinant().max(f64::MIN_POSITIVE);
                let aic = m.n_eff as f64 * det.ln() + 2.0 * (n * (n * p + 1)) as f64;
                if best.is_none_or(|(b, _)| aic < b) {
                    best = Some((aic, p));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.map(|(_, p)| p).ok_or_else(|| last_err.unwrap_or(Error::SingularDesign))
}

pub fn forecast_var(model: &VarModel, history: &MultiSeries, horizon: usize) -> Result<Vec<Vec<f64>>> {
    let n = model.dim();
    if history.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: history.dim() });
    }
    if history.len() < model.p + model.d + 1 {
        return Err(Error::InsufficientData { needed: model.p + model.d + 1, got: history.len() });
    }
    let mut z = difference_columns(history, model.d);
    let mut lasts: Vec<Vec<f64>> = (0..n).map(|j| last_levels(history.column(j).values(), model.d)).collect();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let k = z[0].len();
        let next: Vec<f64> = (0..n)
            .map(|i| {
                let mut v = model.intercept[i];
                for (l, phi) in model.coefficient_matrices.iter().enumerate() {
                    for (kk, zk) in z.iter().enumerate() {
                        v += phi[(i, kk)] * zk[k - 1 - l];
                    }
                }
                v
            })
            .collect();
        let mut level = Vec::with_capacity(n);
        for (j, v) in next.iter().enumerate() {
            z[j].push(*v);
            level.push(integrate_step(&mut lasts[j], *v));
        }
        out.push(level);
    }
    Ok(out)
}
