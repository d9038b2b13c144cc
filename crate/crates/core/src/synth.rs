//! Synthetic paths with known parameters.
//!
//! GBM paths use the exact log-normal transition; multivariate paths use
//! Euler–Maruyama, the same discretization the estimators assume.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::jacobi_eigen;
use crate::rng::SeededRng;
use crate::series::{MultiSeries, UniformSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbmSpec {
    pub s0: f64,
    pub a: f64,
    pub b: f64,
    pub n_steps: usize,
    pub dt: f64,
    #[serde(default = "default_gbm_name")]
    pub name: String,
}

fn default_gbm_name() -> String {
    "value".into()
}

impl GbmSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return Err(Error::InvalidConfig(format!("s0 must be positive, got {}", self.s0)));
        }
        if !(self.b >= 0.0 && self.b.is_finite() && self.a.is_finite()) {
            return Err(Error::InvalidConfig("a must be finite and b non-negative".into()));
        }
        check_steps(self.n_steps, self.dt)
    }
}

fn check_steps(n_steps: usize, dt: f64) -> Result<()> {
    if n_steps == 0 {
        return Err(Error::InvalidConfig("n_steps must be at least 1".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    Ok(())
}

/// Drift and/or diffusion replacing the current ones from `start_index` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeOverride {
    pub start_index: usize,
    #[serde(default)]
    pub drift: Option<Vec<f64>>,
    #[serde(default)]
    pub diffusion: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSdeSpec {
    pub x0: Vec<f64>,
    pub drift: Vec<f64>,
    /// Row-major `n x n`, symmetric PSD.
    pub diffusion: Vec<Vec<f64>>,
    pub n_steps: usize,
    pub dt: f64,
    #[serde(default)]
    pub regime_schedule: Vec<RegimeOverride>,
    #[serde(default)]
    pub feature_names: Option<Vec<String>>,
}

impl LinearSdeSpec {
    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.feature_names.clone().unwrap_or_else(|| (0..self.dim()).map(|j| format!("x{j}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 {
            return Err(Error::InvalidConfig("x0 must have at least one entry".into()));
        }
        check_steps(self.n_steps, self.dt)?;
        check_vector(&self.drift, n, "drift")?;
        check_diffusion(&self.diffusion, n)?;
        if let Some(names) = &self.feature_names {
            if names.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: names.len() });
            }
        }
        let mut prev = None;
        for o in &self.regime_schedule {
            if prev.is_some_and(|p| o.start_index <= p) {
                return Err(Error::InvalidConfig("regime_schedule start indices must be strictly increasing".into()));
            }
            prev = Some(o.start_index);
            if let Some(a) = &o.drift {
                check_vector(a, n, "regime drift")?;
            }
            if let Some(b) = &o.diffusion {
                check_diffusion(b, n)?;
            }
        }
        Ok(())
    }
}

fn check_vector(v: &[f64], n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: v.len() });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidConfig(format!("{what} must be finite")));
    }
    Ok(())
}

fn to_matrix(rows: &[Vec<f64>], n: usize) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, got: rows.len() });
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn check_diffusion(rows: &[Vec<f64>], n: usize) -> Result<()> {
    let b = to_matrix(rows, n)?;
    if b.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidConfig("diffusion must be finite".into()));
    }
    let scale = b.norm().max(f64::MIN_POSITIVE);
    if (&b - b.transpose()).norm() > 1e-12 * scale {
        return Err(Error::InvalidConfig("diffusion must be symmetric".into()));
    }
    let min = jacobi_eigen(&b)?.values.min();
    if min < -1e-10 * scale {
        return Err(Error::InvalidConfig(format!("diffusion must be positive semidefinite (eigenvalue {min:e})")));
    }
    Ok(())
}

/// `n_steps + 1` samples starting at `s0`.
pub fn simulate_gbm(spec: &GbmSpec, rng: &mut SeededRng) -> Result<UniformSeries> {
    spec.validate()?;
    let drift = (spec.a - 0.5 * spec.b * spec.b) * spec.dt;
    let vol = spec.b * spec.dt.sqrt();
    let mut values = Vec::with_capacity(spec.n_steps + 1);
    let mut s = spec.s0;
    values.push(s);
    for _ in 0..spec.n_steps {
        s *= (drift + vol * rng.standard_normal()).exp();
        values.push(s);
    }
    UniformSeries::new(spec.name.clone(), values, spec.dt)
}

/// `n_steps + 1` rows; the step from row `i` uses the regime active at `i`.
pub fn simulate_linear_sde(spec: &LinearSdeSpec, rng: &mut SeededRng) -> Result<MultiSeries> {
    spec.validate()?;
    let n = spec.dim();
    let mut drift = DVector::from_column_slice(&spec.drift);
    let mut b = to_matrix(&spec.diffusion, n)?;
    let mut schedule = spec.regime_schedule.iter().peekable();

    let mut data = Vec::with_capacity((spec.n_steps + 1) * n);
    let mut x = DVector::from_column_slice(&spec.x0);
    data.extend(x.iter());
    let mut dw = vec![0.0; n];
    for i in 0..spec.n_steps {
        while let Some(o) = schedule.next_if(|o| o.start_index <= i) {
            if let Some(a) = &o.drift {
                drift = DVector::from_column_slice(a);
            }
            if let Some(rows) = &o.diffusion {
                b = to_matrix(rows, n)?;
            }
        }
        rng.fill_wiener(spec.dt, &mut dw);
        x += &drift * spec.dt + &b * DVector::from_column_slice(&dw);
        data.extend(x.iter());
    }
    MultiSeries::from_flat(spec.names(), data, spec.dt)
}

pub const ENGINE_CHANNELS: [&str; 8] = ["LOT", "FW TEMP", "EXT TEMP A", "EXT TEMP B", "LOP", "FOP", "SW PRES", "RPM"];

/// Invented eight-channel engine-like preset: two slow thermal channels, two
/// volatile correlated exhaust channels, small-scale pressure channels and an
/// RPM channel whose drift switches between load steps.
pub fn engine_preset(n_steps: usize, dt: f64) -> LinearSdeSpec {
    let x0 = vec![72.0, 80.0, 340.0, 345.0, 4.5, 7.5, 2.2, 900.0];
    let drift = vec![0.002, 0.0015, 0.01, 0.01, 0.0, 0.0, 0.0, 0.0];
    // Small enough that every channel stays positive over a few thousand steps at dt = 10.
    let diag = [0.02, 0.015, 0.25, 0.27, 0.004, 0.008, 0.002, 0.3];
    let mut diffusion: Vec<Vec<f64>> =
        (0..8).map(|i| (0..8).map(|j| if i == j { diag[i] } else { 0.0 }).collect()).collect();
    // Exhaust banks share part of their noise.
    diffusion[2][3] = 0.1;
    diffusion[3][2] = 0.1;
    let rpm_drift = |rate: f64| {
        let mut a = drift.clone();
        a[7] = rate;
        a[2] = 0.01 + 0.05 * rate;
        a[3] = 0.01 + 0.05 * rate;
        Some(a)
    };
    let every = (n_steps / 4).max(1);
    let regime_schedule = [(1, 0.2), (2, -0.15), (3, 0.0)]
        .into_iter()
        .map(|(k, rate)| RegimeOverride { start_index: k * every, drift: rpm_drift(rate), diffusion: None })
        .collect();
    LinearSdeSpec {
        x0,
        drift,
        diffusion,
        n_steps,
        dt,
        regime_schedule,
        feature_names: Some(ENGINE_CHANNELS.iter().map(|s| s.to_string()).collect()),
    }
}

/// Segments of a [`regime_switch_preset`] path, as row index ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSegments {
    pub ramp: std::ops::Range<usize>,
    pub steady: Vec<std::ops::Range<usize>>,
    pub transient: std::ops::Range<usize>,
}

/// Two-channel path: a warm-up ramp over the first `warmup` rows, a quiet
/// steady segment, a fast transient ten times the ramp rate, then quiet again.
pub fn regime_switch_preset(warmup: usize, dt: f64) -> (LinearSdeSpec, RegimeSegments) {
    let ramp_rate = [0.6, 0.8]; // norm 1
    let transient_rate = [6.0, 8.0]; // norm 10
    let noise = 0.05;
    let steady1 = warmup..warmup + 3 * warmup / 2;
    let transient = steady1.end..steady1.end + warmup / 4;
    let steady2 = transient.end..transient.end + 3 * warmup / 2;
    let flat = vec![0.0, 0.0];
    let spec = LinearSdeSpec {
        x0: vec![10.0, 20.0],
        drift: ramp_rate.to_vec(),
        diffusion: vec![vec![noise, 0.0], vec![0.0, noise]],
        n_steps: steady2.end - 1,
        dt,
        regime_schedule: vec![
            RegimeOverride { start_index: steady1.start - 1, drift: Some(flat.clone()), diffusion: None },
            RegimeOverride { start_index: transient.start - 1, drift: Some(transient_rate.to_vec()), diffusion: None },
            RegimeOverride { start_index: steady2.start - 1, drift: Some(flat), diffusion: None },
        ],
        feature_names: Some(vec!["temp".into(), "load".into()]),
    };
    let segments = RegimeSegments { ramp: 0..warmup, steady: vec![steady1, steady2], transient };
    (spec, segments)
}
