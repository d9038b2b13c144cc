//! Euler–Maruyama particle ensembles and the exponential residual reweighting.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::estimate::{estimate_sde, select_window, SdeParams, WindowDecision, WindowPolicy};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::series::{MultiSeries, Sampled};

pub const DEFAULT_PARTICLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Parallel,
    Serial,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    /// `M x n`, row-major.
    particles: Vec<f64>,
    count: usize,
    base_state: Vec<f64>,
    drift_point: Vec<f64>,
    params: SdeParams,
    dt: f64,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn dim(&self) -> usize {
        self.base_state.len()
    }

    pub fn particle(&self, p: usize) -> &[f64] {
        let n = self.dim();
        &self.particles[p * n..(p + 1) * n]
    }

    pub fn particles_flat(&self) -> &[f64] {
        &self.particles
    }

    pub fn base_state(&self) -> &[f64] {
        &self.base_state
    }

    /// `X(t_i) + A dt`.
    pub fn drift_point(&self) -> &[f64] {
        &self.drift_point
    }

    pub fn params(&self) -> &SdeParams {
        &self.params
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Builds an ensemble from explicit particle states.
    pub fn from_particles(base_state: Vec<f64>, params: SdeParams, dt: f64, particles: Vec<Vec<f64>>) -> Result<Self> {
        let n = base_state.len();
        check_dim(&params, n)?;
        if particles.is_empty() {
            return Err(Error::InvalidConfig("ensemble needs at least one particle".into()));
        }
        let mut flat = Vec::with_capacity(particles.len() * n);
        for p in &particles {
            if p.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: p.len() });
            }
            flat.extend_from_slice(p);
        }
        let drift_point = drift_point(&base_state, &params, dt);
        Ok(Self { particles: flat, count: particles.len(), base_state, drift_point, params, dt })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEnsemble {
    /// `M x n`, row-major.
    pub residuals: Vec<f64>,
    pub distances: Vec<f64>,
    pub weights: Vec<f64>,
    /// Kernel width; zero when every residual vanished and weights are uniform.
    pub sigma: f64,
    pub standard: Vec<f64>,
    pub corrected: Vec<f64>,
}

/// Kernel width policy for `w_p = exp(−d_p / 2σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SigmaMode {
    /// `σ² = trace(B Bᵀ) dt / n`.
    #[default]
    DiffusionTrace,
    Fixed(f64),
    /// `σ²` is the mean squared residual norm.
    MeanDistance,
}

impl fmt::Display for SigmaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigmaMode::DiffusionTrace => f.write_str("diffusion_trace"),
            SigmaMode::Fixed(s) => write!(f, "fixed:{s:?}"),
            SigmaMode::MeanDistance => f.write_str("mean_distance"),
        }
    }
}

impl FromStr for SigmaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffusion_trace" => Ok(SigmaMode::DiffusionTrace),
            "mean_distance" => Ok(SigmaMode::MeanDistance),
            _ => {
                let value = s
                    .strip_prefix("fixed:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| v.is_finite() && *v > 0.0)
                    .ok_or_else(|| {
                        Error::InvalidConfig(format!(
                            "sigma mode must be diffusion_trace, mean_distance or fixed:<positive>, got {s:?}"
                        ))
                    })?;
                Ok(SigmaMode::Fixed(value))
            }
        }
    }
}

impl Serialize for SigmaMode {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SigmaMode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn check_dim(params: &SdeParams, n: usize) -> Result<()> {
    if params.dim() != n || params.diffusion.shape() != (n, n) {
        return Err(Error::DimensionMismatch { expected: params.dim(), got: n });
    }
    Ok(())
}

fn drift_point(base: &[f64], params: &SdeParams, dt: f64) -> Vec<f64> {
    base.iter().zip(params.drift.iter()).map(|(x, a)| x + a * dt).collect()
}

/// Draws `m` particles `X + A dt + B ΔW`. One value is drawn from `rng` to key
/// this step; particle `p` then uses sub-stream `(key, p)`, so serial and
/// parallel execution give bit-identical ensembles.
pub fn evolve_ensemble(
    base_state: &[f64],
    params: &SdeParams,
    dt: f64,
    m: usize,
    rng: &mut SeededRng,
) -> Result<Ensemble> {
    evolve_ensemble_with(base_state, params, dt, m, rng, Execution::Parallel)
}

pub fn evolve_ensemble_with(
    base_state: &[f64],
    params: &SdeParams,
    dt: f64,
    m: usize,
    rng: &mut SeededRng,
    execution: Execution,
) -> Result<Ensemble> {
    let n = base_state.len();
    check_dim(params, n)?;
    if m == 0 {
        return Err(Error::InvalidConfig("particle count must be at least 1".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    let key = rng.next_u64();
    let root = rng.clone();
    let center = drift_point(base_state, params, dt);
    // Row-major copy of B for the inner loop.
    let b: Vec<f64> = (0..n * n).map(|k| params.diffusion[(k / n, k % n)]).collect();

    let fill = |p: usize, out: &mut [f64]| {
        let mut sub = root.derive_substream(key, p as u64);
        let mut dw = vec![0.0; n];
        sub.fill_wiener(dt, &mut dw);
        for (i, x) in out.iter_mut().enumerate() {
            let row = &b[i * n..(i + 1) * n];
            *x = center[i] + row.iter().zip(&dw).map(|(bij, w)| bij * w).sum::<f64>();
        }
    };

    let mut particles = vec![0.0; m * n];
    match execution {
        Execution::Serial => particles.chunks_exact_mut(n).enumerate().for_each(|(p, out)| fill(p, out)),
        Execution::Parallel => {
            particles.par_chunks_exact_mut(n).with_min_len(64).enumerate().for_each(|(p, out)| fill(p, out))
        }
    }

    Ok(Ensemble {
        particles,
        count: m,
        base_state: base_state.to_vec(),
        drift_point: center,
        params: params.clone(),
        dt,
    })
}

/// Pairwise (cascade) sum of `f(lo..hi)` in a fixed order.
fn pairwise_sum(lo: usize, hi: usize, f: &impl Fn(usize) -> f64) -> f64 {
    if hi - lo <= 16 {
        (lo..hi).map(f).sum()
    } else {
        let mid = lo + (hi - lo) / 2;
        pairwise_sum(lo, mid, f) + pairwise_sum(mid, hi, f)
    }
}

/// Per-coordinate clamp into the ensemble's range (absorbs rounding).
fn clamp_to_hull(ensemble: &Ensemble, estimate: &mut [f64]) {
    for (j, v) in estimate.iter_mut().enumerate() {
        let (lo, hi) = (0..ensemble.len())
            .map(|p| ensemble.particle(p)[j])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
        *v = v.clamp(lo, hi);
    }
}

/// Unweighted particle mean.
pub fn standard_estimator(ensemble: &Ensemble) -> Vec<f64> {
    let n = ensemble.dim();
    let m = ensemble.len();
    let mut est: Vec<f64> = (0..n).map(|j| pairwise_sum(0, m, &|p| ensemble.particles[p * n + j]) / m as f64).collect();
    clamp_to_hull(ensemble, &mut est);
    est
}

pub fn weight_and_correct(ensemble: &Ensemble, sigma_mode: SigmaMode) -> Result<WeightedEnsemble> {
    let n = ensemble.dim();
    let m = ensemble.len();
    let center = ensemble.drift_point();
    let mut residuals = Vec::with_capacity(m * n);
    for p in 0..m {
        residuals.extend(ensemble.particle(p).iter().zip(center).map(|(x, c)| x - c));
    }
    let distances: Vec<f64> = residuals.chunks_exact(n).map(|r| r.iter().map(|v| v * v).sum()).collect();

    let sigma2 = match sigma_mode {
        SigmaMode::DiffusionTrace => {
            let b = &ensemble.params().diffusion;
            b.iter().map(|v| v * v).sum::<f64>() * ensemble.dt() / n as f64
        }
        SigmaMode::Fixed(s) => s * s,
        SigmaMode::MeanDistance => pairwise_sum(0, m, &|p| distances[p]) / m as f64,
    };

    let weights = if sigma2 > 0.0 && sigma2.is_finite() {
        let log_w: Vec<f64> = distances.iter().map(|d| -d / (2.0 * sigma2)).collect();
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shifted: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let total = pairwise_sum(0, m, &|p| shifted[p]);
        shifted.iter().map(|w| w / total).collect()
    } else {
        vec![1.0 / m as f64; m]
    };

    let mut corrected: Vec<f64> =
        (0..n).map(|j| pairwise_sum(0, m, &|p| weights[p] * ensemble.particles[p * n + j])).collect();
    clamp_to_hull(ensemble, &mut corrected);

    Ok(WeightedEnsemble {
        residuals,
        distances,
        weights,
        sigma: if sigma2 > 0.0 { sigma2.sqrt() } else { 0.0 },
        standard: standard_estimator(ensemble),
        corrected,
    })
}

/// Which estimate a multi-step recursion feeds forward and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Standard,
    #[default]
    Corrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpmOptions {
    pub particles: usize,
    pub sigma_mode: SigmaMode,
    /// Reuse the first step's parameters for every later step.
    pub freeze_params: bool,
    pub feed: Estimator,
}

impl Default for MpmOptions {
    fn default() -> Self {
        Self {
            particles: DEFAULT_PARTICLES,
            sigma_mode: SigmaMode::default(),
            freeze_params: false,
            feed: Estimator::default(),
        }
    }
}

/// Everything one forecast step produced.
#[derive(Debug, Clone)]
pub struct MpmStep {
    pub decision: WindowDecision,
    pub params: SdeParams,
    pub ensemble: Ensemble,
    pub weighted: WeightedEnsemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpmForecast {
    pub standard: Vec<f64>,
    pub corrected: Vec<f64>,
    pub window: WindowDecision,
}

impl MpmForecast {
    pub fn estimate(&self, which: Estimator) -> &[f64] {
        match which {
            Estimator::Standard => &self.standard,
            Estimator::Corrected => &self.corrected,
        }
    }
}

/// One pass of the adaptive pipeline for the state at row `end_index − 1`.
pub fn mpm_step(
    series: &MultiSeries,
    end_index: usize,
    policy: &WindowPolicy,
    dt: f64,
    options: &MpmOptions,
    rng: &mut SeededRng,
) -> Result<MpmStep> {
    let decision = select_window(series, end_index, policy, dt)?;
    let window = series.window(end_index, decision.chosen_width)?;
    let params = estimate_sde(&window, dt)?;
    let ensemble = evolve_ensemble(series.row(end_index - 1), &params, dt, options.particles, rng)?;
    let weighted = weight_and_correct(&ensemble, options.sigma_mode)?;
    Ok(MpmStep { decision, params, ensemble, weighted })
}

/// `horizon`-step forecast from the end of `series`. Each step's fed-forward
/// estimate is appended to a working copy and the whole pipeline reruns on it
/// (or, with `freeze_params`, only the ensemble step reruns).
pub fn forecast_mpm_multistep(
    series: &MultiSeries,
    policy: &WindowPolicy,
    horizon: usize,
    dt: f64,
    rng: &mut SeededRng,
    options: &MpmOptions,
) -> Result<Vec<MpmForecast>> {
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    let len = series.len();
    let warmup = policy.warmup();
    if len < warmup {
        return Err(Error::InsufficientData { needed: warmup, got: len });
    }
    let mut work = series.slice(len - warmup, len)?;
    let mut out = Vec::with_capacity(horizon);
    let mut frozen: Option<(SdeParams, WindowDecision)> = None;

    for _ in 0..horizon {
        let end = work.len();
        let (standard, corrected, window) = match &frozen {
            Some((params, decision)) => {
                let ensemble = evolve_ensemble(work.row(end - 1), params, dt, options.particles, rng)?;
                let w = weight_and_correct(&ensemble, options.sigma_mode)?;
                (w.standard, w.corrected, *decision)
            }
            None => {
                let step = mpm_step(&work, end, policy, dt, options, rng)?;
                if options.freeze_params {
                    frozen = Some((step.params.clone(), step.decision));
                }
                (step.weighted.standard, step.weighted.corrected, step.decision)
            }
        };
        let f = MpmForecast { standard, corrected, window };
        work.push_row(f.estimate(options.feed));
        out.push(f);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn params(drift: &[f64], diffusion: DMatrix<f64>) -> SdeParams {
        SdeParams::from_drift_diffusion(DVector::from_column_slice(drift), diffusion).unwrap()
    }

    #[test]
    fn zero_diffusion_is_deterministic() {
        let p = params(&[1.0, 2.0], DMatrix::zeros(2, 2));
        let e = evolve_ensemble(&[0.0, 0.0], &p, 0.5, 7, &mut SeededRng::new(1)).unwrap();
        for i in 0..7 {
            assert_eq!(e.particle(i), &[0.5, 1.0]);
        }
        assert_eq!(standard_estimator(&e), vec![0.5, 1.0]);
        let w = weight_and_correct(&e, SigmaMode::DiffusionTrace).unwrap();
        assert!(w.weights.iter().all(|x| (*x - 1.0 / 7.0).abs() < 1e-15));
        assert_eq!(w.corrected, w.standard);
    }

    #[test]
    fn dimension_mismatch() {
        let p = params(&[1.0, 2.0], DMatrix::zeros(2, 2));
        assert!(matches!(
            evolve_ensemble(&[0.0], &p, 1.0, 3, &mut SeededRng::new(1)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn standard_estimator_cases() {
        let p = params(&[0.0, 0.0], DMatrix::zeros(2, 2));
        let e = Ensemble::from_particles(vec![0.0, 0.0], p.clone(), 1.0, vec![vec![1.0, 1.0], vec![3.0, 3.0]]).unwrap();
        assert_eq!(standard_estimator(&e), vec![2.0, 2.0]);
        let single = Ensemble::from_particles(vec![0.0, 0.0], p, 1.0, vec![vec![-4.0, 9.0]]).unwrap();
        assert_eq!(standard_estimator(&single), vec![-4.0, 9.0]);
    }

    #[test]
    fn symmetric_pair_gets_equal_weights() {
        let p = params(&[0.0], DMatrix::from_element(1, 1, 1.0));
        let e = Ensemble::from_particles(vec![0.0], p, 1.0, vec![vec![-2.0], vec![2.0]]).unwrap();
        let w = weight_and_correct(&e, SigmaMode::DiffusionTrace).unwrap();
        assert_eq!(w.weights, vec![0.5, 0.5]);
        assert_eq!(w.corrected, vec![0.0]);
    }

    #[test]
    fn hand_evaluated_weights() {
        // Residual norms {0, σ√2, 2σ} with σ = 0.5 give log-weights {0, −1, −2}.
        let sigma = 0.5f64;
        let p = params(&[0.0, 0.0], DMatrix::zeros(2, 2));
        let particles = vec![vec![0.0, 0.0], vec![sigma * 2f64.sqrt(), 0.0], vec![0.0, 2.0 * sigma]];
        let e = Ensemble::from_particles(vec![0.0, 0.0], p, 1.0, particles.clone()).unwrap();
        let w = weight_and_correct(&e, SigmaMode::Fixed(sigma)).unwrap();
        let raw = [1.0, (-1.0f64).exp(), (-2.0f64).exp()];
        let total: f64 = raw.iter().sum();
        for (got, r) in w.weights.iter().zip(raw) {
            assert!((got - r / total).abs() < 1e-15);
        }
        let expected: Vec<f64> = (0..2).map(|j| (0..3).map(|k| raw[k] / total * particles[k][j]).sum()).collect();
        for (c, x) in w.corrected.iter().zip(&expected) {
            assert!((c - x).abs() < 1e-15);
        }
        assert_eq!(w.sigma, sigma);
    }

    #[test]
    fn weights_survive_huge_distances() {
        let p = params(&[0.0], DMatrix::zeros(1, 1));
        let e = Ensemble::from_particles(vec![0.0], p, 1.0, vec![vec![1e3], vec![1e3 + 1.0]]).unwrap();
        let w = weight_and_correct(&e, SigmaMode::Fixed(1e-3)).unwrap();
        assert_eq!(w.weights, vec![1.0, 0.0]);
        assert_eq!(w.corrected, vec![1e3]);
    }

    #[test]
    fn sigma_mode_parsing() {
        assert_eq!("diffusion_trace".parse::<SigmaMode>().unwrap(), SigmaMode::DiffusionTrace);
        assert_eq!("mean_distance".parse::<SigmaMode>().unwrap(), SigmaMode::MeanDistance);
        assert_eq!("fixed:0.25".parse::<SigmaMode>().unwrap(), SigmaMode::Fixed(0.25));
        assert!("fixed:-1".parse::<SigmaMode>().is_err());
        assert!("other".parse::<SigmaMode>().is_err());
        assert_eq!(SigmaMode::Fixed(0.25).to_string(), "fixed:0.25");
    }

    #[test]
    fn serial_and_parallel_agree() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let p = params(&[0.1, -0.2], b);
        let serial =
            evolve_ensemble_with(&[1.0, 2.0], &p, 0.1, 1000, &mut SeededRng::new(5), Execution::Serial).unwrap();
        let parallel =
            evolve_ensemble_with(&[1.0, 2.0], &p, 0.1, 1000, &mut SeededRng::new(5), Execution::Parallel).unwrap();
        let bits = |e: &Ensemble| e.particles_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&serial), bits(&parallel));
    }

    #[test]
    fn ensemble_moments() {
        let n = 2;
        let dt = 0.04;
        let m = 10_000;
        let p = params(&[0.0, 0.0], DMatrix::identity(n, n));
        let e = evolve_ensemble(&[0.0, 0.0], &p, dt, m, &mut SeededRng::new(2024)).unwrap();
        let mean = standard_estimator(&e);
        for v in &mean {
            assert!(v.abs() <= 4.0 * (dt / m as f64).sqrt());
        }
        for j in 0..n {
            for k in 0..n {
                let cov: f64 = (0..m).map(|q| (e.particle(q)[j] - mean[j]) * (e.particle(q)[k] - mean[k])).sum::<f64>()
                    / (m - 1) as f64;
                let target = if j == k { dt } else { 0.0 };
                assert!((cov - target).abs() <= 0.05 * dt, "cov[{j}][{k}] = {cov}");
            }
        }
    }

    fn ramp(len: usize, slopes: &[f64], dt: f64) -> MultiSeries {
        let rows: Vec<Vec<f64>> = (0..len).map(|i| slopes.iter().map(|s| s * i as f64 * dt).collect()).collect();
        MultiSeries::new((0..slopes.len()).map(|j| format!("x{j}")).collect(), &rows, dt).unwrap()
    }

    #[test]
    fn noiseless_recursion_extrapolates_linearly() {
        let dt = 0.5;
        let s = ramp(60, &[1.0, -2.0], dt);
        let policy = WindowPolicy::new(5, 10, 20, 1.0, 5).unwrap();
        let out = forecast_mpm_multistep(
            &s,
            &policy,
            5,
            dt,
            &mut SeededRng::new(3),
            &MpmOptions { particles: 50, ..Default::default() },
        )
        .unwrap();
        let last = s.row(59);
        for (j, f) in out.iter().enumerate() {
            let k = (j + 1) as f64;
            assert!((f.corrected[0] - (last[0] + k * 1.0 * dt)).abs() < 1e-9);
            assert!((f.corrected[1] - (last[1] - k * 2.0 * dt)).abs() < 1e-9);
        }
    }

    #[test]
    fn single_step_matches_pipeline() {
        let mut rng = SeededRng::new(8);
        let rows: Vec<Vec<f64>> = (0..80).map(|_| vec![rng.standard_normal(), rng.standard_normal()]).collect();
        let s = MultiSeries::new(vec!["a".into(), "b".into()], &rows, 1.0).unwrap();
        let policy = WindowPolicy::new(5, 10, 20, 0.5, 5).unwrap();
        let options = MpmOptions { particles: 200, ..Default::default() };
        let multi = forecast_mpm_multistep(&s, &policy, 1, 1.0, &mut SeededRng::new(4), &options).unwrap();
        let work = s.slice(80 - policy.warmup(), 80).unwrap();
        let step = mpm_step(&work, work.len(), &policy, 1.0, &options, &mut SeededRng::new(4)).unwrap();
        assert_eq!(multi[0].corrected, step.weighted.corrected);
        assert_eq!(multi[0].standard, step.weighted.standard);
        assert_eq!(multi[0].window, step.decision);
    }

    #[test]
    fn frozen_params_reuse_first_decision() {
        let mut rng = SeededRng::new(10);
        let rows: Vec<Vec<f64>> = (0..80).map(|_| vec![rng.standard_normal()]).collect();
        let s = MultiSeries::new(vec!["a".into()], &rows, 1.0).unwrap();
        let policy = WindowPolicy::new(5, 10, 20, 0.5, 5).unwrap();
        let options = MpmOptions { particles: 100, freeze_params: true, ..Default::default() };
        let out = forecast_mpm_multistep(&s, &policy, 4, 1.0, &mut SeededRng::new(1), &options).unwrap();
        assert!(out.iter().all(|f| f.window == out[0].window));
    }
}
