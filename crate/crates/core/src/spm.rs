//! Single-particle method: sliding-window geometric Brownian motion.
//!
//! The drift `a` is the mean relative increment per unit time over the window
//! and `b` the scaled standard deviation of those increments. Forecasts use the
//! exact log-normal transition together with its mean, median and mode.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::series::{UniformSeries, WindowView};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    /// Relative drift, 1/time.
    pub a: f64,
    /// Diffusion, 1/sqrt(time).
    pub b: f64,
    /// Number of increments N the estimate used.
    pub window_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpmForecast {
    pub from_value: f64,
    pub sample: f64,
    pub mean: f64,
    pub median: f64,
    pub mode: f64,
    pub upper: f64,
    pub lower: f64,
}

/// How `upper`/`lower` are computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundsMode {
    /// `mean ± S (exp(b² dt) − 1) exp(2 a dt)`.
    #[default]
    Verbatim,
    /// Two-sided log-normal quantiles at the given confidence level.
    Quantile { confidence: f64 },
}

/// Estimates `(a, b)` from a window of N+1 samples (N increments, N ≥ 2).
/// Increments starting from a zero sample contribute `a_i = 0`.
pub fn estimate_gbm(window: &WindowView<'_, UniformSeries>, dt: f64) -> Result<GbmParams> {
    estimate_gbm_values(window.values(), dt)
}

pub fn estimate_gbm_values(values: &[f64], dt: f64) -> Result<GbmParams> {
    let n = values.len().saturating_sub(1);
    if n < 2 {
        return Err(Error::WindowTooSmall { got: values.len(), min: 3 });
    }
    let rates: Vec<f64> =
        values.windows(2).map(|w| if w[0] != 0.0 { (w[1] - w[0]) / (w[0] * dt) } else { 0.0 }).collect();
    let a = rates.iter().sum::<f64>() / n as f64;
    let ss: f64 = rates.iter().map(|r| (r - a) * (r - a)).sum();
    let b = (ss * dt / (n - 1) as f64).sqrt();
    Ok(GbmParams { a, b, window_size: n })
}

/// One-step forecast from `s_now` with the verbatim bounds.
pub fn forecast_spm(s_now: f64, params: &GbmParams, dt: f64, rng: &mut SeededRng) -> Result<SpmForecast> {
    forecast_spm_with(s_now, params, dt, rng, BoundsMode::Verbatim)
}

pub fn forecast_spm_with(
    s_now: f64,
    params: &GbmParams,
    dt: f64,
    rng: &mut SeededRng,
    bounds: BoundsMode,
) -> Result<SpmForecast> {
    if !(s_now > 0.0) {
        return Err(Error::NonPositiveState(s_now));
    }
    let GbmParams { a, b, .. } = *params;
    let b2 = b * b;
    let z = rng.standard_normal();
    let sample = s_now * ((a - 0.5 * b2) * dt + b * dt.sqrt() * z).exp();
    let mean = s_now * (a * dt).exp();
    let median = s_now * ((a - 0.5 * b2) * dt).exp();
    let mode = s_now * ((a - 1.5 * b2) * dt).exp();
    let (upper, lower) = match bounds {
        BoundsMode::Verbatim => {
            let spread = s_now * (b2 * dt).exp_m1() * (2.0 * a * dt).exp();
            (mean + spread, mean - spread)
        }
        BoundsMode::Quantile { confidence } => {
            let zq = two_sided_z(confidence)?;
            let half = zq * b * dt.sqrt();
            (median * half.exp(), median * (-half).exp())
        }
    };
    // b = 0 collapses the transition; keep every statistic bit-identical.
    let sample = if b == 0.0 { mean } else { sample };
    Ok(SpmForecast { from_value: s_now, sample, mean, median, mode, upper, lower })
}

fn two_sided_z(confidence: f64) -> Result<f64> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidConfig(format!("confidence must lie in (0, 1), got {confidence}")));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(0.5 * (1.0 + confidence)))
}

/// Recursive `horizon`-step forecast from the last observation. Parameters stay
/// frozen; each step starts from the previous step's sample.
pub fn forecast_spm_multistep(
    series: &UniformSeries,
    params: &GbmParams,
    horizon: usize,
    dt: f64,
    rng: &mut SeededRng,
) -> Result<Vec<SpmForecast>> {
    forecast_spm_multistep_with(series.last(), params, horizon, dt, rng, BoundsMode::Verbatim)
}

pub fn forecast_spm_multistep_with(
    s0: f64,
    params: &GbmParams,
    horizon: usize,
    dt: f64,
    rng: &mut SeededRng,
    bounds: BoundsMode,
) -> Result<Vec<SpmForecast>> {
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(horizon);
    let mut s = s0;
    for _ in 0..horizon {
        let f = forecast_spm_with(s, params, dt, rng, bounds)?;
        s = f.sample;
        out.push(f);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use proptest::prelude::*;

    fn params(a: f64, b: f64) -> GbmParams {
        GbmParams { a, b, window_size: 10 }
    }

    #[test]
    fn constant_and_geometric_windows() {
        let p = estimate_gbm_values(&[5.0; 5], 1.0).unwrap();
        assert_eq!((p.a, p.b, p.window_size), (0.0, 0.0, 4));

        let p = estimate_gbm_values(&[1.0, 1.1, 1.21], 1.0).unwrap();
        assert!((p.a - 0.1).abs() < 1e-12);
        assert!(p.b < 1e-12);

        assert!(matches!(estimate_gbm_values(&[1.0, 2.0], 1.0), Err(Error::WindowTooSmall { .. })));
    }

    #[test]
    fn zero_samples_contribute_zero_rate() {
        // Rates: 0 (from the zero), then (2-1)/1 = 1.
        let p = estimate_gbm_values(&[0.0, 1.0, 2.0], 1.0).unwrap();
        assert!((p.a - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_forecasts_collapse() {
        let mut rng = SeededRng::new(1);
        let f = forecast_spm(100.0, &params(0.0, 0.0), 10.0, &mut rng).unwrap();
        for v in [f.sample, f.mean, f.median, f.mode, f.upper, f.lower] {
            assert_eq!(v, 100.0);
        }
        let f = forecast_spm(1.0, &params(0.1, 0.0), 1.0, &mut rng).unwrap();
        assert!((f.mean - 1.1051709180756477).abs() < 1e-15);
        assert_eq!(f.upper, f.mean);
        assert_eq!(f.lower, f.mean);
        assert_eq!(f.sample, f.mean);
        assert!(matches!(forecast_spm(0.0, &params(0.1, 0.1), 1.0, &mut rng), Err(Error::NonPositiveState(_))));
    }

    const SCALE_DIGITS: u32 = 40;

    /// exp(num/den) in fixed point with 10^-40 resolution, by Taylor series.
    fn exp_fixed(num: i64, den: i64) -> BigInt {
        let scale = BigInt::from(10).pow(SCALE_DIGITS);
        let mut term = scale.clone();
        let mut sum = scale.clone();
        for k in 1..200i64 {
            term = term * num / (den * k);
            if term == BigInt::from(0) {
                break;
            }
            sum += &term;
        }
        sum
    }

    fn to_f64(x: &BigInt) -> f64 {
        // Keep 18 digits, which is more than f64 holds.
        let shifted: BigInt = x / BigInt::from(10).pow(SCALE_DIGITS - 18);
        shifted.to_string().parse::<f64>().unwrap() * 1e-18
    }

    #[test]
    fn statistics_match_high_precision_oracle() {
        // s_now = 1, a = 0, b = 0.1, dt = 1.
        let mut rng = SeededRng::new(3);
        let f = forecast_spm(1.0, &params(0.0, 0.1), 1.0, &mut rng).unwrap();
        let median = to_f64(&exp_fixed(-5, 1000));
        let mode = to_f64(&exp_fixed(-15, 1000));
        let spread = to_f64(&(exp_fixed(1, 100) - BigInt::from(10).pow(SCALE_DIGITS)));
        assert_eq!(f.mean, 1.0);
        assert!((f.median - median).abs() < 1e-15, "{} vs {median}", f.median);
        assert!((f.mode - mode).abs() < 1e-15);
        assert!((f.upper - f.mean - spread).abs() < 1e-15);
        assert!((f.mean - f.lower - spread).abs() < 1e-15);
    }

    #[test]
    fn multistep_deterministic_recursion() {
        let s = UniformSeries::new("x", vec![1.0], 1.0).unwrap();
        let mut rng = SeededRng::new(0);
        let out = forecast_spm_multistep(&s, &params(0.1, 0.0), 3, 1.0, &mut rng).unwrap();
        let expected = [0.1f64.exp(), 0.2f64.exp(), 0.3f64.exp()];
        for (f, e) in out.iter().zip(expected) {
            assert!((f.sample - e).abs() < 1e-14);
        }
    }

    #[test]
    fn one_step_multistep_matches_single_call() {
        let s = UniformSeries::new("x", vec![3.0, 4.0], 1.0).unwrap();
        let p = params(0.01, 0.3);
        let multi = forecast_spm_multistep(&s, &p, 1, 2.0, &mut SeededRng::new(11)).unwrap();
        let single = forecast_spm(4.0, &p, 2.0, &mut SeededRng::new(11)).unwrap();
        assert_eq!(multi, vec![single]);
    }

    #[test]
    fn quantile_bounds() {
        let mut rng = SeededRng::new(0);
        let p = params(0.0, 0.2);
        let f = forecast_spm_with(10.0, &p, 1.0, &mut rng, BoundsMode::Quantile { confidence: 0.9 }).unwrap();
        let z = 1.6448536269514722;
        assert!((f.upper - f.median * (z * 0.2f64).exp()).abs() < 1e-9);
        assert!((f.lower - f.median * (-z * 0.2f64).exp()).abs() < 1e-9);
        assert!(forecast_spm_with(10.0, &p, 1.0, &mut rng, BoundsMode::Quantile { confidence: 1.5 }).is_err());
    }

    #[test]
    fn transition_moments() {
        let p = params(0.02, 0.3);
        let mut rng = SeededRng::new(99);
        let mut samples: Vec<f64> =
            (0..100_000).map(|_| forecast_spm(50.0, &p, 1.0, &mut rng).unwrap().sample).collect();
        let f = forecast_spm(50.0, &p, 1.0, &mut rng).unwrap();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        samples.sort_by(f64::total_cmp);
        let median = samples[samples.len() / 2];
        assert!((mean / f.mean - 1.0).abs() < 0.01, "{mean} vs {}", f.mean);
        assert!((median / f.median - 1.0).abs() < 0.01);
    }

    proptest! {
        #[test]
        fn exact_geometric_growth_recovered(c in -0.5f64..0.5, dt in 0.01f64..2.0, s0 in 0.1f64..100.0, len in 3usize..60) {
            prop_assume!((1.0 + c * dt) > 0.05);
            let values: Vec<f64> = (0..len).map(|t| s0 * (1.0 + c * dt).powi(t as i32)).collect();
            let p = estimate_gbm_values(&values, dt).unwrap();
            prop_assert!((p.a - c).abs() <= 1e-12 * c.abs().max(1.0));
            prop_assert!(p.b <= 1e-6);
        }

        #[test]
        fn scale_equivariance(raw in prop::collection::vec(0.5f64..2.0, 3..40), lambda in 0.01f64..100.0, seed in any::<u64>()) {
            let scaled: Vec<f64> = raw.iter().map(|v| v * lambda).collect();
            let p = estimate_gbm_values(&raw, 1.0).unwrap();
            let q = estimate_gbm_values(&scaled, 1.0).unwrap();
            prop_assert!((p.a - q.a).abs() <= 1e-10 * p.a.abs().max(1.0));
            prop_assert!((p.b - q.b).abs() <= 1e-10 * p.b.max(1.0));
            let s = *raw.last().unwrap();
            let f = forecast_spm(s, &p, 1.0, &mut SeededRng::new(seed)).unwrap();
            let g = forecast_spm(s * lambda, &p, 1.0, &mut SeededRng::new(seed)).unwrap();
            for (x, y) in [(f.sample, g.sample), (f.mean, g.mean), (f.median, g.median), (f.mode, g.mode), (f.upper, g.upper), (f.lower, g.lower)] {
                prop_assert!((x * lambda - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }

        #[test]
        fn statistic_ordering(s in 0.01f64..1e4, a in -1.0f64..1.0, b in 1e-4f64..2.0, dt in 0.01f64..10.0) {
            let f = forecast_spm(s, &params(a, b), dt, &mut SeededRng::new(0)).unwrap();
            prop_assert!(f.mean >= f.median && f.median >= f.mode);
            prop_assert!(f.upper >= f.mean && f.mean >= f.lower);
        }
    }
}
