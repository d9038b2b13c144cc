//! Python bindings. Series cross the boundary as lists of rows; structured
//! results come back as dicts, backtest reports as JSON strings.

use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sdeforecast::backtest::{self, Method};
use sdeforecast::baselines::{self, ArOrder};
use sdeforecast::config::{MethodChoice, RunConfig};
use sdeforecast::mpm::{
    default_threshold, estimate_sde as core_estimate_sde, evolve_ensemble, forecast_mpm_multistep, weight_and_correct,
    MpmOptions, SdeParams, SigmaMode,
};
use sdeforecast::spm::{self, GbmParams};
use sdeforecast::synth::{self, GbmSpec, LinearSdeSpec};
use sdeforecast::{MultiSeries, Sampled, SeededRng, UniformSeries};

create_exception!(sdeforecast, SdeForecastError, PyValueError);

fn err(e: sdeforecast::Error) -> PyErr {
    SdeForecastError::new_err(format!("{:?} error: {e}", e.class()))
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for sdeforecast::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

fn parse_config(config: Option<&str>) -> PyResult<RunConfig> {
    let c = match config {
        Some(text) => RunConfig::from_toml_str(text).py()?,
        None => RunConfig::default(),
    };
    let c = c.resolved();
    c.validate().py()?;
    Ok(c)
}

/// Multivariate series sampled every `dt`.
#[pyclass(name = "Series", module = "sdeforecast", frozen)]
struct PySeries {
    inner: MultiSeries,
}

#[pymethods]
impl PySeries {
    #[new]
    #[pyo3(signature = (rows, names, dt = 1.0))]
    fn new(rows: Vec<Vec<f64>>, names: Vec<String>, dt: f64) -> PyResult<Self> {
        Ok(Self { inner: MultiSeries::new(names, &rows, dt).py()? })
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.feature_names().to_vec()
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.rows().map(<[f64]>::to_vec).collect()
    }

    fn column(&self, name: &str) -> PyResult<Vec<f64>> {
        let j = self
            .inner
            .feature_names()
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| SdeForecastError::new_err(format!("no column named {name:?}")))?;
        Ok(self.inner.column(j).values().to_vec())
    }

    fn to_csv(&self, path: &str) -> PyResult<()> {
        sdeforecast::write_csv(&self.inner, path).py()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Series(len={}, names={:?}, dt={})", self.inner.len(), self.inner.feature_names(), self.inner.dt())
    }
}

#[pyfunction]
#[pyo3(signature = (path, dt = 1.0, timestamp_column = false))]
fn load_csv(path: &str, dt: f64, timestamp_column: bool) -> PyResult<PySeries> {
    Ok(PySeries { inner: sdeforecast::load_csv(path, dt, timestamp_column).py()? })
}

#[pyfunction]
#[pyo3(signature = (s0, a, b, n_steps, dt = 1.0, seed = 42))]
fn simulate_gbm(s0: f64, a: f64, b: f64, n_steps: usize, dt: f64, seed: u64) -> PyResult<Vec<f64>> {
    let spec = GbmSpec { s0, a, b, n_steps, dt, name: "value".into() };
    Ok(synth::simulate_gbm(&spec, &mut SeededRng::new(seed)).py()?.values().to_vec())
}

/// Linear SDE from a TOML spec (same format as `sdeforecast simulate --spec`)
/// or a named preset.
#[pyfunction]
#[pyo3(signature = (spec = None, preset = None, n_steps = 2000, dt = 10.0, seed = 42))]
fn simulate_linear(spec: Option<&str>, preset: Option<&str>, n_steps: usize, dt: f64, seed: u64) -> PyResult<PySeries> {
    let spec: LinearSdeSpec = match (spec, preset) {
        (Some(text), None) => toml::from_str(text).map_err(|e| SdeForecastError::new_err(e.to_string()))?,
        (None, Some("engine")) => synth::engine_preset(n_steps, dt),
        (None, Some("regime-switch")) => synth::regime_switch_preset(450, dt).0,
        (None, Some(p)) => return Err(SdeForecastError::new_err(format!("unknown preset {p:?}"))),
        _ => return Err(SdeForecastError::new_err("pass exactly one of spec or preset")),
    };
    Ok(PySeries { inner: synth::simulate_linear_sde(&spec, &mut SeededRng::new(seed)).py()? })
}

fn gbm_dict<'py>(py: Python<'py>, p: &GbmParams) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("a", p.a)?;
    d.set_item("b", p.b)?;
    d.set_item("window_size", p.window_size)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (values, dt = 1.0))]
fn estimate_gbm<'py>(py: Python<'py>, values: Vec<f64>, dt: f64) -> PyResult<Bound<'py, PyDict>> {
    gbm_dict(py, &spm::estimate_gbm_values(&values, dt).py()?)
}

/// Estimates on the trailing `window` samples, then forecasts `horizon` steps.
#[pyfunction]
#[pyo3(signature = (values, dt = 1.0, window = 200, horizon = 10, seed = 42))]
fn forecast_spm<'py>(
    py: Python<'py>,
    values: Vec<f64>,
    dt: f64,
    window: usize,
    horizon: usize,
    seed: u64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    if values.len() < window {
        return Err(err(sdeforecast::Error::InsufficientData { needed: window, got: values.len() }));
    }
    let tail = &values[values.len() - window..];
    let params = spm::estimate_gbm_values(tail, dt).py()?;
    let mut rng = SeededRng::new(seed).derive_substream(values.len() as u64, 0);
    let path =
        spm::forecast_spm_multistep_with(tail[window - 1], &params, horizon, dt, &mut rng, Default::default()).py()?;
    path.iter()
        .map(|f| {
            let d = gbm_dict(py, &params)?;
            for (k, v) in [
                ("from_value", f.from_value),
                ("sample", f.sample),
                ("mean", f.mean),
                ("median", f.median),
                ("mode", f.mode),
                ("lower", f.lower),
                ("upper", f.upper),
            ] {
                d.set_item(k, v)?;
            }
            Ok(d)
        })
        .collect()
}

fn matrix_rows(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Drift and diffusion `(B, C = B Bᵀ)` over the whole series.
#[pyfunction]
fn estimate_sde<'py>(py: Python<'py>, series: &PySeries) -> PyResult<Bound<'py, PyDict>> {
    let s = &series.inner;
    let p = core_estimate_sde(&s.full_view(), s.dt()).py()?;
    let d = PyDict::new(py);
    d.set_item("drift", p.drift.as_slice().to_vec())?;
    d.set_item("diffusion", matrix_rows(&p.diffusion))?;
    d.set_item("covariance", matrix_rows(&p.covariance))?;
    Ok(d)
}

fn sigma_mode(text: &str) -> PyResult<SigmaMode> {
    text.parse().map_err(|e: sdeforecast::Error| err(e))
}

/// One ensemble step from `state` under the given drift and diffusion.
#[pyfunction]
#[pyo3(signature = (state, drift, diffusion, dt = 1.0, particles = 1000, seed = 42, sigma = "diffusion_trace"))]
#[allow(clippy::too_many_arguments)]
fn evolve_and_weight<'py>(
    py: Python<'py>,
    state: Vec<f64>,
    drift: Vec<f64>,
    diffusion: Vec<Vec<f64>>,
    dt: f64,
    particles: usize,
    seed: u64,
    sigma: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let n = drift.len();
    if diffusion.len() != n || diffusion.iter().any(|r| r.len() != n) {
        return Err(SdeForecastError::new_err(format!("diffusion must be {n} x {n}")));
    }
    let b = nalgebra::DMatrix::from_fn(n, n, |i, j| diffusion[i][j]);
    let params = SdeParams::from_drift_diffusion(nalgebra::DVector::from_vec(drift), b).py()?;
    let ensemble = evolve_ensemble(&state, &params, dt, particles, &mut SeededRng::new(seed)).py()?;
    let w = weight_and_correct(&ensemble, sigma_mode(sigma)?).py()?;
    let d = PyDict::new(py);
    d.set_item("standard", w.standard)?;
    d.set_item("corrected", w.corrected)?;
    d.set_item("weights", w.weights)?;
    d.set_item("sigma", w.sigma)?;
    d.set_item("drift_point", ensemble.drift_point().to_vec())?;
    Ok(d)
}

/// Adaptive multi-step forecast from the end of `series`. `config` is TOML in
/// the CLI's config format; `seed`, `horizon` and `particles` come from it.
#[pyfunction]
#[pyo3(signature = (series, config = None))]
fn forecast_mpm<'py>(py: Python<'py>, series: &PySeries, config: Option<&str>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let c = parse_config(config)?;
    let s = &series.inner;
    let w = &c.window;
    let threshold = match w.threshold {
        Some(t) => t,
        None => default_threshold(s, w.max, w.lookback(), s.dt()).py()?,
    };
    let policy = w.policy(threshold).py()?;
    let options = MpmOptions {
        particles: c.mpm.particles,
        sigma_mode: c.mpm.sigma_mode,
        freeze_params: c.mpm.freeze_params,
        feed: c.mpm.feed,
    };
    let mut rng = SeededRng::new(c.seed).derive_substream(s.len() as u64, 0);
    let path = forecast_mpm_multistep(s, &policy, c.mpm.horizon, s.dt(), &mut rng, &options).py()?;
    path.iter()
        .map(|f| {
            let d = PyDict::new(py);
            d.set_item("standard", f.standard.clone())?;
            d.set_item("corrected", f.corrected.clone())?;
            d.set_item("window", f.window.chosen_width)?;
            d.set_item("drift_magnitude", f.window.drift_magnitude)?;
            d.set_item("regime", format!("{:?}", f.window.regime).to_lowercase())?;
            Ok(d)
        })
        .collect()
}

fn uniform(values: Vec<f64>, dt: f64) -> PyResult<UniformSeries> {
    UniformSeries::new("value", values, dt).py()
}

/// Fits ARIMA(p, d, 0); with `p`/`d` omitted the order is picked by AIC.
#[pyfunction]
#[pyo3(signature = (values, p = None, d = None, p_max = 5, d_max = 2))]
fn fit_ar<'py>(
    py: Python<'py>,
    values: Vec<f64>,
    p: Option<usize>,
    d: Option<usize>,
    p_max: usize,
    d_max: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let s = uniform(values, 1.0)?;
    let order = match (p, d) {
        (Some(p), Some(d)) => ArOrder { p, d },
        (None, None) => baselines::select_order(&s, p_max, d_max).py()?,
        _ => return Err(SdeForecastError::new_err("give both p and d, or neither")),
    };
    let m = baselines::fit_ar(&s, order).py()?;
    let out = PyDict::new(py);
    out.set_item("p", m.order.p)?;
    out.set_item("d", m.order.d)?;
    out.set_item("coefficients", m.coefficients)?;
    out.set_item("intercept", m.intercept)?;
    out.set_item("residual_variance", m.residual_variance)?;
    out.set_item("aic", m.aic)?;
    Ok(out)
}

/// Fits ARIMA(p, d, 0) on `values` and forecasts `horizon` steps past its end.
#[pyfunction]
#[pyo3(signature = (values, p, d, horizon))]
fn forecast_ar(values: Vec<f64>, p: usize, d: usize, horizon: usize) -> PyResult<Vec<f64>> {
    let s = uniform(values, 1.0)?;
    let m = baselines::fit_ar(&s, ArOrder { p, d }).py()?;
    baselines::forecast_ar(&m, &s, horizon).py()
}

/// Per-feature and vector-norm MAE/RMSE over paired rows.
#[pyfunction]
fn mae_rmse<'py>(py: Python<'py>, actual: Vec<Vec<f64>>, predicted: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
    let m = sdeforecast::metrics::mae_rmse(&actual, &predicted).py()?;
    let d = PyDict::new(py);
    d.set_item("mae", m.per_feature.iter().map(|e| e.mae).collect::<Vec<_>>())?;
    d.set_item("rmse", m.per_feature.iter().map(|e| e.rmse).collect::<Vec<_>>())?;
    d.set_item("aggregate_mae", m.aggregate_norm.mae)?;
    d.set_item("aggregate_rmse", m.aggregate_norm.rmse)?;
    Ok(d)
}

/// Rolling-origin backtest; returns one JSON report per method, identical to
/// the CLI's `report_<method>.json`.
#[pyfunction]
#[pyo3(signature = (series, methods = None, config = None))]
fn run_backtest(series: &PySeries, methods: Option<Vec<String>>, config: Option<&str>) -> PyResult<Vec<String>> {
    let mut c = parse_config(config)?;
    let s = &series.inner;
    c.dt = s.dt();
    let list: Vec<Method> = match methods {
        Some(names) => {
            let choices =
                names.iter().map(|n| n.parse::<MethodChoice>()).collect::<sdeforecast::Result<Vec<_>>>().py()?;
            Method::expand(&choices)
        }
        None => Method::expand(&c.backtest.methods),
    };
    let reports = backtest::run_backtests(s, &list, &c).py()?;
    Ok(reports.iter().map(|r| r.to_json()).collect())
}

#[pymodule]
#[pyo3(name = "sdeforecast")]
fn sdeforecast_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SdeForecastError", m.py().get_type::<SdeForecastError>())?;
    m.add_class::<PySeries>()?;
    m.add_function(wrap_pyfunction!(load_csv, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_gbm, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_linear, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_gbm, m)?)?;
    m.add_function(wrap_pyfunction!(forecast_spm, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_sde, m)?)?;
    m.add_function(wrap_pyfunction!(evolve_and_weight, m)?)?;
    m.add_function(wrap_pyfunction!(forecast_mpm, m)?)?;
    m.add_function(wrap_pyfunction!(fit_ar, m)?)?;
    m.add_function(wrap_pyfunction!(forecast_ar, m)?)?;
    m.add_function(wrap_pyfunction!(mae_rmse, m)?)?;
    m.add_function(wrap_pyfunction!(run_backtest, m)?)?;
    Ok(())
}
