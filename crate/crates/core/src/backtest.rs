//! Rolling-origin evaluation and method comparison.
//!
//! Origin `t` forecasts from rows `[0, t)` only; step `j` (1-based) is scored
//! against row `t − 1 + j`. Origins whose horizon would pass the end of the
//! series are dropped.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{self, ArModel, ArOrder, VarModel, BASELINE_NOTE};
use crate::config::{MethodChoice, RunConfig, SpmPoint};
use crate::error::{Error, Result};
use crate::metrics::ErrorPair;
use crate::mpm::{default_threshold, forecast_mpm_multistep, Estimator, MpmOptions, WindowPolicy};
use crate::rng::SeededRng;
use crate::series::{MultiSeries, Sampled};
use crate::spm::{estimate_gbm_values, forecast_spm_multistep_with};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "SPM")]
    Spm,
    #[serde(rename = "MPM-standard")]
    MpmStandard,
    #[serde(rename = "MPM-corrected")]
    MpmCorrected,
    #[serde(rename = "ARI")]
    Ari,
    #[serde(rename = "VAR")]
    Var,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Spm, Method::MpmStandard, Method::MpmCorrected, Method::Ari, Method::Var];

    pub fn label(self) -> &'static str {
        match self {
            Method::Spm => "SPM",
            Method::MpmStandard => "MPM-standard",
            Method::MpmCorrected => "MPM-corrected",
            Method::Ari => "ARI",
            Method::Var => "VAR",
        }
    }

    /// Lower-case label for file names.
    pub fn slug(self) -> String {
        self.label().to_ascii_lowercase()
    }

    pub fn choice(self) -> MethodChoice {
        match self {
            Method::Spm => MethodChoice::Spm,
            Method::MpmStandard => MethodChoice::MpmStandard,
            Method::MpmCorrected => MethodChoice::MpmCorrected,
            Method::Ari => MethodChoice::Ari,
            Method::Var => MethodChoice::Var,
        }
    }

    pub fn expand(choices: &[MethodChoice]) -> Vec<Method> {
        let mut out: Vec<Method> = choices
            .iter()
            .flat_map(|c| match c {
                MethodChoice::Spm => vec![Method::Spm],
                MethodChoice::Mpm => vec![Method::MpmStandard, Method::MpmCorrected],
                MethodChoice::MpmStandard => vec![Method::MpmStandard],
                MethodChoice::MpmCorrected => vec![Method::MpmCorrected],
                MethodChoice::Ari => vec![Method::Ari],
                MethodChoice::Var => vec![Method::Var],
            })
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method label {s:?}")))
    }
}

/// The scored origins: `first, first + stride, …`, `count` of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OriginPlan {
    pub first: usize,
    pub stride: usize,
    pub count: usize,
    pub horizon: usize,
}

impl OriginPlan {
    pub fn origins(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.count).map(move |i| self.first + i * self.stride)
    }
}

/// Earliest origin `method` can forecast from under `config`.
pub fn min_origin(method: Method, config: &RunConfig, len: usize) -> usize {
    match method {
        Method::Spm => config.spm.window,
        Method::MpmStandard | Method::MpmCorrected => config.window.warmup(),
        Method::Ari | Method::Var => config.baseline.train_end(len),
    }
}

fn plan_for(methods: &[Method], config: &RunConfig, len: usize) -> Result<OriginPlan> {
    let bt = &config.backtest;
    let needed = methods.iter().map(|m| min_origin(*m, config, len)).max().unwrap_or(0);
    let first = bt.first_origin.unwrap_or(needed);
    if first < needed {
        return Err(Error::InvalidConfig(format!(
            "backtest.first_origin {first} is earlier than the {needed} rows the methods need"
        )));
    }
    // Origin t scores rows t .. t + horizon - 1.
    if first + bt.horizon > len {
        return Err(Error::InsufficientData { needed: first + bt.horizon, got: len });
    }
    let mut count = (len - bt.horizon - first) / bt.stride + 1;
    if let Some(cap) = bt.max_origins {
        count = count.min(cap);
    }
    Ok(OriginPlan { first, stride: bt.stride, count, horizon: bt.horizon })
}

/// Everything fitted once before origins are scored.
#[derive(Debug, Clone)]
pub struct Backtester<'a> {
    series: &'a MultiSeries,
    config: RunConfig,
    plan: OriginPlan,
    methods: Vec<Method>,
    policy: Option<WindowPolicy>,
    ari: Option<Vec<ArModel>>,
    var: Option<VarModel>,
    columns: Vec<Vec<f64>>,
}

impl<'a> Backtester<'a> {
    /// Prepares `methods` on a shared origin plan. MPM thresholds are
    /// calibrated on the warm-up rows and ARI/VAR are fitted on the training
    /// prefix, both of which end at or before the first origin.
    pub fn new(series: &'a MultiSeries, config: &RunConfig, methods: &[Method]) -> Result<Self> {
        let mut config = config.clone().resolved();
        config.validate()?;
        if methods.is_empty() {
            return Err(Error::InvalidConfig("no methods selected".into()));
        }
        let mut methods = methods.to_vec();
        methods.sort();
        methods.dedup();
        let len = series.len();
        let plan = plan_for(&methods, &config, len)?;
        // The echo pins what was derived so it alone reproduces the run.
        config.backtest.first_origin = Some(plan.first);
        config.backtest.methods = methods.iter().map(|m| m.choice()).collect();
        let dt = config.dt;

        let policy = if methods.iter().any(|m| matches!(m, Method::MpmStandard | Method::MpmCorrected)) {
            let w = &config.window;
            let threshold = match w.threshold {
                Some(t) => t,
                None => default_threshold(series, w.max, w.lookback(), dt)?,
            };
            Some(w.policy(threshold)?)
        } else {
            None
        };

        let train_end = config.baseline.train_end(len);
        let b = &config.baseline;
        let ari = if methods.contains(&Method::Ari) {
            let models = (0..series.dim())
                .map(|j| {
                    let train = series.column(j).prefix(train_end)?;
                    let order: ArOrder = baselines::select_order(&train, b.p_max, b.d_max)?;
                    baselines::fit_ar(&train, order)
                })
                .collect::<Result<Vec<_>>>()?;
            Some(models)
        } else {
            None
        };
        let var = if methods.contains(&Method::Var) {
            let train = series.slice(0, train_end)?;
            let p = baselines::select_var_order(&train, b.p_max, b.var_d)?;
            Some(baselines::fit_var(&train, p, b.var_d)?)
        } else {
            None
        };

        let columns = (0..series.dim()).map(|j| series.column(j).values().to_vec()).collect();
        Ok(Self { series, config, plan, methods, policy, ari, var, columns })
    }

    pub fn plan(&self) -> OriginPlan {
        self.plan
    }

    pub fn methods(&self) -> &[Method] {
        &self.methods
    }

    pub fn policy(&self) -> Option<&WindowPolicy> {
        self.policy.as_ref()
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    fn origin_rng(&self, origin: usize, feature: usize) -> SeededRng {
        SeededRng::new(self.config.seed).derive_substream(origin as u64, feature as u64)
    }

    /// `horizon` predicted rows made from rows `[0, origin)`.
    pub fn forecast(&self, method: Method, origin: usize) -> Result<Vec<Vec<f64>>> {
        if !self.methods.contains(&method) {
            return Err(Error::InvalidConfig(format!("{method} was not prepared")));
        }
        let k = self.plan.horizon;
        let dt = self.config.dt;
        let n = self.series.dim();
        if origin < min_origin(method, &self.config, self.series.len()) || origin > self.series.len() {
            return Err(Error::InsufficientData {
                needed: min_origin(method, &self.config, self.series.len()),
                got: origin,
            });
        }
        match method {
            Method::Spm => {
                let w = self.config.spm.window;
                let mut rows = vec![vec![0.0; n]; k];
                for (j, col) in self.columns.iter().enumerate() {
                    let window = &col[origin - w..origin];
                    let params = estimate_gbm_values(window, dt)?;
                    let mut rng = self.origin_rng(origin, j);
                    let path =
                        forecast_spm_multistep_with(window[w - 1], &params, k, dt, &mut rng, self.config.spm.bounds)?;
                    for (row, f) in rows.iter_mut().zip(path) {
                        row[j] = match self.config.spm.point {
                            SpmPoint::Sample => f.sample,
                            SpmPoint::Mean => f.mean,
                            SpmPoint::Median => f.median,
                        };
                    }
                }
                Ok(rows)
            }
            Method::MpmStandard | Method::MpmCorrected => {
                let policy = self.policy.as_ref().expect("prepared");
                let history = self.series.slice(origin - policy.warmup(), origin)?;
                let feed = if method == Method::MpmStandard { Estimator::Standard } else { Estimator::Corrected };
                let options = MpmOptions {
                    particles: self.config.mpm.particles,
                    sigma_mode: self.config.mpm.sigma_mode,
                    freeze_params: self.config.mpm.freeze_params,
                    feed,
                };
                let mut rng = self.origin_rng(origin, 0);
                let path = forecast_mpm_multistep(&history, policy, k, dt, &mut rng, &options)?;
                Ok(path.into_iter().map(|f| f.estimate(feed).to_vec()).collect())
            }
            Method::Ari => {
                let models = self.ari.as_ref().expect("prepared");
                let mut rows = vec![vec![0.0; n]; k];
                for (j, model) in models.iter().enumerate() {
                    let history = crate::series::UniformSeries::new("h", self.columns[j][..origin].to_vec(), dt)?;
                    for (row, v) in rows.iter_mut().zip(baselines::forecast_ar(model, &history, k)?) {
                        row[j] = v;
                    }
                }
                Ok(rows)
            }
            Method::Var => {
                let model = self.var.as_ref().expect("prepared");
                baselines::forecast_var(model, &self.series.slice(0, origin)?, k)
            }
        }
    }

    /// Signed errors `predicted − actual`, indexed `[origin][step][feature]`.
    pub fn errors(&self, method: Method) -> Result<Vec<Vec<Vec<f64>>>> {
        let origins: Vec<usize> = self.plan.origins().collect();
        origins
            .par_iter()
            .map(|&t| {
                let predicted = self.forecast(method, t)?;
                Ok(predicted
                    .iter()
                    .enumerate()
                    .map(|(j, p)| {
                        let actual = self.series.row(t + j);
                        p.iter().zip(actual).map(|(y, x)| y - x).collect()
                    })
                    .collect())
            })
            .collect()
    }

    pub fn run(&self, method: Method) -> Result<BacktestReport> {
        let errors = self.errors(method)?;
        let k = self.plan.horizon;
        let n = self.series.dim();
        let names = self.series.feature_names();
        let pair = |f: &dyn Fn(&Vec<Vec<f64>>) -> f64| {
            ErrorPair::from_magnitudes(errors.iter().map(f)).expect("at least one origin")
        };

        let per_feature = (0..n)
            .map(|i| FeatureCurve { feature: names[i].clone(), errors: (0..k).map(|j| pair(&|e| e[j][i])).collect() })
            .collect::<Vec<_>>();
        let aggregate_norm = (0..k).map(|j| pair(&|e| e[j].iter().map(|v| v * v).sum::<f64>().sqrt())).collect();
        let feature_mean = (0..k)
            .map(|j| {
                let (mae, rmse) =
                    per_feature.iter().fold((0.0, 0.0), |(m, r), c| (m + c.errors[j].mae, r + c.errors[j].rmse));
                ErrorPair { mae: mae / n as f64, rmse: (rmse / n as f64).max(mae / n as f64), count: self.plan.count }
            })
            .collect();

        let config_echo = serde_json::to_value(&self.config).expect("config serializes");
        Ok(BacktestReport {
            method,
            features: names.to_vec(),
            horizon: k,
            origins: self.plan,
            per_feature,
            aggregate_norm,
            feature_mean,
            window_threshold: self.policy.map(|p| p.threshold),
            note: matches!(method, Method::Ari | Method::Var).then(|| BASELINE_NOTE.to_string()),
            seed: self.config.seed,
            series_digest: series_digest(self.series),
            config_echo,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCurve {
    pub feature: String,
    /// Index `j` holds horizon step `j + 1`.
    pub errors: Vec<ErrorPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub method: Method,
    pub features: Vec<String>,
    pub horizon: usize,
    pub origins: OriginPlan,
    /// Scalar errors per feature.
    pub per_feature: Vec<FeatureCurve>,
    /// Errors of the whole state vector, `‖X̂ − X‖₂`.
    pub aggregate_norm: Vec<ErrorPair>,
    /// Per-feature MAE and RMSE averaged over features.
    pub feature_mean: Vec<ErrorPair>,
    /// Drift-magnitude threshold in effect for MPM runs.
    pub window_threshold: Option<f64>,
    pub note: Option<String>,
    pub seed: u64,
    /// SHA-256 over names, dt and values of the scored series.
    pub series_digest: String,
    pub config_echo: serde_json::Value,
}

impl BacktestReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("report: {e}")))
    }

    /// Every `ErrorPair` with the row label it belongs to.
    pub fn cells(&self) -> impl Iterator<Item = (&str, usize, &ErrorPair)> {
        self.per_feature
            .iter()
            .flat_map(|c| c.errors.iter().enumerate().map(move |(j, e)| (c.feature.as_str(), j + 1, e)))
            .chain(self.aggregate_norm.iter().enumerate().map(|(j, e)| (AGGREGATE_ROW, j + 1, e)))
            .chain(self.feature_mean.iter().enumerate().map(|(j, e)| (FEATURE_MEAN_ROW, j + 1, e)))
    }
}

pub const AGGREGATE_ROW: &str = "aggregate_norm";
pub const FEATURE_MEAN_ROW: &str = "feature_mean";

pub fn series_digest(series: &MultiSeries) -> String {
    let mut h = Sha256::new();
    for name in series.feature_names() {
        h.update(name.as_bytes());
        h.update([0u8]);
    }
    h.update(series.dt().to_le_bytes());
    for v in series.as_flat() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Backtest of one method on its own origin plan.
pub fn run_backtest(series: &MultiSeries, method: Method, config: &RunConfig) -> Result<BacktestReport> {
    Backtester::new(series, config, &[method])?.run(method)
}

/// Backtests of several methods sharing one origin plan.
pub fn run_backtests(series: &MultiSeries, methods: &[Method], config: &RunConfig) -> Result<Vec<BacktestReport>> {
    let bt = Backtester::new(series, config, methods)?;
    bt.methods().iter().map(|m| bt.run(*m)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mae,
    Rmse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub feature: String,
    pub horizon: usize,
    pub metric: Metric,
    /// One value per entry of [`ComparisonTable::methods`].
    pub values: Vec<f64>,
    /// Lowest-error methods; more than one entry is a tie.
    pub best: Vec<Method>,
}

impl ComparisonRow {
    pub fn is_tie(&self) -> bool {
        self.best.len() > 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub methods: Vec<Method>,
    pub rows: Vec<ComparisonRow>,
}

/// Feature × horizon × metric table over reports that share one protocol.
pub fn compare_methods(reports: &[BacktestReport]) -> Result<ComparisonTable> {
    let first = reports.first().ok_or_else(|| Error::InvalidConfig("compare needs at least one report".into()))?;
    for r in &reports[1..] {
        let mismatch = if r.series_digest != first.series_digest {
            Some("series")
        } else if r.features != first.features {
            Some("features")
        } else if r.horizon != first.horizon {
            Some("horizon")
        } else if r.origins != first.origins {
            Some("origins")
        } else {
            None
        };
        if let Some(what) = mismatch {
            return Err(Error::ProtocolMismatch(format!("{} and {} differ in {what}", first.method, r.method)));
        }
    }
    let methods: Vec<Method> = reports.iter().map(|r| r.method).collect();
    let cells: Vec<Vec<(&str, usize, &ErrorPair)>> = reports.iter().map(|r| r.cells().collect()).collect();
    let mut rows = Vec::new();
    for (c, &(feature, horizon, _)) in cells[0].iter().enumerate() {
        for metric in [Metric::Mae, Metric::Rmse] {
            let values: Vec<f64> = cells
                .iter()
                .map(|rc| match metric {
                    Metric::Mae => rc[c].2.mae,
                    Metric::Rmse => rc[c].2.rmse,
                })
                .collect();
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let best = methods.iter().zip(&values).filter(|(_, v)| **v == min).map(|(m, _)| *m).collect();
            rows.push(ComparisonRow { feature: feature.to_string(), horizon, metric, values, best });
        }
    }
    Ok(ComparisonTable { methods, rows })
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

fn csv_err(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

impl ComparisonTable {
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv_writer(out);
        let mut header = vec!["feature".to_string(), "horizon".into(), "metric".into()];
        header.extend(self.methods.iter().map(|m| m.label().to_string()));
        header.push("best".into());
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![
                r.feature.clone(),
                r.horizon.to_string(),
                match r.metric {
                    Metric::Mae => "mae".into(),
                    Metric::Rmse => "rmse".into(),
                },
            ];
            rec.extend(r.values.iter().map(|v| format!("{v:?}")));
            let best: Vec<&str> = r.best.iter().map(|m| m.label()).collect();
            rec.push(if r.is_tie() { format!("tie:{}", best.join("|")) } else { best.join("") });
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("table serializes");
        s.push('\n');
        s
    }
}

/// Long-format curves: `method,feature,horizon,mae,rmse`.
pub fn write_horizon_curves<W: Write>(reports: &[BacktestReport], out: W) -> std::io::Result<()> {
    let mut w = csv_writer(out);
    w.write_record(["method", "feature", "horizon", "mae", "rmse"]).map_err(csv_err)?;
    for r in reports {
        for (feature, h, e) in r.cells() {
            w.write_record([
                r.method.label(),
                feature,
                &h.to_string(),
                &format!("{:?}", e.mae),
                &format!("{:?}", e.rmse),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()
}
