//! Run configuration: TOML file keys, defaults and flag overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpm::{Estimator, SigmaMode, WindowPolicy, DEFAULT_PARTICLES};
use crate::rng::DEFAULT_SEED;
use crate::spm::BoundsMode;

/// Every key accepted in a config file, with its default. Shown by `--help`.
pub const CONFIG_KEYS_HELP: &str = "\
Config file keys (TOML; precedence: flag > file > default):
  seed                      u64 RNG seed [42]
  dt                        sampling interval [10]
  input                     input CSV path [none]
  output                    output directory [out]
  timestamp_column          skip a leading timestamp column [false]
  window.min                smallest MPM window, >= 5 [50]
  window.base               nominal MPM window [200]
  window.max                largest MPM window [400]
  window.threshold          drift-magnitude threshold [2 x median over warm-up]
  window.lookback           lag L of the drift magnitude [window.min]
  mpm.particles             ensemble size M [1000]
  mpm.sigma_mode            diffusion_trace | mean_distance | fixed:<v> [diffusion_trace]
  mpm.horizon               steps for the mpm command [20]
  mpm.freeze_params         reuse step-1 parameters over the horizon [false]
  mpm.feed                  estimate fed forward: corrected | standard [corrected]
  spm.window                GBM estimation window in samples [200]
  spm.horizon               steps for the spm command [10]
  spm.column                feature to forecast [all]
  spm.point                 point forecast scored: sample | mean | median [sample]
  spm.bounds.kind           verbatim | quantile [verbatim]
  spm.bounds.confidence     quantile-bound confidence [0.9]
  baseline.p_max            largest AR/VAR order [5]
  baseline.d_max            largest ARI differencing order, <= 2 [2]
  baseline.var_d            VAR differencing order [1]
  baseline.train_fraction   fit prefix for ARI/VAR [0.85]
  backtest.methods          list of spm, mpm, mpm-standard, mpm-corrected, ari, var [all]
  backtest.horizon          scored steps per origin [20]
  backtest.stride           origin spacing [1]
  backtest.first_origin     first origin row [latest warm-up of the methods]
  backtest.max_origins      cap on scored origins [none]
";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dt: f64,
    pub input: Option<PathBuf>,
    pub output: PathBuf,
    pub timestamp_column: bool,
    pub window: WindowConfig,
    pub mpm: MpmConfig,
    pub spm: SpmConfig,
    pub baseline: BaselineConfig,
    pub backtest: BacktestConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            dt: 10.0,
            input: None,
            output: PathBuf::from("out"),
            timestamp_column: false,
            window: WindowConfig::default(),
            mpm: MpmConfig::default(),
            spm: SpmConfig::default(),
            baseline: BaselineConfig::default(),
            backtest: BacktestConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub min: usize,
    pub base: usize,
    pub max: usize,
    pub threshold: Option<f64>,
    pub lookback: Option<usize>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { min: 50, base: 200, max: 400, threshold: None, lookback: None }
    }
}

impl WindowConfig {
    pub fn lookback(&self) -> usize {
        self.lookback.unwrap_or(self.min)
    }

    pub fn warmup(&self) -> usize {
        self.max + self.lookback()
    }

    /// Policy with the given threshold (configured or calibrated).
    pub fn policy(&self, threshold: f64) -> Result<WindowPolicy> {
        WindowPolicy::new(self.min, self.base, self.max, threshold, self.lookback())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpmConfig {
    pub particles: usize,
    pub sigma_mode: SigmaMode,
    pub horizon: usize,
    pub freeze_params: bool,
    pub feed: Estimator,
}

impl Default for MpmConfig {
    fn default() -> Self {
        Self {
            particles: DEFAULT_PARTICLES,
            sigma_mode: SigmaMode::default(),
            horizon: 20,
            freeze_params: false,
            feed: Estimator::default(),
        }
    }
}

/// Which SPM statistic a backtest scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpmPoint {
    #[default]
    Sample,
    Mean,
    Median,
}

impl FromStr for SpmPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(Self::Sample),
            "mean" => Ok(Self::Mean),
            "median" => Ok(Self::Median),
            _ => Err(Error::InvalidConfig(format!("spm point must be sample, mean or median, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpmConfig {
    pub window: usize,
    pub horizon: usize,
    pub column: Option<String>,
    pub point: SpmPoint,
    pub bounds: BoundsMode,
}

impl Default for SpmConfig {
    fn default() -> Self {
        Self { window: 200, horizon: 10, column: None, point: SpmPoint::default(), bounds: BoundsMode::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub p_max: usize,
    pub d_max: usize,
    pub var_d: usize,
    pub train_fraction: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { p_max: 5, d_max: 2, var_d: 1, train_fraction: 0.85 }
    }
}

impl BaselineConfig {
    /// Rows `[0, train_end)` used to fit ARI/VAR on a series of length `len`.
    pub fn train_end(&self, len: usize) -> usize {
        ((self.train_fraction * len as f64).ceil() as usize).min(len)
    }
}

/// A backtest method as requested in config or on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodChoice {
    Spm,
    /// Both MPM estimators.
    Mpm,
    MpmStandard,
    MpmCorrected,
    Ari,
    Var,
}

impl FromStr for MethodChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spm" => Ok(Self::Spm),
            "mpm" => Ok(Self::Mpm),
            "mpm-standard" => Ok(Self::MpmStandard),
            "mpm-corrected" => Ok(Self::MpmCorrected),
            "ari" | "arima" => Ok(Self::Ari),
            "var" | "varima" => Ok(Self::Var),
            _ => Err(Error::InvalidConfig(format!(
                "unknown method {s:?}; expected spm, mpm, mpm-standard, mpm-corrected, ari or var"
            ))),
        }
    }
}

impl fmt::Display for MethodChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Spm => "spm",
            Self::Mpm => "mpm",
            Self::MpmStandard => "mpm-standard",
            Self::MpmCorrected => "mpm-corrected",
            Self::Ari => "ari",
            Self::Var => "var",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub methods: Vec<MethodChoice>,
    pub horizon: usize,
    pub stride: usize,
    pub first_origin: Option<usize>,
    pub max_origins: Option<usize>,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            methods: vec![MethodChoice::Spm, MethodChoice::Mpm, MethodChoice::Ari, MethodChoice::Var],
            horizon: 20,
            stride: 1,
            first_origin: None,
            max_origins: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("config: {}", e.message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Fills defaults that depend on other keys so the echo is complete.
    pub fn resolved(mut self) -> Self {
        self.window.lookback = Some(self.window.lookback());
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        // Threshold placeholder; only the shape of the policy is checked here.
        self.window.policy(self.window.threshold.unwrap_or(1.0))?;
        if self.mpm.particles == 0 {
            return bad("mpm.particles must be at least 1".into());
        }
        if self.mpm.horizon == 0 || self.spm.horizon == 0 || self.backtest.horizon == 0 {
            return bad("horizons must be at least 1".into());
        }
        if self.spm.window < 3 {
            return bad(format!("spm.window must be at least 3, got {}", self.spm.window));
        }
        if let BoundsMode::Quantile { confidence } = self.spm.bounds {
            if !(confidence > 0.0 && confidence < 1.0) {
                return bad(format!("spm.bounds.confidence must lie in (0, 1), got {confidence}"));
            }
        }
        if self.baseline.d_max > crate::baselines::MAX_DIFFERENCING
            || self.baseline.var_d > crate::baselines::MAX_DIFFERENCING
        {
            return bad("baseline differencing orders must be at most 2".into());
        }
        if !(self.baseline.train_fraction > 0.0 && self.baseline.train_fraction < 1.0) {
            return bad(format!("baseline.train_fraction must lie in (0, 1), got {}", self.baseline.train_fraction));
        }
        if self.backtest.stride == 0 {
            return bad("backtest.stride must be at least 1".into());
        }
        if self.backtest.methods.is_empty() {
            return bad("backtest.methods must not be empty".into());
        }
        if self.backtest.max_origins == Some(0) {
            return bad("backtest.max_origins must be at least 1".into());
        }
        Ok(())
    }
}
