//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::backtest::{compare_methods, run_backtests, write_horizon_curves, BacktestReport, Method};
use crate::config::{MethodChoice, RunConfig, SpmPoint, CONFIG_KEYS_HELP};
use crate::error::{Error, ErrorClass, Result};
use crate::mpm::{default_threshold, forecast_mpm_multistep, Estimator, MpmOptions, SigmaMode};
use crate::rng::{SeededRng, DEFAULT_SEED};
use crate::series::{load_csv, write_csv, MultiSeries, Sampled};
use crate::spm::{estimate_gbm_values, forecast_spm_multistep_with, BoundsMode};
use crate::synth::{self, GbmSpec, LinearSdeSpec};

const SIMULATE_HELP: &str = "\
Spec files are TOML.
  gbm:    s0, a, b, n_steps, dt, name (optional)
  linear: x0 = [..], drift = [..], diffusion = [[..], ..], n_steps, dt,
          feature_names (optional), and optional [[regime_schedule]] tables
          with start_index plus drift and/or diffusion overrides.
Without --spec, gbm uses s0=100 a=1e-5 b=0.005 dt=10 and linear uses --preset.
The engine preset is an invented 8-channel demo, not measured data.";

#[derive(Debug, Parser)]
#[command(name = "sdeforecast", version, about = "Stochastic time-series forecasting and backtesting", after_help = CONFIG_KEYS_HELP)]
struct Cli {
    /// Worker threads [default: all cores].
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic series with known parameters.
    #[command(after_help = SIMULATE_HELP)]
    Simulate(SimulateArgs),
    /// Forecast each channel with the single-particle GBM method.
    #[command(after_help = CONFIG_KEYS_HELP)]
    Spm(SpmCmd),
    /// Forecast the joint state with the adaptive multi-particle method.
    #[command(after_help = CONFIG_KEYS_HELP)]
    Mpm(MpmCmd),
    /// Rolling-origin backtest; writes reports, comparison and horizon curves.
    #[command(after_help = CONFIG_KEYS_HELP)]
    Backtest(BacktestCmd),
    /// Compare saved backtest reports.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Model {
    Gbm,
    Linear,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Engine,
    RegimeSwitch,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    model: Model,
    /// TOML spec file.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Built-in linear spec used when --spec is absent.
    #[arg(long, value_enum, default_value = "engine")]
    preset: Preset,
    /// Override n_steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Override dt.
    #[arg(long)]
    dt: Option<f64>,
    /// RNG seed.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV (header row required).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Sampling interval.
    #[arg(long)]
    dt: Option<f64>,
    /// RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip a leading timestamp column.
    #[arg(long)]
    timestamp_column: bool,
}

#[derive(Debug, Args)]
struct WindowArgs {
    /// Smallest MPM window (transient regime).
    #[arg(long)]
    window_min: Option<usize>,
    /// Nominal MPM window.
    #[arg(long)]
    window_base: Option<usize>,
    /// Largest MPM window (steady regime).
    #[arg(long)]
    window_max: Option<usize>,
    /// Drift-magnitude threshold; calibrated from the warm-up when omitted.
    #[arg(long)]
    threshold: Option<f64>,
    /// Lag L of the drift magnitude.
    #[arg(long)]
    lookback: Option<usize>,
}

#[derive(Debug, Args)]
struct MpmArgs {
    /// Ensemble size.
    #[arg(long)]
    particles: Option<usize>,
    /// diffusion_trace | mean_distance | fixed:<v>
    #[arg(long)]
    sigma_mode: Option<SigmaMode>,
    /// Reuse the first step's parameters over the horizon.
    #[arg(long)]
    freeze_params: bool,
    /// corrected | standard
    #[arg(long)]
    feed: Option<FeedArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FeedArg {
    Corrected,
    Standard,
}

#[derive(Debug, Args)]
struct SpmArgs {
    /// GBM estimation window in samples.
    #[arg(long)]
    window: Option<usize>,
    /// Forecast only this feature.
    #[arg(long)]
    column: Option<String>,
    /// Point forecast scored in backtests: sample | mean | median
    #[arg(long)]
    point: Option<SpmPoint>,
    /// Use log-normal quantile bounds at this confidence instead of the verbatim bounds.
    #[arg(long)]
    quantile_bounds: Option<f64>,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    /// Largest AR/VAR order.
    #[arg(long)]
    p_max: Option<usize>,
    /// Largest ARI differencing order.
    #[arg(long)]
    d_max: Option<usize>,
    /// VAR differencing order.
    #[arg(long)]
    var_d: Option<usize>,
    /// Fraction of rows the baselines are fitted on.
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Debug, Args)]
struct SpmCmd {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    spm: SpmArgs,
    /// Steps to forecast.
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Debug, Args)]
struct MpmCmd {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    mpm: MpmArgs,
    /// Steps to forecast.
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Debug, Args)]
struct BacktestCmd {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    window: WindowArgs,
    #[command(flatten)]
    mpm: MpmArgs,
    #[command(flatten)]
    spm: SpmArgs,
    #[command(flatten)]
    baseline: BaselineArgs,
    /// Comma-separated: spm, mpm, mpm-standard, mpm-corrected, ari, var.
    #[arg(long, value_delimiter = ',')]
    method: Vec<MethodChoice>,
    /// Steps to forecast.
    #[arg(long)]
    horizon: Option<usize>,
    /// Spacing between origins.
    #[arg(long)]
    stride: Option<usize>,
    /// First origin row.
    #[arg(long)]
    first_origin: Option<usize>,
    /// Cap on the number of scored origins.
    #[arg(long)]
    max_origins: Option<usize>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Report JSON files written by `backtest`.
    #[arg(long, num_args = 1.., required = true)]
    reports: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// Runs the CLI and returns the process exit code.
pub fn main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .try_init();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return 1;
        }
        // Fails only if a pool already exists in this process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Spm(a) => {
            let mut c = base_config(&a.common)?;
            apply_spm(&mut c, &a.spm);
            if let Some(h) = a.horizon {
                c.spm.horizon = h;
            }
            spm(&c.resolved())
        }
        Command::Mpm(a) => {
            let mut c = base_config(&a.common)?;
            apply_window(&mut c, &a.window);
            apply_mpm(&mut c, &a.mpm);
            if let Some(h) = a.horizon {
                c.mpm.horizon = h;
            }
            mpm(&c.resolved())
        }
        Command::Backtest(a) => {
            let mut c = base_config(&a.common)?;
            apply_window(&mut c, &a.window);
            apply_mpm(&mut c, &a.mpm);
            apply_spm(&mut c, &a.spm);
            let b = &a.baseline;
            set(&mut c.baseline.p_max, b.p_max);
            set(&mut c.baseline.d_max, b.d_max);
            set(&mut c.baseline.var_d, b.var_d);
            set(&mut c.baseline.train_fraction, b.train_fraction);
            if !a.method.is_empty() {
                c.backtest.methods = a.method;
            }
            set(&mut c.backtest.horizon, a.horizon);
            set(&mut c.backtest.stride, a.stride);
            if a.first_origin.is_some() {
                c.backtest.first_origin = a.first_origin;
            }
            if a.max_origins.is_some() {
                c.backtest.max_origins = a.max_origins;
            }
            backtest(&c.resolved())
        }
        Command::Compare(a) => compare(&a),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn base_config(a: &CommonArgs) -> Result<RunConfig> {
    let mut c = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if a.input.is_some() {
        c.input = a.input.clone();
    }
    set(&mut c.dt, a.dt);
    set(&mut c.seed, a.seed);
    set(&mut c.output, a.out.clone());
    c.timestamp_column |= a.timestamp_column;
    Ok(c)
}

fn apply_window(c: &mut RunConfig, a: &WindowArgs) {
    set(&mut c.window.min, a.window_min);
    set(&mut c.window.base, a.window_base);
    set(&mut c.window.max, a.window_max);
    if a.threshold.is_some() {
        c.window.threshold = a.threshold;
    }
    if a.lookback.is_some() {
        c.window.lookback = a.lookback;
    }
}

fn apply_mpm(c: &mut RunConfig, a: &MpmArgs) {
    set(&mut c.mpm.particles, a.particles);
    set(&mut c.mpm.sigma_mode, a.sigma_mode);
    c.mpm.freeze_params |= a.freeze_params;
    if let Some(f) = a.feed {
        c.mpm.feed = match f {
            FeedArg::Corrected => Estimator::Corrected,
            FeedArg::Standard => Estimator::Standard,
        };
    }
}

fn apply_spm(c: &mut RunConfig, a: &SpmArgs) {
    set(&mut c.spm.window, a.window);
    if a.column.is_some() {
        c.spm.column = a.column.clone();
    }
    set(&mut c.spm.point, a.point);
    if let Some(confidence) = a.quantile_bounds {
        c.spm.bounds = BoundsMode::Quantile { confidence };
    }
}

fn load_input(c: &RunConfig) -> Result<MultiSeries> {
    let path =
        c.input.as_ref().ok_or_else(|| Error::InvalidConfig("no input file; pass --input or set `input`".into()))?;
    let series = load_csv(path, c.dt, c.timestamp_column)?;
    log::info!("loaded {} rows x {} features from {}", series.len(), series.dim(), path.display());
    Ok(series)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(contents).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut rng = SeededRng::new(a.seed);
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let parse_err = |p: &Path, e: toml::de::Error| Error::InvalidConfig(format!("{}: {}", p.display(), e.message()));
    let series = match a.model {
        Model::Gbm => {
            let mut spec = match &a.spec {
                Some(p) => toml::from_str::<GbmSpec>(&read(p)?).map_err(|e| parse_err(p, e))?,
                None => GbmSpec { s0: 100.0, a: 1e-5, b: 0.005, n_steps: 2000, dt: 10.0, name: "value".into() },
            };
            set(&mut spec.n_steps, a.steps);
            set(&mut spec.dt, a.dt);
            MultiSeries::from_uniform(&synth::simulate_gbm(&spec, &mut rng)?)
        }
        Model::Linear => {
            let (steps, dt) = (a.steps.unwrap_or(2000), a.dt.unwrap_or(10.0));
            let mut spec: LinearSdeSpec = match (&a.spec, a.preset) {
                (Some(p), _) => toml::from_str(&read(p)?).map_err(|e| parse_err(p, e))?,
                (None, Preset::Engine) => {
                    log::info!("engine preset: invented demo parameters, not measured data");
                    synth::engine_preset(steps, dt)
                }
                (None, Preset::RegimeSwitch) => synth::regime_switch_preset(450, dt).0,
            };
            set(&mut spec.n_steps, a.steps);
            set(&mut spec.dt, a.dt);
            synth::simulate_linear_sde(&spec, &mut rng)?
        }
    };
    write_csv(&series, &a.out)?;
    log::info!("wrote {} rows to {}", series.len(), a.out.display());
    Ok(())
}

fn spm(c: &RunConfig) -> Result<()> {
    c.validate()?;
    let series = load_input(c)?;
    let columns: Vec<usize> = match &c.spm.column {
        Some(name) => vec![series
            .feature_names()
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| Error::InvalidConfig(format!("no column named {name:?}")))?],
        None => (0..series.dim()).collect(),
    };
    let len = series.len();
    let w = c.spm.window;
    if len < w {
        return Err(Error::InsufficientData { needed: w, got: len });
    }
    let path = c.output.join("forecast_spm.csv");
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(create(&path)?);
    let io = |e: csv::Error| Error::io(&path, std::io::Error::other(e));
    out.write_record(["step", "feature", "a", "b", "from_value", "sample", "mean", "median", "mode", "lower", "upper"])
        .map_err(io)?;
    for j in columns {
        let col = series.column(j);
        let window = &col.values()[len - w..];
        let params = estimate_gbm_values(window, c.dt)?;
        log::info!("{}: a = {:e}, b = {:e} over {} increments", col.name(), params.a, params.b, params.window_size);
        let mut rng = SeededRng::new(c.seed).derive_substream(len as u64, j as u64);
        let path = forecast_spm_multistep_with(window[w - 1], &params, c.spm.horizon, c.dt, &mut rng, c.spm.bounds)?;
        for (k, f) in path.iter().enumerate() {
            let nums = [params.a, params.b, f.from_value, f.sample, f.mean, f.median, f.mode, f.lower, f.upper];
            let mut rec = vec![(k + 1).to_string(), col.name().to_string()];
            rec.extend(nums.iter().map(|v| format!("{v:?}")));
            out.write_record(&rec).map_err(io)?;
        }
    }
    out.flush().map_err(|e| Error::io(&path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn mpm(c: &RunConfig) -> Result<()> {
    c.validate()?;
    let series = load_input(c)?;
    let w = &c.window;
    let threshold = match w.threshold {
        Some(t) => t,
        None => default_threshold(&series, w.max, w.lookback(), c.dt)?,
    };
    let policy = w.policy(threshold)?;
    let options = MpmOptions {
        particles: c.mpm.particles,
        sigma_mode: c.mpm.sigma_mode,
        freeze_params: c.mpm.freeze_params,
        feed: c.mpm.feed,
    };
    let len = series.len();
    let mut rng = SeededRng::new(c.seed).derive_substream(len as u64, 0);
    let path = forecast_mpm_multistep(&series, &policy, c.mpm.horizon, c.dt, &mut rng, &options)?;

    let file = c.output.join("forecast_mpm.csv");
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(create(&file)?);
    let io = |e: csv::Error| Error::io(&file, std::io::Error::other(e));
    out.write_record(["step", "feature", "standard", "corrected", "window", "regime", "drift_magnitude"])
        .map_err(io)?;
    for (k, f) in path.iter().enumerate() {
        let regime = serde_json::to_value(f.window.regime).expect("regime serializes");
        for (j, name) in series.feature_names().iter().enumerate() {
            out.write_record([
                (k + 1).to_string(),
                name.clone(),
                format!("{:?}", f.standard[j]),
                format!("{:?}", f.corrected[j]),
                f.window.chosen_width.to_string(),
                regime.as_str().unwrap_or_default().to_string(),
                format!("{:?}", f.window.drift_magnitude),
            ])
            .map_err(io)?;
        }
    }
    out.flush().map_err(|e| Error::io(&file, e))?;
    log::info!("threshold {threshold:e}; wrote {}", file.display());
    Ok(())
}

fn backtest(c: &RunConfig) -> Result<()> {
    c.validate()?;
    let series = load_input(c)?;
    let methods = Method::expand(&c.backtest.methods);
    let labels: Vec<&str> = methods.iter().map(|m| m.label()).collect();
    log::info!("backtesting {}", labels.join(", "));
    let reports = run_backtests(&series, &methods, c)?;
    if let Some(r) = reports.first() {
        log::info!("{} origins from row {} (stride {})", r.origins.count, r.origins.first, r.origins.stride);
    }
    for r in &reports {
        let path = c.output.join(format!("report_{}.json", r.method.slug()));
        write_file(&path, r.to_json().as_bytes())?;
        log::info!("{}: 1-step aggregate RMSE {:e}", r.method, r.aggregate_norm[0].rmse);
    }
    write_comparison(&reports, &c.output)?;
    let path = c.output.join("horizon_curves.csv");
    let mut w = create(&path)?;
    write_horizon_curves(&reports, &mut w).map_err(|e| Error::io(&path, e))?;
    log::info!("wrote reports to {}", c.output.display());
    Ok(())
}

fn write_comparison(reports: &[BacktestReport], dir: &Path) -> Result<()> {
    let table = compare_methods(reports)?;
    let path = dir.join("comparison.csv");
    let mut w = create(&path)?;
    table.write_csv(&mut w).map_err(|e| Error::io(&path, e))?;
    write_file(&dir.join("comparison.json"), table.to_json().as_bytes())
}

fn compare(a: &CompareArgs) -> Result<()> {
    let reports = a
        .reports
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            BacktestReport::from_json(&text).map_err(|e| Error::InvalidSeries(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    write_comparison(&reports, &a.out)?;
    log::info!("wrote comparison of {} reports to {}", reports.len(), a.out.display());
    Ok(())
}
