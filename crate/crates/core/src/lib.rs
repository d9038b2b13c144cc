//! Stochastic time-series forecasting.
//!
//! * [`spm`]: sliding-window geometric Brownian motion for scalar channels.
//! * [`mpm`]: multivariate SDE with an adaptive estimation window, an
//!   Euler–Maruyama particle ensemble and residual-based reweighting.
//! * [`baselines`]: ARI and VAR fitted by least squares.
//! * [`backtest`]: rolling-origin scoring and method comparison.
//! * [`synth`]: generators with known parameters.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod baselines;
pub mod cli;
pub mod config;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod mpm;
pub mod rng;
pub mod series;
pub mod spm;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
pub use rng::SeededRng;
pub use series::{load_csv, read_csv, write_csv, MultiSeries, Sampled, UniformSeries, WindowView};
