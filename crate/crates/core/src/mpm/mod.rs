//! Adaptive multi-particle method.

pub mod estimate;
pub mod simulate;

pub use estimate::{
    default_threshold, drift_magnitude, estimate_diffusion, estimate_drift, estimate_sde, select_window, DriftSamples,
    Regime, SdeParams, WindowDecision, WindowPolicy, MIN_MPM_WINDOW,
};
pub use simulate::{
    evolve_ensemble, evolve_ensemble_with, forecast_mpm_multistep, mpm_step, standard_estimator, weight_and_correct,
    Ensemble, Estimator, Execution, MpmForecast, MpmOptions, MpmStep, SigmaMode, WeightedEnsemble, DEFAULT_PARTICLES,
};
