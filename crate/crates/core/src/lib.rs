//! Activation-decay popularity forecasting for repost cascades.
//!
//! The crate turns raw repost logs into per-message time series, fits a
//! population-level rise-and-decay curve (the BiHill shape), calibrates a
//! per-message scale and additive floor against historical messages, and
//! predicts each message's total forwarding count over a fixed horizon from
//! an early observation window.
//!
//! Module map:
//!
//! - [`ingest`]: clock normalization and unit-time binning.
//! - [`model`]: Hill / BiHill / activation-decay curve evaluation.
//! - [`fitting`]: power-law regression on the peak-proximity index and a
//!   Levenberg-Marquardt BiHill fitter.
//! - [`predictor`]: calibration and per-message prediction.
//! - [`baseline`]: the log-linear early-popularity baseline.
//! - [`metrics`]: APE, MAPE, Theil coefficient, APE percentiles.
//! - [`synth`]: seeded synthetic cascade generator.
//! - [`experiment`]: train/test sweeps and report rows.
//! - [`io`]: CSV / JSON-lines readers and writers.

pub mod baseline;
pub mod error;
pub mod experiment;
pub mod fitting;
pub mod ingest;
pub mod io;
pub mod metrics;
pub mod model;
pub mod predictor;
pub mod synth;

pub use error::{Error, Result};
