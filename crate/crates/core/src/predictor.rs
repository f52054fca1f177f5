//! Calibration and per-message prediction with the activation-decay model.
//!
//! A message observed for `t_known` bins is extrapolated with
//!
//! ```text
//! Q(t) = alpha * Q_max * shape(t) + e^beta,    t = t_known+1 ..= horizon
//! ```
//!
//! where `Q_max` is the largest count seen in the known window and `shape` is
//! the unit-peak population curve. The predicted total is the observed known
//! sum plus the extrapolated future sum. `alpha` and `beta` are chosen to
//! minimize MAPE over a training collection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::{self, FitOptions, FitReport, FitRoute};
use crate::ingest::{average, BinnedSeries, Corpus};
use crate::model::{BiHillParams, Calibration, Shape};

/// Trained activation-decay model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelFile", try_from = "ModelFile")]
pub struct AdModel {
    pub shape: Shape,
    pub calibration: Calibration,
    pub granularity_seconds: u64,
    pub t_known_bins: usize,
    pub horizon_bins: usize,
}

/// Flat JSON layout of [`AdModel`].
#[derive(Serialize, Deserialize)]
struct ModelFile {
    p_m: f64,
    k_a: f64,
    h_a: f64,
    k_d: f64,
    h_d: f64,
    alpha: f64,
    beta: Option<f64>,
    granularity_seconds: u64,
    shape_peak_bin: usize,
    t_known_bins: usize,
    horizon_bins: usize,
}

impl From<AdModel> for ModelFile {
    fn from(m: AdModel) -> Self {
        let p = m.shape.params;
        ModelFile {
            p_m: p.p_m,
            k_a: p.k_a,
            h_a: p.h_a,
            k_d: p.k_d,
            h_d: p.h_d,
            alpha: m.calibration.alpha,
            beta: m.calibration.beta.is_finite().then_some(m.calibration.beta),
            granularity_seconds: m.granularity_seconds,
            shape_peak_bin: m.shape.peak_bin,
            t_known_bins: m.t_known_bins,
            horizon_bins: m.horizon_bins,
        }
    }
}

impl TryFrom<ModelFile> for AdModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        let params = BiHillParams::new(f.p_m, f.k_a, f.h_a, f.k_d, f.h_d)?;
        let calibration = Calibration::new(f.alpha, f.beta.unwrap_or(f64::NEG_INFINITY))?;
        AdModel::new(
            Shape {
                params,
                peak_bin: f.shape_peak_bin,
            },
            calibration,
            f.granularity_seconds,
            f.t_known_bins,
            f.horizon_bins,
        )
    }
}

fn check_windows(t_known_bins: usize, horizon_bins: usize) -> Result<()> {
    if t_known_bins == 0 {
        return Err(Error::param("t_known_bins", "must be >= 1"));
    }
    if t_known_bins >= horizon_bins {
        return Err(Error::param(
            "t_known_bins",
            format!("{t_known_bins} must be smaller than the horizon ({horizon_bins} bins)"),
        ));
    }
    Ok(())
}

impl AdModel {
    pub fn new(
        shape: Shape,
        calibration: Calibration,
        granularity_seconds: u64,
        t_known_bins: usize,
        horizon_bins: usize,
    ) -> Result<Self> {
        check_windows(t_known_bins, horizon_bins)?;
        if granularity_seconds == 0 {
            return Err(Error::param("granularity_seconds", "must be >= 1"));
        }
        Ok(Self {
            shape,
            calibration,
            granularity_seconds,
            t_known_bins,
            horizon_bins,
        })
    }

    pub fn forecaster(&self) -> Forecaster {
        let future: f64 = (self.t_known_bins + 1..=self.horizon_bins)
            .map(|t| self.shape.at(t))
            .sum();
        Forecaster {
            calibration: self.calibration,
            t_known_bins: self.t_known_bins,
            horizon_bins: self.horizon_bins,
            future_shape_sum: future,
        }
    }

    pub fn predict(&self, series: &BinnedSeries) -> Result<PredictionRecord> {
        self.forecaster().predict(series)
    }
}

/// Everything needed to extrapolate one message: the calibration and the
/// shape mass over the future window.
///
/// All future terms `alpha * Q_max * shape(t) + e^beta` are non-negative, so
/// their sum is `alpha * Q_max * S + n_future * e^beta` with
/// `S = sum of shape(t)` over the future window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Forecaster {
    pub calibration: Calibration,
    pub t_known_bins: usize,
    pub horizon_bins: usize,
    pub future_shape_sum: f64,
}

impl Forecaster {
    /// Build from a tabulated unit-peak shape (`table[t - 1]` = shape at bin `t`).
    pub fn from_table(table: &[f64], calibration: Calibration, t_known_bins: usize) -> Result<Self> {
        let horizon_bins = table.len();
        check_windows(t_known_bins, horizon_bins)?;
        Ok(Self {
            calibration,
            t_known_bins,
            horizon_bins,
            future_shape_sum: table[t_known_bins..].iter().sum(),
        })
    }

    pub fn n_future(&self) -> usize {
        self.horizon_bins - self.t_known_bins
    }

    /// Predicted count over the future window for a given known-window peak.
    pub fn future_sum(&self, q_max: f64) -> f64 {
        let c = &self.calibration;
        (c.alpha * q_max * self.future_shape_sum + self.n_future() as f64 * c.floor()).max(0.0)
    }

    pub fn predict(&self, series: &BinnedSeries) -> Result<PredictionRecord> {
        let (q_max, _) = q_max_known(series, self.t_known_bins)?;
        let known_sum = series.cumulative(self.t_known_bins);
        let future = self.future_sum(q_max as f64);
        let peak_class = if series.horizon_bins() >= self.horizon_bins {
            classify_peak(series, self.t_known_bins, self.horizon_bins)?
        } else {
            PeakClass::Unknown
        };
        Ok(PredictionRecord {
            message_id: series.message_id.clone(),
            q_max_observed: q_max,
            known_sum,
            predicted_future_sum: future,
            predicted_total: known_sum as f64 + future,
            peak_class,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeakClass {
    RealPeak,
    FakePeak,
    Unknown,
}

impl PeakClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            PeakClass::RealPeak => "real_peak",
            PeakClass::FakePeak => "fake_peak",
            PeakClass::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub message_id: String,
    pub q_max_observed: u64,
    pub known_sum: u64,
    pub predicted_future_sum: f64,
    pub predicted_total: f64,
    /// Needs the full horizon; `Unknown` when the series stops at the known window.
    pub peak_class: PeakClass,
}

/// Predict one message's total over the model horizon.
pub fn predict_message(model: &AdModel, series: &BinnedSeries) -> Result<PredictionRecord> {
    model.predict(series)
}

/// Largest count in bins `1..=t_known_bins` and the earliest bin holding it.
pub fn q_max_known(series: &BinnedSeries, t_known_bins: usize) -> Result<(u64, usize)> {
    if t_known_bins == 0 || t_known_bins > series.horizon_bins() {
        return Err(Error::invalid(format!(
            "known window of {t_known_bins} bins does not fit series `{}` of {} bins",
            series.message_id,
            series.horizon_bins()
        )));
    }
    Ok(earliest_argmax(&series.counts[..t_known_bins]))
}

fn earliest_argmax(counts: &[u64]) -> (u64, usize) {
    let mut best = (counts[0], 1);
    for (i, &c) in counts.iter().enumerate().skip(1) {
        if c > best.0 {
            best = (c, i + 1);
        }
    }
    best
}

/// Real peak iff the earliest global maximum over the horizon lies inside
/// the known window. Uses ground truth; for evaluation only.
pub fn classify_peak(series: &BinnedSeries, t_known_bins: usize, horizon_bins: usize) -> Result<PeakClass> {
    check_windows(t_known_bins, horizon_bins)?;
    if series.horizon_bins() < horizon_bins {
        return Err(Error::invalid(format!(
            "series `{}` covers {} bins, need {horizon_bins}",
            series.message_id,
            series.horizon_bins()
        )));
    }
    let (_, t_peak) = earliest_argmax(&series.counts[..horizon_bins]);
    Ok(if t_peak <= t_known_bins {
        PeakClass::RealPeak
    } else {
        PeakClass::FakePeak
    })
}

/// Summary statistics of one training message.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSample {
    pub known_sum: f64,
    pub q_max: f64,
    pub real_total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFit {
    pub calibration: Calibration,
    /// Training MAPE at the optimum.
    pub mape: f64,
    pub n_used: usize,
    pub n_excluded_zero_real: usize,
}

pub const ALPHA_GRID: (f64, f64, usize) = (0.05, 20.0, 40);
pub const FLOOR_GRID: (f64, f64, usize) = (1e-3, 1e2, 40);
pub const MAPE_TOLERANCE: f64 = 1e-6;
const SIMPLEX_MAX_ITER: usize = 2_000;

fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

struct Objective<'a> {
    samples: &'a [CalibrationSample],
    shape_sum: f64,
    n_future: f64,
}

impl Objective<'_> {
    fn mape(&self, alpha: f64, floor: f64) -> f64 {
        if !(alpha > 0.0) || !(floor >= 0.0) {
            return f64::INFINITY;
        }
        let mut sum = 0.0;
        for s in self.samples {
            let pred = s.known_sum + (alpha * s.q_max * self.shape_sum + self.n_future * floor).max(0.0);
            sum += (pred - s.real_total).abs() / s.real_total;
        }
        sum / self.samples.len() as f64
    }
}

/// MAPE-minimizing `(alpha, e^beta)` for pre-summarized samples.
///
/// Coarse log-spaced grid (with `e^beta = 0` as an extra row), then
/// Nelder-Mead from the best cell. Ties prefer smaller `alpha`, then smaller
/// `beta`.
pub fn calibrate_samples(samples: &[CalibrationSample], future_shape_sum: f64, n_future: usize) -> Result<CalibrationFit> {
    let used: Vec<CalibrationSample> = samples.iter().copied().filter(|s| s.real_total > 0.0).collect();
    let excluded = samples.len() - used.len();
    if used.is_empty() {
        return Err(Error::Empty("training set (after excluding zero-real messages)"));
    }
    let obj = Objective {
        samples: &used,
        shape_sum: future_shape_sum,
        n_future: n_future as f64,
    };

    let alphas = logspace(ALPHA_GRID.0, ALPHA_GRID.1, ALPHA_GRID.2);
    let mut floors = vec![0.0];
    floors.extend(logspace(FLOOR_GRID.0, FLOOR_GRID.1, FLOOR_GRID.2));
    let cells: Vec<(f64, f64)> = alphas
        .iter()
        .flat_map(|&a| floors.iter().map(move |&f| (a, f)))
        .collect();
    let scores: Vec<f64> = cells.par_iter().map(|&(a, f)| obj.mape(a, f)).collect();
    let mut best = (cells[0], scores[0]);
    for (&cell, &score) in cells.iter().zip(&scores).skip(1) {
        if score < best.1 {
            best = (cell, score);
        }
    }

    let (refined, refined_score) = nelder_mead(|a, f| obj.mape(a, f), best.0);
    let ((alpha, floor), mape) = if refined_score < best.1 {
        (refined, refined_score)
    } else {
        best
    };
    Ok(CalibrationFit {
        calibration: Calibration::from_floor(alpha, floor)?,
        mape,
        n_used: used.len(),
        n_excluded_zero_real: excluded,
    })
}

fn nelder_mead(f: impl Fn(f64, f64) -> f64, start: (f64, f64)) -> ((f64, f64), f64) {
    let (a0, f0) = start;
    let df = if f0 > 0.0 { 0.25 * f0 } else { 1e-3 };
    let mut simplex = [
        ([a0, f0], 0.0),
        ([a0 * 1.25, f0], 0.0),
        ([a0, f0 + df], 0.0),
    ];
    for v in simplex.iter_mut() {
        v.1 = f(v.0[0], v.0[1]);
    }
    let eval = |p: [f64; 2]| (p, f(p[0], p[1]));
    let lerp = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];

    for _ in 0..SIMPLEX_MAX_ITER {
        simplex.sort_by(|x, y| x.1.total_cmp(&y.1));
        if (simplex[2].1 - simplex[0].1).abs() < MAPE_TOLERANCE {
            break;
        }
        let centroid = [
            0.5 * (simplex[0].0[0] + simplex[1].0[0]),
            0.5 * (simplex[0].0[1] + simplex[1].0[1]),
        ];
        let worst = simplex[2];
        let reflected = eval(lerp(centroid, worst.0, -1.0));
        if reflected.1 < simplex[0].1 {
            let expanded = eval(lerp(centroid, worst.0, -2.0));
            simplex[2] = if expanded.1 < reflected.1 { expanded } else { reflected };
        } else if reflected.1 < simplex[1].1 {
            simplex[2] = reflected;
        } else {
            let contracted = if reflected.1 < worst.1 {
                eval(lerp(centroid, reflected.0, 0.5))
            } else {
                eval(lerp(centroid, worst.0, 0.5))
            };
            if contracted.1 < worst.1.min(reflected.1) {
                simplex[2] = contracted;
            } else {
                let best = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    *v = eval(lerp(best, v.0, 0.5));
                }
            }
        }
    }
    simplex.sort_by(|x, y| x.1.total_cmp(&y.1));
    ((simplex[0].0[0], simplex[0].0[1]), simplex[0].1)
}

/// Summarize a training series for calibration.
pub fn calibration_sample(series: &BinnedSeries, t_known_bins: usize, horizon_bins: usize) -> Result<CalibrationSample> {
    if series.horizon_bins() < horizon_bins {
        return Err(Error::invalid(format!(
            "training series `{}` covers {} bins, need {horizon_bins}",
            series.message_id,
            series.horizon_bins()
        )));
    }
    let (q_max, _) = q_max_known(series, t_known_bins)?;
    Ok(CalibrationSample {
        known_sum: series.cumulative(t_known_bins) as f64,
        q_max: q_max as f64,
        real_total: series.cumulative(horizon_bins) as f64,
    })
}

/// Fit `(alpha, beta)` on training messages for a fixed shape.
pub fn calibrate(shape: &Shape, training: &[BinnedSeries], t_known_bins: usize, horizon_bins: usize) -> Result<CalibrationFit> {
    check_windows(t_known_bins, horizon_bins)?;
    if training.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let samples = training
        .iter()
        .map(|s| calibration_sample(s, t_known_bins, horizon_bins))
        .collect::<Result<Vec<_>>>()?;
    let future: f64 = (t_known_bins + 1..=horizon_bins).map(|t| shape.at(t)).sum();
    calibrate_samples(&samples, future, horizon_bins - t_known_bins)
}

/// Pipeline configuration; times in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub granularity_seconds: u64,
    pub t_known_seconds: u64,
    pub horizon_seconds: u64,
    pub split_fraction: f64,
    pub route: FitRoute,
    pub fit: FitOptions,
}

pub const DEFAULT_HORIZON_SECONDS: u64 = 7 * 24 * 3600;
pub const DEFAULT_SPLIT_FRACTION: f64 = 0.75;

impl TrainConfig {
    pub fn new(granularity_seconds: u64, t_known_seconds: u64) -> Self {
        Self {
            granularity_seconds,
            t_known_seconds,
            horizon_seconds: DEFAULT_HORIZON_SECONDS,
            split_fraction: DEFAULT_SPLIT_FRACTION,
            route: FitRoute::NonlinearLs,
            fit: FitOptions::default(),
        }
    }

    /// `(t_known_bins, horizon_bins)`; partial bins are dropped.
    pub fn windows(&self) -> Result<(usize, usize)> {
        if self.granularity_seconds == 0 {
            return Err(Error::param("granularity_seconds", "must be >= 1"));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::param("split_fraction", "must be in (0, 1)"));
        }
        if self.t_known_seconds >= self.horizon_seconds {
            return Err(Error::param(
                "t_known_seconds",
                format!("{} must be below the horizon {}", self.t_known_seconds, self.horizon_seconds),
            ));
        }
        let t_known = (self.t_known_seconds / self.granularity_seconds) as usize;
        let horizon = (self.horizon_seconds / self.granularity_seconds) as usize;
        check_windows(t_known, horizon)?;
        Ok((t_known, horizon))
    }
}

/// Output of [`train_pipeline`] / [`train_from_series`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedAd {
    pub model: AdModel,
    pub fit: FitReport,
    pub calibration: CalibrationFit,
}

/// Average, fit and calibrate on already-binned training series.
pub fn train_from_series(training: &[BinnedSeries], config: &TrainConfig) -> Result<TrainedAd> {
    let (t_known, horizon) = config.windows()?;
    let avg = average(training)?;
    if avg.horizon_bins() != horizon || avg.granularity_seconds != config.granularity_seconds {
        return Err(Error::invalid("training series do not match the configured grid"));
    }
    let fit = fitting::fit(&avg, config.route, &config.fit)?;
    let shape = Shape::normalize(&fit.params, horizon)?;
    let calibration = calibrate(&shape, training, t_known, horizon)?;
    Ok(TrainedAd {
        model: AdModel::new(shape, calibration.calibration, config.granularity_seconds, t_known, horizon)?,
        fit,
        calibration,
    })
}

/// Full training chain on a corpus: chronological split, binning,
/// averaging, shape fit, calibration.
pub fn train_pipeline(corpus: &Corpus, config: &TrainConfig) -> Result<TrainedAd> {
    let (_, horizon) = config.windows()?;
    let split = corpus.split_chronological(config.split_fraction)?;
    let set = corpus.bin(config.granularity_seconds, horizon)?;
    train_from_series(&set.select(&split.train)?, config)
}
