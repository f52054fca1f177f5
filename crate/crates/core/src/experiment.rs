//! Train/test sweeps over granularity and observation window.
//!
//! A sweep bins the corpus once per granularity, fits the population shape
//! once per granularity on the chronological training split, then evaluates
//! every `(t_known, method)` cell on the test split. A failing cell is
//! recorded and the rest of the sweep continues.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{baseline_predict, fit_baseline};
use crate::error::{Error, Result};
use crate::fitting::{self, FitOptions, FitReport, FitRoute};
use crate::ingest::{average, BinnedSeries, Corpus};
use crate::metrics::{mape, summarize, EvalPair, EvalSummary, TicVariant};
use crate::model::Shape;
use crate::predictor::{calibrate, classify_peak, AdModel, CalibrationFit, PeakClass, DEFAULT_HORIZON_SECONDS, DEFAULT_SPLIT_FRACTION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ad,
    Baseline,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Ad => "ad",
            Method::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodSelection {
    Ad,
    Baseline,
    #[default]
    Both,
}

impl MethodSelection {
    pub fn methods(&self) -> &'static [Method] {
        match self {
            MethodSelection::Ad => &[Method::Ad],
            MethodSelection::Baseline => &[Method::Baseline],
            MethodSelection::Both => &[Method::Ad, Method::Baseline],
        }
    }
}

impl FromStr for MethodSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ad" => Ok(Self::Ad),
            "baseline" => Ok(Self::Baseline),
            "both" => Ok(Self::Both),
            other => Err(Error::invalid(format!("unknown method `{other}` (ad, baseline, both)"))),
        }
    }
}

/// Named granularity sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GranularityPreset {
    Wechat,
    Weibo,
}

impl GranularityPreset {
    pub fn granularities(&self) -> Vec<u64> {
        match self {
            GranularityPreset::Wechat => vec![60, 300, 600],
            GranularityPreset::Weibo => vec![30, 60, 120],
        }
    }
}

impl FromStr for GranularityPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wechat" => Ok(Self::Wechat),
            "weibo" => Ok(Self::Weibo),
            other => Err(Error::invalid(format!("unknown preset `{other}` (wechat, weibo)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub granularities: Vec<u64>,
    pub t_known_seconds: Vec<u64>,
    pub horizon_seconds: u64,
    pub split_fraction: f64,
    pub methods: MethodSelection,
    pub tic_variant: TicVariant,
    pub route: FitRoute,
    pub fit: FitOptions,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            granularities: GranularityPreset::Wechat.granularities(),
            t_known_seconds: vec![600, 1200, 1800, 3600, 7200],
            horizon_seconds: DEFAULT_HORIZON_SECONDS,
            split_fraction: DEFAULT_SPLIT_FRACTION,
            methods: MethodSelection::Both,
            tic_variant: TicVariant::Standard,
            route: FitRoute::NonlinearLs,
            fit: FitOptions::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.granularities.is_empty() {
            return Err(Error::param("granularities", "at least one is required"));
        }
        if self.t_known_seconds.is_empty() {
            return Err(Error::param("t_known", "at least one is required"));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::param("split_fraction", format!("{} is not in (0, 1)", self.split_fraction)));
        }
        if let Some(&g) = self.granularities.iter().find(|&&g| g == 0) {
            return Err(Error::param("granularity", format!("{g} must be >= 1")));
        }
        if let Some(&t) = self.t_known_seconds.iter().find(|&&t| t >= self.horizon_seconds) {
            return Err(Error::param(
                "t_known",
                format!("{t} s is not below the horizon ({} s)", self.horizon_seconds),
            ));
        }
        Ok(())
    }
}

/// Per-message evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageOutcome {
    pub message_id: String,
    pub known_sum: u64,
    pub predicted_total: f64,
    pub real_total: u64,
    pub ape: Option<f64>,
    pub peak_class: PeakClass,
}

/// MAPE restricted to real-peak and fake-peak messages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakSplit {
    pub real_peak_mape: Option<f64>,
    pub fake_peak_mape: Option<f64>,
    pub n_real_peak: usize,
    pub n_fake_peak: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub granularity_seconds: u64,
    pub t_known_seconds: u64,
    pub method: Method,
    pub summary: EvalSummary,
    pub peaks: PeakSplit,
    /// Set for [`Method::Ad`].
    pub calibration: Option<CalibrationFit>,
    pub messages: Vec<MessageOutcome>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFailure {
    pub granularity_seconds: u64,
    pub t_known_seconds: u64,
    pub method: Method,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub config: SweepConfig,
    /// Shape fit per granularity, when the AD method ran.
    pub fits: Vec<(u64, FitReport)>,
    pub cells: Vec<CellResult>,
    pub failures: Vec<CellFailure>,
}

impl SweepOutcome {
    pub fn cell(&self, granularity_seconds: u64, t_known_seconds: u64, method: Method) -> Option<&CellResult> {
        self.cells.iter().find(|c| {
            c.granularity_seconds == granularity_seconds && c.t_known_seconds == t_known_seconds && c.method == method
        })
    }

    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

fn peak_split(messages: &[MessageOutcome]) -> PeakSplit {
    let subset = |class: PeakClass| -> (Option<f64>, usize) {
        let pairs: Vec<EvalPair> = messages
            .iter()
            .filter(|m| m.peak_class == class)
            .map(|m| EvalPair::new(m.message_id.clone(), m.predicted_total, m.real_total as f64))
            .collect();
        (mape(&pairs).ok(), pairs.len())
    };
    let (real_peak_mape, n_real_peak) = subset(PeakClass::RealPeak);
    let (fake_peak_mape, n_fake_peak) = subset(PeakClass::FakePeak);
    PeakSplit {
        real_peak_mape,
        fake_peak_mape,
        n_real_peak,
        n_fake_peak,
    }
}

fn outcome(series: &BinnedSeries, t_known_bins: usize, horizon_bins: usize, predicted_total: f64) -> Result<MessageOutcome> {
    let real_total = series.cumulative(horizon_bins);
    Ok(MessageOutcome {
        message_id: series.message_id.clone(),
        known_sum: series.cumulative(t_known_bins),
        predicted_total,
        real_total,
        ape: crate::metrics::ape(predicted_total, real_total as f64).ok(),
        peak_class: classify_peak(series, t_known_bins, horizon_bins)?,
    })
}

/// Evaluate one method on a train/test pair at fixed windows.
///
/// `shape` is required for [`Method::Ad`] and ignored otherwise.
pub fn evaluate_cell(
    method: Method,
    shape: Option<&Shape>,
    train: &[BinnedSeries],
    test: &[BinnedSeries],
    t_known_bins: usize,
    horizon_bins: usize,
) -> Result<(Vec<MessageOutcome>, Option<CalibrationFit>)> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    match method {
        Method::Ad => {
            let shape = shape.ok_or_else(|| Error::invalid("the AD method needs a fitted shape"))?;
            let cal = calibrate(shape, train, t_known_bins, horizon_bins)?;
            let g = train.first().map_or(1, |s| s.granularity_seconds);
            let model = AdModel::new(*shape, cal.calibration, g, t_known_bins, horizon_bins)?;
            let f = model.forecaster();
            let messages = test
                .iter()
                .map(|s| {
                    let rec = f.predict(s)?;
                    outcome(s, t_known_bins, horizon_bins, rec.predicted_total)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((messages, Some(cal)))
        }
        Method::Baseline => {
            let profile = fit_baseline(train, t_known_bins, horizon_bins)?;
            let messages = test
                .iter()
                .map(|s| outcome(s, t_known_bins, horizon_bins, baseline_predict(&profile, s, horizon_bins)?))
                .collect::<Result<Vec<_>>>()?;
            Ok((messages, None))
        }
    }
}

fn finish_cell(
    granularity_seconds: u64,
    t_known_seconds: u64,
    method: Method,
    messages: Vec<MessageOutcome>,
    calibration: Option<CalibrationFit>,
) -> Result<CellResult> {
    let pairs: Vec<EvalPair> = messages
        .iter()
        .map(|m| EvalPair::new(m.message_id.clone(), m.predicted_total, m.real_total as f64))
        .collect();
    Ok(CellResult {
        granularity_seconds,
        t_known_seconds,
        method,
        summary: summarize(&pairs)?,
        peaks: peak_split(&messages),
        calibration,
        messages,
    })
}

/// Run every `(granularity, t_known, method)` cell of `config` on `corpus`.
///
/// Errors only for an invalid configuration or an unsplittable corpus; cell
/// level problems land in [`SweepOutcome::failures`].
pub fn run_sweep(corpus: &Corpus, config: &SweepConfig) -> Result<SweepOutcome> {
    config.validate()?;
    let split = corpus.split_chronological(config.split_fraction)?;
    let methods = config.methods.methods();
    let mut fits = Vec::new();
    let mut cells = Vec::new();
    let mut failures = Vec::new();

    let mut granularities = config.granularities.clone();
    granularities.sort_unstable();
    granularities.dedup();
    let mut t_knowns = config.t_known_seconds.clone();
    t_knowns.sort_unstable();
    t_knowns.dedup();

    for &g in &granularities {
        let fail_all = |failures: &mut Vec<CellFailure>, method: Method, err: &Error| {
            for &t in &t_knowns {
                failures.push(CellFailure {
                    granularity_seconds: g,
                    t_known_seconds: t,
                    method,
                    error: err.to_string(),
                });
            }
        };
        let horizon_bins = (config.horizon_seconds / g) as usize;
        let prepared = corpus.bin(g, horizon_bins).and_then(|set| {
            let train = set.select(&split.train)?;
            let test = set.select(&split.test)?;
            Ok((train, test))
        });
        let (train, test) = match prepared {
            Ok(v) => v,
            Err(e) => {
                for &m in methods {
                    fail_all(&mut failures, m, &e);
                }
                continue;
            }
        };

        let mut shape = None;
        if methods.contains(&Method::Ad) {
            let fitted = average(&train)
                .and_then(|avg| fitting::fit(&avg, config.route, &config.fit))
                .and_then(|fit| Ok((Shape::normalize(&fit.params, horizon_bins)?, fit)));
            match fitted {
                Ok((s, fit)) => {
                    shape = Some(s);
                    fits.push((g, fit));
                }
                Err(e) => fail_all(&mut failures, Method::Ad, &e),
            }
        }

        let jobs: Vec<(u64, Method)> = t_knowns
            .iter()
            .flat_map(|&t| methods.iter().map(move |&m| (t, m)))
            .filter(|&(_, m)| m != Method::Ad || shape.is_some())
            .collect();
        let results: Vec<(u64, Method, Result<CellResult>)> = jobs
            .par_iter()
            .map(|&(t, m)| {
                let t_known_bins = (t / g) as usize;
                let res = (|| {
                    if t_known_bins == 0 || t_known_bins >= horizon_bins {
                        return Err(Error::param(
                            "t_known",
                            format!("{t} s gives {t_known_bins} bins at {g} s granularity"),
                        ));
                    }
                    let (messages, cal) = evaluate_cell(m, shape.as_ref(), &train, &test, t_known_bins, horizon_bins)?;
                    finish_cell(g, t, m, messages, cal)
                })();
                (t, m, res)
            })
            .collect();
        for (t, m, res) in results {
            match res {
                Ok(cell) => cells.push(cell),
                Err(e) => failures.push(CellFailure {
                    granularity_seconds: g,
                    t_known_seconds: t,
                    method: m,
                    error: e.to_string(),
                }),
            }
        }
    }

    cells.sort_by(|a, b| {
        (a.granularity_seconds, a.t_known_seconds, a.method).cmp(&(b.granularity_seconds, b.t_known_seconds, b.method))
    });
    failures.sort_by(|a, b| {
        (a.granularity_seconds, a.t_known_seconds, a.method).cmp(&(b.granularity_seconds, b.t_known_seconds, b.method))
    });
    Ok(SweepOutcome {
        config: config.clone(),
        fits,
        cells,
        failures,
    })
}

/// One long-format report line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub granularity_seconds: u64,
    pub t_known_seconds: u64,
    pub method: Method,
    pub metric: String,
    /// Empty when the metric is undefined for the cell (e.g. no fake peaks).
    pub value: Option<f64>,
}

pub const REPORT_METRICS: [&str; 13] = [
    "ape_p50",
    "ape_p70",
    "ape_p90",
    "mape",
    "mape_fake_peak",
    "mape_real_peak",
    "n_evaluated",
    "n_excluded_zero_real",
    "n_fake_peak",
    "n_real_peak",
    "tic",
    "tic_as_written",
    "tic_standard",
];

fn cell_metric(cell: &CellResult, metric: &str, variant: TicVariant) -> Option<f64> {
    let s = &cell.summary;
    match metric {
        "ape_p50" => s.ape_percentiles.get(&50).copied(),
        "ape_p70" => s.ape_percentiles.get(&70).copied(),
        "ape_p90" => s.ape_percentiles.get(&90).copied(),
        "mape" => Some(s.mape),
        "mape_fake_peak" => cell.peaks.fake_peak_mape,
        "mape_real_peak" => cell.peaks.real_peak_mape,
        "n_evaluated" => Some(s.n_evaluated as f64),
        "n_excluded_zero_real" => Some(s.n_excluded_zero_real as f64),
        "n_fake_peak" => Some(cell.peaks.n_fake_peak as f64),
        "n_real_peak" => Some(cell.peaks.n_real_peak as f64),
        "tic" => Some(s.tic(variant)),
        "tic_as_written" => Some(s.tic_as_written),
        "tic_standard" => Some(s.tic_standard),
        _ => None,
    }
}

/// Long-format rows, sorted by granularity, t_known, method, metric.
pub fn report_rows(outcome: &SweepOutcome) -> Vec<ReportRow> {
    let mut rows = Vec::with_capacity(outcome.cells.len() * REPORT_METRICS.len());
    for cell in &outcome.cells {
        for metric in REPORT_METRICS {
            rows.push(ReportRow {
                granularity_seconds: cell.granularity_seconds,
                t_known_seconds: cell.t_known_seconds,
                method: cell.method,
                metric: metric.to_string(),
                value: cell_metric(cell, metric, outcome.config.tic_variant),
            });
        }
    }
    rows.sort_by(|a, b| {
        (a.granularity_seconds, a.t_known_seconds, a.method, &a.metric).cmp(&(
            b.granularity_seconds,
            b.t_known_seconds,
            b.method,
            &b.metric,
        ))
    });
    rows
}

/// Known-window size against real total and APE, one row per test message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub granularity_seconds: u64,
    pub t_known_seconds: u64,
    pub method: Method,
    pub message_id: String,
    pub known_sum: u64,
    pub real_total: u64,
    pub predicted_total: f64,
    pub ape: Option<f64>,
    pub peak_class: PeakClass,
}

pub fn scatter_rows(outcome: &SweepOutcome) -> Vec<ScatterRow> {
    outcome
        .cells
        .iter()
        .flat_map(|c| {
            c.messages.iter().map(move |m| ScatterRow {
                granularity_seconds: c.granularity_seconds,
                t_known_seconds: c.t_known_seconds,
                method: c.method,
                message_id: m.message_id.clone(),
                known_sum: m.known_sum,
                real_total: m.real_total,
                predicted_total: m.predicted_total,
                ape: m.ape,
                peak_class: m.peak_class,
            })
        })
        .collect()
}
