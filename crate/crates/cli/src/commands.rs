use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use adcast::baseline::{baseline_predict, fit_baseline, LogGrowthProfile};
use adcast::experiment::{report_rows, run_sweep, scatter_rows, GranularityPreset, MethodSelection, PeakSplit, SweepConfig, SweepOutcome};
use adcast::fitting::{self, FitOptions, FitReport, FitRoute, IndexFit, Weighting};
use adcast::ingest::{average, BinnedSeries, Corpus};
use adcast::io::{self, PredictionRow, ReleaseSource};
use adcast::metrics::{summarize, EvalPair, EvalSummary, TicVariant};
use adcast::model::Shape;
use adcast::predictor::{classify_peak, train_from_series, AdModel, TrainConfig, DEFAULT_HORIZON_SECONDS, DEFAULT_SPLIT_FRACTION};
use adcast::synth::{generate, SynthConfig};

use crate::config::FileConfig;
use crate::CommonArgs;

const DEFAULT_T_KNOWN: u64 = 3600;

/// Flags over config file over defaults.
#[derive(Debug, Clone)]
pub struct Settings {
    pub granularities: Vec<u64>,
    pub t_known: Vec<u64>,
    pub horizon: u64,
    pub split: f64,
    pub methods: MethodSelection,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub tic_variant: Option<TicVariant>,
    pub events: Option<PathBuf>,
    pub releases: Option<PathBuf>,
    pub zero_based: bool,
    pub preset: GranularityPreset,
    pub route: FitRoute,
    pub fit: FitOptions,
    pub n_messages: Option<usize>,
}

fn parse_tic(s: &str) -> Result<TicVariant> {
    match s {
        "standard" => Ok(TicVariant::Standard),
        "as_written" | "as-written" => Ok(TicVariant::AsWritten),
        _ => bail!("unknown TIC variant `{s}` (standard, as_written)"),
    }
}

fn parse_route(s: &str) -> Result<FitRoute> {
    match s {
        "nls" | "nonlinear_ls" => Ok(FitRoute::NonlinearLs),
        "r-index" | "r_index" | "r_index_regression" => Ok(FitRoute::RIndexRegression),
        _ => bail!("unknown fit route `{s}` (nls, r-index)"),
    }
}

fn parse_weighting(s: &str) -> Result<Weighting> {
    match s {
        "uniform" => Ok(Weighting::Uniform),
        "inverse-variance" | "inverse_variance" => Ok(Weighting::InverseVariance),
        _ => bail!("unknown weighting `{s}` (uniform, inverse-variance)"),
    }
}

impl Settings {
    pub fn resolve(flags: &CommonArgs, file: FileConfig) -> Result<Self> {
        let list = |flag: &Vec<u64>, file: Option<crate::config::OneOrMany>| {
            if flag.is_empty() {
                file.map(|v| v.into_vec()).unwrap_or_default()
            } else {
                flag.clone()
            }
        };
        let pick = |flag: &Option<String>, file: Option<String>| flag.clone().or(file);
        Ok(Self {
            granularities: list(&flags.granularity, file.granularity),
            t_known: list(&flags.t_known, file.t_known),
            horizon: flags.horizon.or(file.horizon).unwrap_or(DEFAULT_HORIZON_SECONDS),
            split: flags.split.or(file.split).unwrap_or(DEFAULT_SPLIT_FRACTION),
            methods: pick(&flags.method, file.method)
                .map(|s| s.parse())
                .transpose()?
                .unwrap_or_default(),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            out_dir: flags.out_dir.clone().or(file.out_dir).unwrap_or_else(|| PathBuf::from(".")),
            tic_variant: pick(&flags.tic_variant, file.tic_variant)
                .map(|s| parse_tic(&s))
                .transpose()?,
            events: flags.events.clone().or(file.events),
            releases: flags.releases.clone().or(file.releases),
            zero_based: flags.zero_based || file.zero_based.unwrap_or(false),
            preset: pick(&flags.preset, file.preset)
                .map(|s| s.parse())
                .transpose()?
                .unwrap_or(GranularityPreset::Wechat),
            route: pick(&flags.route, file.route)
                .map(|s| parse_route(&s))
                .transpose()?
                .unwrap_or(FitRoute::NonlinearLs),
            fit: FitOptions {
                weighting: pick(&flags.weighting, file.weighting)
                    .map(|s| parse_weighting(&s))
                    .transpose()?
                    .unwrap_or_default(),
            },
            n_messages: file.n_messages,
        })
    }

    /// The one granularity of a non-sweep command; defaults to the preset's
    /// middle value.
    fn granularity(&self) -> Result<u64> {
        match self.granularities.as_slice() {
            [] => Ok(self.preset.granularities()[1]),
            [g] => Ok(*g),
            _ => bail!("this command takes a single --granularity"),
        }
    }

    fn t_known(&self) -> Result<u64> {
        match self.t_known.as_slice() {
            [] => Ok(DEFAULT_T_KNOWN),
            [t] => Ok(*t),
            _ => bail!("this command takes a single --t-known"),
        }
    }

    fn horizon_bins(&self, g: u64) -> Result<usize> {
        if g == 0 {
            bail!("granularity must be >= 1");
        }
        let h = (self.horizon / g) as usize;
        if h == 0 {
            bail!("horizon {} s is shorter than one {g} s bin", self.horizon);
        }
        Ok(h)
    }

    fn tic(&self) -> TicVariant {
        self.tic_variant.unwrap_or_default()
    }

    fn out(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out_dir).with_context(|| format!("creating {}", self.out_dir.display()))?;
        Ok(self.out_dir.join(name))
    }

    fn load_corpus(&self) -> Result<(Corpus, adcast::ingest::Normalized)> {
        let events = self.events.as_deref().ok_or_else(|| anyhow!("--events is required"))?;
        let source = if self.zero_based {
            ReleaseSource::ZeroBased
        } else {
            ReleaseSource::Inline(self.releases.as_deref())
        };
        let (corpus, norm) = io::load_corpus(events, source).with_context(|| format!("loading {}", events.display()))?;
        if !norm.missing_release.is_empty() {
            let n: u64 = norm.missing_release.values().sum();
            eprintln!(
                "warning: {} message(s) without a release time; {n} event(s) rejected",
                norm.missing_release.len()
            );
        }
        if norm.dropped_pre_release > 0 {
            eprintln!("warning: {} event(s) before release dropped", norm.dropped_pre_release);
        }
        Ok((corpus, norm))
    }

    fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            granularity_seconds: self.granularity()?,
            t_known_seconds: self.t_known()?,
            horizon_seconds: self.horizon,
            split_fraction: self.split,
            route: self.route,
            fit: self.fit,
        })
    }
}

pub fn synth(s: &Settings, n_messages: Option<usize>, truth_bins: bool) -> Result<ExitCode> {
    let n = n_messages.or(s.n_messages).unwrap_or(10_000);
    let mut cfg = match s.preset {
        GranularityPreset::Wechat => SynthConfig::wechat(n, s.seed),
        GranularityPreset::Weibo => SynthConfig::weibo(n, s.seed),
    };
    cfg.horizon_bins = s.horizon_bins(cfg.granularity_seconds)?;
    let out = generate(&cfg)?;
    io::write_events_jsonl(&s.out("events.jsonl")?, &out.events, &out.releases)?;
    io::write_releases(&s.out("releases.csv")?, &out.releases)?;
    io::write_truth(&s.out("truth.csv")?, &out)?;
    io::write_synth_meta(&s.out("synth.json")?, &out)?;
    io::write_json(&s.out("synth_config.json")?, &cfg)?;
    if truth_bins {
        io::write_truth_means(&s.out("truth_means.csv")?, &out)?;
    }
    println!(
        "synth: {} messages, {} events, shape peak at bin {} ({} s bins)",
        out.truth.len(),
        out.events.len(),
        out.shape.peak_bin,
        out.granularity_seconds
    );
    Ok(ExitCode::SUCCESS)
}

pub fn ingest(s: &Settings) -> Result<ExitCode> {
    let (corpus, norm) = s.load_corpus()?;
    let g = s.granularity()?;
    let set = corpus.bin(g, s.horizon_bins(g)?)?;
    io::write_binned(&s.out("binned.csv")?, &s.out("binned.json")?, &set, norm.dropped_pre_release)?;
    let avg = average(set.series.values())?;
    io::write_average(&s.out("average.csv")?, &avg)?;
    let (peak, peak_bin) = avg.peak();
    println!(
        "ingest: {} messages, {} events binned, {} past horizon; average peaks at bin {peak_bin} ({peak:.4})",
        set.series.len(),
        set.total_binned(),
        set.excluded_post_horizon
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct FitFile {
    granularity_seconds: u64,
    horizon_bins: usize,
    n_messages: usize,
    fit: FitReport,
    shape: Shape,
    r_index: Option<IndexFit>,
}

pub fn fit(s: &Settings) -> Result<ExitCode> {
    let (corpus, _) = s.load_corpus()?;
    let g = s.granularity()?;
    let horizon = s.horizon_bins(g)?;
    let set = corpus.bin(g, horizon)?;
    let avg = average(set.series.values())?;
    let report = fitting::fit(&avg, s.route, &s.fit)?;
    let file = FitFile {
        granularity_seconds: g,
        horizon_bins: horizon,
        n_messages: avg.n_messages,
        fit: report,
        shape: Shape::normalize(&report.params, horizon)?,
        r_index: fitting::fit_r_powerlaw(&avg).ok(),
    };
    io::write_json(&s.out("fit.json")?, &file)?;
    let p = report.params;
    println!(
        "fit: P_m={:.6} K_a={:.6} H_a={:.6} K_d={:.6} H_d={:.6} rss={:.6e} converged={}",
        p.p_m, p.k_a, p.h_a, p.k_d, p.h_d, report.rss, report.converged
    );
    Ok(ExitCode::SUCCESS)
}

fn split_series(corpus: &Corpus, split: f64, g: u64, horizon: usize) -> Result<(Vec<BinnedSeries>, Vec<BinnedSeries>)> {
    let ids = corpus.split_chronological(split)?;
    let set = corpus.bin(g, horizon)?;
    Ok((set.select(&ids.train)?, set.select(&ids.test)?))
}

pub fn train(s: &Settings) -> Result<ExitCode> {
    let (corpus, _) = s.load_corpus()?;
    let cfg = s.train_config()?;
    let (t_known, horizon) = cfg.windows()?;
    let (train, _) = split_series(&corpus, cfg.split_fraction, cfg.granularity_seconds, horizon)?;
    for method in s.methods.methods() {
        match method {
            adcast::experiment::Method::Ad => {
                let trained = train_from_series(&train, &cfg)?;
                io::write_json(&s.out("model_ad.json")?, &trained.model)?;
                io::write_json(&s.out("train_ad.json")?, &trained)?;
                let c = trained.model.calibration;
                println!(
                    "train ad: alpha={:.6} e^beta={:.6} training MAPE={:.4} ({} messages)",
                    c.alpha,
                    c.floor(),
                    trained.calibration.mape,
                    trained.calibration.n_used
                );
            }
            adcast::experiment::Method::Baseline => {
                let profile = fit_baseline(&train, t_known, horizon)?;
                io::write_json(&s.out("model_baseline.json")?, &profile)?;
                println!(
                    "train baseline: mean log growth to horizon {:.6} ({} messages)",
                    profile.growth(horizon)?,
                    profile.n_train
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

enum LoadedModel {
    Ad(AdModel),
    Baseline(LogGrowthProfile),
}

impl LoadedModel {
    fn read(path: &Path) -> Result<Self> {
        let value: serde_json::Value = io::read_json(path).with_context(|| format!("reading {}", path.display()))?;
        if value.get("cumulative_log_growth").is_some() {
            Ok(Self::Baseline(serde_json::from_value(value)?))
        } else {
            Ok(Self::Ad(serde_json::from_value(value).context("not an AD or baseline model")?))
        }
    }

    fn grid(&self) -> (u64, usize, usize) {
        match self {
            Self::Ad(m) => (m.granularity_seconds, m.t_known_bins, m.horizon_bins),
            Self::Baseline(p) => (p.granularity_seconds, p.t1_bins, p.horizon_bins),
        }
    }
}

pub fn predict(s: &Settings, model_path: &Path, subset: &str, with_truth: bool) -> Result<ExitCode> {
    let model = LoadedModel::read(model_path)?;
    let (g, t_known, horizon) = model.grid();
    let (corpus, _) = s.load_corpus()?;
    let set = corpus.bin(g, horizon)?;
    let ids: Vec<String> = match subset {
        "all" => set.series.keys().cloned().collect(),
        "train" => corpus.split_chronological(s.split)?.train,
        "test" => corpus.split_chronological(s.split)?.test,
        other => bail!("unknown subset `{other}` (test, train, all)"),
    };
    let series = set.select(&ids)?;
    let forecaster = match &model {
        LoadedModel::Ad(m) => Some(m.forecaster()),
        LoadedModel::Baseline(_) => None,
    };
    let rows = series
        .iter()
        .map(|x| -> Result<PredictionRow> {
            let truth = with_truth.then(|| x.cumulative(horizon));
            match (&model, &forecaster) {
                (LoadedModel::Ad(_), Some(f)) => Ok(PredictionRow::from_record(&f.predict(x)?, truth)),
                (LoadedModel::Baseline(p), _) => {
                    let predicted = baseline_predict(p, x, horizon)?;
                    let ape = truth.and_then(|r| adcast::metrics::ape(predicted, r as f64).ok());
                    let peak = match truth {
                        Some(_) => Some(classify_peak(x, t_known, horizon)?.as_str().to_string()),
                        None => None,
                    };
                    Ok(PredictionRow {
                        id: x.message_id.clone(),
                        known_sum: x.cumulative(t_known),
                        predicted_total: predicted,
                        real_total: truth,
                        ape,
                        peak_class: peak,
                    })
                }
                _ => unreachable!(),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let path = s.out("predictions.csv")?;
    io::write_predictions(&path, &rows)?;
    println!("predict: {} messages -> {}", rows.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct EvalFile {
    summary: EvalSummary,
    tic_variant: TicVariant,
    tic: f64,
    peaks: PeakSplit,
}

pub fn evaluate(s: &Settings, predictions: &Path) -> Result<ExitCode> {
    let rows = io::read_predictions(predictions).with_context(|| format!("reading {}", predictions.display()))?;
    let mut pairs = Vec::with_capacity(rows.len());
    let mut by_class = [Vec::new(), Vec::new()];
    for r in &rows {
        let real = r
            .real_total
            .ok_or_else(|| anyhow!("message `{}` has no real_total; predict with --with-truth", r.id))?;
        let pair = EvalPair::new(r.id.clone(), r.predicted_total, real as f64);
        match r.peak_class.as_deref() {
            Some("real_peak") => by_class[0].push(pair.clone()),
            Some("fake_peak") => by_class[1].push(pair.clone()),
            _ => {}
        }
        pairs.push(pair);
    }
    let summary = summarize(&pairs)?;
    let peaks = PeakSplit {
        real_peak_mape: adcast::metrics::mape(&by_class[0]).ok(),
        fake_peak_mape: adcast::metrics::mape(&by_class[1]).ok(),
        n_real_peak: by_class[0].len(),
        n_fake_peak: by_class[1].len(),
    };
    let variant = s.tic();
    let file = EvalFile {
        tic: summary.tic(variant),
        tic_variant: variant,
        summary,
        peaks,
    };
    io::write_json(&s.out("eval_summary.json")?, &file)?;

    #[derive(Serialize)]
    struct MessageRow<'a> {
        id: &'a str,
        predicted_total: f64,
        real_total: u64,
        ape: Option<f64>,
        peak_class: Option<&'a str>,
    }
    let message_rows: Vec<MessageRow> = rows
        .iter()
        .map(|r| MessageRow {
            id: &r.id,
            predicted_total: r.predicted_total,
            real_total: r.real_total.unwrap_or_default(),
            ape: r.ape,
            peak_class: r.peak_class.as_deref(),
        })
        .collect();
    io::write_rows(&s.out("eval_messages.csv")?, &message_rows)?;
    println!(
        "evaluate: MAPE={:.4} TIC({})={:.4} over {} messages ({} with zero real total)",
        file.summary.mape,
        match variant {
            TicVariant::Standard => "standard",
            TicVariant::AsWritten => "as_written",
        },
        file.tic,
        file.summary.n_evaluated,
        file.summary.n_excluded_zero_real
    );
    Ok(ExitCode::SUCCESS)
}

fn write_reports(s: &Settings, outcome: &SweepOutcome) -> Result<()> {
    io::write_report(&s.out("report.csv")?, &report_rows(outcome))?;
    io::write_scatter(&s.out("scatter.csv")?, &scatter_rows(outcome))?;
    Ok(())
}

pub fn report(s: &Settings, results: &Path) -> Result<ExitCode> {
    let mut outcome: SweepOutcome = io::read_json(results).with_context(|| format!("reading {}", results.display()))?;
    if let Some(v) = s.tic_variant {
        outcome.config.tic_variant = v;
    }
    write_reports(s, &outcome)?;
    println!("report: {} cells -> {}", outcome.cells.len(), s.out_dir.display());
    Ok(ExitCode::SUCCESS)
}

/// Default sweep windows: 10 to 120 minutes in 10 minute steps.
fn default_sweep_windows() -> Vec<u64> {
    (1..=12).map(|k| k * 600).collect()
}

pub fn sweep(s: &Settings) -> Result<ExitCode> {
    let (corpus, _) = s.load_corpus()?;
    let cfg = SweepConfig {
        granularities: if s.granularities.is_empty() {
            s.preset.granularities()
        } else {
            s.granularities.clone()
        },
        t_known_seconds: if s.t_known.is_empty() {
            default_sweep_windows()
        } else {
            s.t_known.clone()
        },
        horizon_seconds: s.horizon,
        split_fraction: s.split,
        methods: s.methods,
        tic_variant: s.tic(),
        route: s.route,
        fit: s.fit,
    };
    let outcome = run_sweep(&corpus, &cfg)?;
    io::write_json(&s.out("results.json")?, &outcome)?;
    write_reports(s, &outcome)?;
    io::write_failures(&s.out("failures.json")?, &outcome.failures)?;
    for c in &outcome.cells {
        println!(
            "g={:>5} t_known={:>6} {:<8} MAPE={:.4} TIC={:.4}",
            c.granularity_seconds,
            c.t_known_seconds,
            c.method,
            c.summary.mape,
            c.summary.tic(cfg.tic_variant)
        );
    }
    if outcome.is_complete() {
        Ok(ExitCode::SUCCESS)
    } else {
        for f in &outcome.failures {
            eprintln!(
                "failed: g={} t_known={} {}: {}",
                f.granularity_seconds, f.t_known_seconds, f.method, f.error
            );
        }
        eprintln!("{} cell(s) failed; see {}", outcome.failures.len(), s.out("failures.json")?.display());
        Ok(ExitCode::from(2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let flags = CommonArgs {
            granularity: vec![60],
            split: Some(0.5),
            ..Default::default()
        };
        let file: FileConfig = toml::from_str("granularity = [300, 600]\nsplit = 0.9\nhorizon = 3600\nmethod = \"ad\"").unwrap();
        let s = Settings::resolve(&flags, file).unwrap();
        assert_eq!(s.granularities, vec![60]);
        assert_eq!(s.split, 0.5);
        assert_eq!(s.horizon, 3600);
        assert_eq!(s.methods, MethodSelection::Ad);
    }

    #[test]
    fn defaults() {
        let s = Settings::resolve(&CommonArgs::default(), FileConfig::default()).unwrap();
        assert_eq!(s.horizon, DEFAULT_HORIZON_SECONDS);
        assert_eq!(s.split, DEFAULT_SPLIT_FRACTION);
        assert_eq!(s.granularity().unwrap(), 300);
        assert_eq!(s.t_known().unwrap(), DEFAULT_T_KNOWN);
        assert_eq!(s.tic(), TicVariant::Standard);
        assert_eq!(default_sweep_windows().last(), Some(&7200));
    }

    #[test]
    fn bad_values_are_reported() {
        let flags = CommonArgs {
            tic_variant: Some("theil".into()),
            ..Default::default()
        };
        assert!(Settings::resolve(&flags, FileConfig::default()).is_err());
        let flags = CommonArgs {
            granularity: vec![60, 300],
            ..Default::default()
        };
        let s = Settings::resolve(&flags, FileConfig::default()).unwrap();
        assert!(s.granularity().is_err());
    }
}
