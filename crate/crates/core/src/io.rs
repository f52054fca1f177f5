//! File formats: event logs, releases, binned series, predictions, reports.
//!
//! Event logs are JSON lines (`{"id": .., "t": .., "release": ..}`) or CSV
//! with header `id,t[,release]`. Timestamps may be decimal; they are floored
//! to whole seconds. Everything written here is plain CSV or JSON with a
//! stable row order.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{CellFailure, ReportRow, ScatterRow};
use crate::ingest::{AverageSeries, BinnedSeries, BinnedSet, Corpus, ForwardEvent, Normalized};
use crate::predictor::PredictionRecord;
use crate::synth::SynthOutput;

/// Parse a non-negative timestamp, flooring fractional seconds.
pub fn parse_timestamp(s: &str) -> Result<u64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 && v < u64::MAX as f64 => Ok(v.floor() as u64),
        _ => Err(Error::invalid(format!("bad timestamp `{s}`"))),
    }
}

fn number_to_seconds(n: &serde_json::Number) -> Result<u64> {
    if let Some(v) = n.as_u64() {
        return Ok(v);
    }
    parse_timestamp(&n.to_string())
}

/// Events as read from disk, before clock normalization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawEvents {
    pub events: Vec<ForwardEvent>,
    /// Releases given inline with the events.
    pub releases: BTreeMap<String, u64>,
}

#[derive(Default)]
struct EventSink {
    ids: HashMap<String, Arc<str>>,
    out: RawEvents,
}

impl EventSink {
    fn push(&mut self, id: &str, t: u64, release: Option<u64>, line: usize) -> Result<()> {
        if id.is_empty() {
            return Err(Error::invalid(format!("line {line}: empty message id")));
        }
        let id = match self.ids.get(id) {
            Some(a) => Arc::clone(a),
            None => {
                let a: Arc<str> = id.into();
                self.ids.insert(id.to_string(), Arc::clone(&a));
                a
            }
        };
        if let Some(r) = release {
            match self.out.releases.get(id.as_ref()) {
                Some(&prev) if prev != r => {
                    return Err(Error::invalid(format!(
                        "line {line}: message `{id}` has conflicting releases {prev} and {r}"
                    )))
                }
                Some(_) => {}
                None => {
                    self.out.releases.insert(id.to_string(), r);
                }
            }
        }
        self.out.events.push(ForwardEvent { message_id: id, timestamp: t });
        Ok(())
    }
}

#[derive(Deserialize)]
struct JsonEvent {
    id: String,
    t: serde_json::Number,
    #[serde(default)]
    release: Option<serde_json::Number>,
}

pub fn read_events_jsonl(path: &Path) -> Result<RawEvents> {
    let reader = BufReader::new(File::open(path)?);
    let mut sink = EventSink::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: JsonEvent = serde_json::from_str(&line)
            .map_err(|e| Error::invalid(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let release = ev.release.as_ref().map(number_to_seconds).transpose()?;
        sink.push(&ev.id, number_to_seconds(&ev.t)?, release, i + 1)?;
    }
    Ok(sink.out)
}

#[derive(Deserialize)]
struct CsvEvent {
    id: String,
    t: String,
    #[serde(default)]
    release: Option<String>,
}

pub fn read_events_csv(path: &Path) -> Result<RawEvents> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut sink = EventSink::default();
    for (i, row) in reader.deserialize::<CsvEvent>().enumerate() {
        let row = row?;
        let release = match row.release.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(r) => Some(parse_timestamp(r)?),
        };
        sink.push(&row.id, parse_timestamp(&row.t)?, release, i + 2)?;
    }
    Ok(sink.out)
}

/// Dispatch on extension: `.csv` is CSV, anything else JSON lines.
pub fn read_events(path: &Path) -> Result<RawEvents> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => read_events_csv(path),
        _ => read_events_jsonl(path),
    }
}

#[derive(Serialize, Deserialize)]
struct ReleaseRow {
    id: String,
    release: String,
}

/// Releases CSV with header `id,release`.
pub fn read_releases(path: &Path) -> Result<BTreeMap<String, u64>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = BTreeMap::new();
    for row in reader.deserialize::<ReleaseRow>() {
        let row = row?;
        let t = parse_timestamp(&row.release)?;
        if let Some(prev) = out.insert(row.id.clone(), t) {
            if prev != t {
                return Err(Error::invalid(format!(
                    "message `{}` has conflicting releases {prev} and {t}",
                    row.id
                )));
            }
        }
    }
    Ok(out)
}

pub fn write_releases(path: &Path, releases: &BTreeMap<String, u64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["id", "release"])?;
    for (id, t) in releases {
        w.write_record([id.as_str(), &t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Where release times come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReleaseSource<'a> {
    /// Timestamps are already relative to release.
    ZeroBased,
    /// Inline `release` fields, optionally completed by a releases file.
    Inline(Option<&'a Path>),
}

/// Read, merge releases and normalize into a [`Corpus`].
pub fn load_corpus(events_path: &Path, source: ReleaseSource<'_>) -> Result<(Corpus, Normalized)> {
    let raw = read_events(events_path)?;
    let releases = match source {
        ReleaseSource::ZeroBased => raw
            .events
            .iter()
            .map(|e| (e.message_id.to_string(), 0))
            .collect(),
        ReleaseSource::Inline(file) => {
            let mut releases = raw.releases;
            if let Some(p) = file {
                for (id, t) in read_releases(p)? {
                    match releases.get(&id) {
                        Some(&prev) if prev != t => {
                            return Err(Error::invalid(format!(
                                "message `{id}`: inline release {prev} disagrees with releases file ({t})"
                            )))
                        }
                        _ => {
                            releases.insert(id, t);
                        }
                    }
                }
            }
            if releases.is_empty() && !raw.events.is_empty() {
                return Err(Error::invalid(
                    "no release times: supply inline `release` fields, a releases file, or use zero-based timestamps",
                ));
            }
            releases
        }
    };
    Ok(Corpus::from_raw(&raw.events, releases))
}

#[derive(Serialize)]
struct JsonEventOut<'a> {
    id: &'a str,
    t: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    release: Option<u64>,
}

/// JSON lines in input order; `release` is included when known.
pub fn write_events_jsonl(path: &Path, events: &[ForwardEvent], releases: &BTreeMap<String, u64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in events {
        serde_json::to_writer(
            &mut w,
            &JsonEventOut {
                id: &e.message_id,
                t: e.timestamp,
                release: releases.get(e.message_id.as_ref()).copied(),
            },
        )?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// JSON sidecar of a binned CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinnedMeta {
    pub granularity: u64,
    pub horizon_bins: usize,
    pub n_messages: usize,
    pub dropped_pre_release: u64,
    pub excluded_post_horizon: u64,
}

/// Sparse `id,bin,count` CSV (zero bins omitted) plus its sidecar.
pub fn write_binned(csv_path: &Path, meta_path: &Path, set: &BinnedSet, dropped_pre_release: u64) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(csv_path)?));
    w.write_record(["id", "bin", "count"])?;
    for (id, s) in &set.series {
        for (i, &c) in s.counts.iter().enumerate() {
            if c > 0 {
                w.write_record([id.as_str(), &(i + 1).to_string(), &c.to_string()])?;
            }
        }
    }
    w.flush()?;
    let meta = BinnedMeta {
        granularity: set.granularity_seconds,
        horizon_bins: set.horizon_bins,
        n_messages: set.series.len(),
        dropped_pre_release,
        excluded_post_horizon: set.excluded_post_horizon,
    };
    write_json(meta_path, &meta)
}

#[derive(Deserialize)]
struct BinRow {
    id: String,
    bin: usize,
    count: u64,
}

/// Read a sparse binned CSV. Messages listed only in `ids` (silent ones)
/// get all-zero series.
pub fn read_binned(csv_path: &Path, meta: &BinnedMeta, ids: &[String]) -> Result<BinnedSet> {
    let mut series: BTreeMap<String, BinnedSeries> = BTreeMap::new();
    let mut reader = csv::Reader::from_path(csv_path)?;
    for row in reader.deserialize::<BinRow>() {
        let row = row?;
        if row.bin == 0 || row.bin > meta.horizon_bins {
            return Err(Error::invalid(format!(
                "bin {} of `{}` is outside 1..={}",
                row.bin, row.id, meta.horizon_bins
            )));
        }
        let s = series
            .entry(row.id.clone())
            .or_insert_with(|| BinnedSeries::new(row.id.clone(), meta.granularity, vec![0; meta.horizon_bins]));
        s.counts[row.bin - 1] += row.count;
    }
    for id in ids {
        series
            .entry(id.clone())
            .or_insert_with(|| BinnedSeries::new(id.clone(), meta.granularity, vec![0; meta.horizon_bins]));
    }
    Ok(BinnedSet {
        granularity_seconds: meta.granularity,
        horizon_bins: meta.horizon_bins,
        series,
        excluded_post_horizon: meta.excluded_post_horizon,
    })
}

pub fn write_average(path: &Path, avg: &AverageSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin", "value"])?;
    for (i, v) in avg.values.iter().enumerate() {
        w.write_record([(i + 1).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_average(path: &Path, granularity_seconds: u64, n_messages: usize) -> Result<AverageSeries> {
    #[derive(Deserialize)]
    struct Row {
        bin: usize,
        value: f64,
    }
    let mut values = Vec::new();
    for row in csv::Reader::from_path(path)?.deserialize::<Row>() {
        let row = row?;
        if row.bin != values.len() + 1 {
            return Err(Error::invalid(format!("expected bin {}, found {}", values.len() + 1, row.bin)));
        }
        values.push(row.value);
    }
    Ok(AverageSeries {
        granularity_seconds,
        values,
        n_messages,
    })
}

/// One predictions CSV line; ground-truth columns are left empty when
/// unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub known_sum: u64,
    pub predicted_total: f64,
    pub real_total: Option<u64>,
    pub ape: Option<f64>,
    pub peak_class: Option<String>,
}

impl PredictionRow {
    pub fn from_record(rec: &PredictionRecord, real_total: Option<u64>) -> Self {
        let ape = real_total.and_then(|r| crate::metrics::ape(rec.predicted_total, r as f64).ok());
        Self {
            id: rec.message_id.clone(),
            known_sum: rec.known_sum,
            predicted_total: rec.predicted_total,
            real_total,
            ape,
            peak_class: real_total.map(|_| rec.peak_class.as_str().to_string()),
        }
    }
}

/// Predictions CSV. Ground-truth columns appear only when every row has one.
pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let with_truth = !rows.is_empty() && rows.iter().all(|r| r.real_total.is_some());
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    if with_truth {
        w.write_record(["id", "known_sum", "predicted_total", "real_total", "ape", "peak_class"])?;
    } else {
        w.write_record(["id", "known_sum", "predicted_total"])?;
    }
    for r in rows {
        let mut rec = vec![r.id.clone(), r.known_sum.to_string(), r.predicted_total.to_string()];
        if with_truth {
            rec.push(r.real_total.map(|v| v.to_string()).unwrap_or_default());
            rec.push(r.ape.map(|v| v.to_string()).unwrap_or_default());
            rec.push(r.peak_class.clone().unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize::<PredictionRow>()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Serialize `rows` as CSV with a header taken from the field names.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format report: `granularity_seconds,t_known_seconds,method,metric,value`.
pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    if rows.is_empty() {
        std::fs::write(path, "granularity_seconds,t_known_seconds,method,metric,value\n")?;
        return Ok(());
    }
    write_rows(path, rows)
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader.deserialize::<ReportRow>().map(|r| r.map_err(Error::from)).collect()
}

pub fn write_scatter(path: &Path, rows: &[ScatterRow]) -> Result<()> {
    if rows.is_empty() {
        std::fs::write(
            path,
            "granularity_seconds,t_known_seconds,method,message_id,known_sum,real_total,predicted_total,ape,peak_class\n",
        )?;
        return Ok(());
    }
    write_rows(path, rows)
}

/// Machine-readable list of failed cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureManifest {
    pub n_failed: usize,
    pub failures: Vec<CellFailure>,
}

pub fn write_failures(path: &Path, failures: &[CellFailure]) -> Result<()> {
    write_json(
        path,
        &FailureManifest {
            n_failed: failures.len(),
            failures: failures.to_vec(),
        },
    )
}

#[derive(Serialize)]
struct TruthRow<'a> {
    id: &'a str,
    release: u64,
    q_max: f64,
    expected_total: f64,
    realized_total: u64,
}

/// Per-message truth `id,release,q_max,expected_total,realized_total`.
///
/// The per-bin mean of message `id` at bin `t` is
/// `q_max * shape(t) + noise_floor`, with the shape and floor recorded in the
/// JSON written by [`write_synth_meta`].
pub fn write_truth(path: &Path, out: &SynthOutput) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for t in &out.truth {
        w.serialize(TruthRow {
            id: &t.message_id,
            release: t.release,
            q_max: t.q_max,
            expected_total: t.expected_total,
            realized_total: t.realized_total,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format per-bin means `id,bin,mean` for every message.
pub fn write_truth_means(path: &Path, out: &SynthOutput) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(["id", "bin", "mean"])?;
    for (i, t) in out.truth.iter().enumerate() {
        for (b, m) in out.bin_means(i).into_iter().enumerate() {
            w.write_record([t.message_id.as_str(), &(b + 1).to_string(), &m.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMeta {
    pub shape: crate::model::Shape,
    pub noise_floor: f64,
    pub granularity_seconds: u64,
    pub horizon_bins: usize,
    pub n_messages: usize,
    pub n_events: usize,
}

pub fn write_synth_meta(path: &Path, out: &SynthOutput) -> Result<()> {
    write_json(
        path,
        &SynthMeta {
            shape: out.shape,
            noise_floor: out.noise_floor,
            granularity_seconds: out.granularity_seconds,
            horizon_bins: out.horizon_bins,
            n_messages: out.truth.len(),
            n_events: out.events.len(),
        },
    )
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let r = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(r)?)
}
