//! Repost-log ingestion: clock normalization and unit-time binning.
//!
//! Every message's clock is shifted so that its release instant is `t = 0`.
//! Events are then counted into half-open bins `[(i-1)g, ig)` for
//! `i = 1..=T`. Bin indices are 1-based everywhere in the crate; the model
//! evaluates its curves at the bin index, never at `t = 0`.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One repost record.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ForwardEvent {
    pub message_id: Arc<str>,
    /// Whole seconds. Absolute (epoch) before [`normalize`], relative to the
    /// message's release afterwards.
    pub timestamp: u64,
}

impl ForwardEvent {
    pub fn new(message_id: impl Into<Arc<str>>, timestamp: u64) -> Self {
        Self {
            message_id: message_id.into(),
            timestamp,
        }
    }
}

/// Result of [`normalize`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Normalized {
    pub events: Vec<ForwardEvent>,
    /// Events stamped before their message's release.
    pub dropped_pre_release: u64,
    /// Message ids with no release time, with the number of events rejected
    /// for each.
    pub missing_release: BTreeMap<String, u64>,
}

/// Shift every event to its message's release clock.
///
/// Events earlier than the release are dropped and tallied. Events of
/// messages absent from `release_times` are rejected per message.
pub fn normalize(events: &[ForwardEvent], release_times: &BTreeMap<String, u64>) -> Normalized {
    let mut out = Normalized {
        events: Vec::with_capacity(events.len()),
        ..Default::default()
    };
    for ev in events {
        let Some(&release) = release_times.get(ev.message_id.as_ref()) else {
            *out
                .missing_release
                .entry(ev.message_id.to_string())
                .or_insert(0) += 1;
            continue;
        };
        match ev.timestamp.checked_sub(release) {
            Some(rel) => out.events.push(ForwardEvent {
                message_id: Arc::clone(&ev.message_id),
                timestamp: rel,
            }),
            None => out.dropped_pre_release += 1,
        }
    }
    out
}

/// Per-message forwarding counts per unit-time bin.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinnedSeries {
    pub message_id: String,
    pub granularity_seconds: u64,
    /// `counts[i - 1]` is the count of bin `i`.
    pub counts: Vec<u64>,
}

impl BinnedSeries {
    pub fn new(message_id: impl Into<String>, granularity_seconds: u64, counts: Vec<u64>) -> Self {
        Self {
            message_id: message_id.into(),
            granularity_seconds,
            counts,
        }
    }

    pub fn horizon_bins(&self) -> usize {
        self.counts.len()
    }

    /// Count in 1-based bin `t`.
    pub fn count(&self, t: usize) -> u64 {
        self.counts[t - 1]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Cumulative count through bin `t` (inclusive, 1-based). `t = 0` gives 0.
    pub fn cumulative(&self, t: usize) -> u64 {
        self.counts[..t].iter().sum()
    }

    /// Merge `factor` consecutive bins into one.
    pub fn rebin(&self, factor: usize) -> Result<BinnedSeries> {
        if factor == 0 {
            return Err(Error::param("factor", "must be >= 1"));
        }
        if self.counts.len() % factor != 0 {
            return Err(Error::invalid(format!(
                "horizon of {} bins is not a multiple of {factor}",
                self.counts.len()
            )));
        }
        Ok(BinnedSeries {
            message_id: self.message_id.clone(),
            granularity_seconds: self.granularity_seconds * factor as u64,
            counts: self.counts.chunks(factor).map(|c| c.iter().sum()).collect(),
        })
    }
}

/// Output of [`bin`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BinnedSet {
    pub granularity_seconds: u64,
    pub horizon_bins: usize,
    /// Keyed (and therefore iterated) by ascending message id.
    pub series: BTreeMap<String, BinnedSeries>,
    /// Events at or beyond `horizon_bins * granularity_seconds`.
    pub excluded_post_horizon: u64,
}

impl BinnedSet {
    /// Add an all-zero series for every id not already present.
    pub fn ensure_messages<'a>(&mut self, ids: impl IntoIterator<Item = &'a str>) {
        for id in ids {
            if !self.series.contains_key(id) {
                self.series.insert(
                    id.to_string(),
                    BinnedSeries::new(id, self.granularity_seconds, vec![0; self.horizon_bins]),
                );
            }
        }
    }

    pub fn total_binned(&self) -> u64 {
        self.series.values().map(BinnedSeries::total).sum()
    }
}

fn check_grid(granularity_seconds: u64, horizon_bins: usize) -> Result<()> {
    if granularity_seconds == 0 {
        return Err(Error::param("granularity_seconds", "must be >= 1"));
    }
    if horizon_bins == 0 {
        return Err(Error::param("horizon_bins", "must be >= 1"));
    }
    Ok(())
}

/// Count normalized events into `horizon_bins` bins of `granularity_seconds`.
///
/// A message whose events all fall past the horizon still gets an all-zero
/// series.
pub fn bin(events: &[ForwardEvent], granularity_seconds: u64, horizon_bins: usize) -> Result<BinnedSet> {
    check_grid(granularity_seconds, horizon_bins)?;
    let mut set = BinnedSet {
        granularity_seconds,
        horizon_bins,
        ..Default::default()
    };
    for ev in events {
        let idx = ev.timestamp / granularity_seconds;
        let id: &str = &ev.message_id;
        if !set.series.contains_key(id) {
            set.series.insert(
                id.to_string(),
                BinnedSeries::new(id, granularity_seconds, vec![0; horizon_bins]),
            );
        }
        let series = set.series.get_mut(id).expect("inserted above");
        if idx < horizon_bins as u64 {
            series.counts[idx as usize] += 1;
        } else {
            set.excluded_post_horizon += 1;
        }
    }
    Ok(set)
}

/// Population-average forwarding count per bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageSeries {
    pub granularity_seconds: u64,
    /// `values[i - 1]` is the average for bin `i`.
    pub values: Vec<f64>,
    pub n_messages: usize,
}

impl AverageSeries {
    pub fn horizon_bins(&self) -> usize {
        self.values.len()
    }

    /// Maximum value and its earliest 1-based bin.
    pub fn peak(&self) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 1);
        for (i, &v) in self.values.iter().enumerate() {
            if v > best.0 {
                best = (v, i + 1);
            }
        }
        best
    }
}

/// Element-wise mean over a collection of series sharing granularity and
/// horizon.
///
/// Counts are accumulated as integers, so the result does not depend on
/// iteration order.
pub fn average<'a, I>(series: I) -> Result<AverageSeries>
where
    I: IntoIterator<Item = &'a BinnedSeries>,
{
    let mut iter = series.into_iter();
    let first = iter.next().ok_or(Error::Empty("series collection"))?;
    let granularity = first.granularity_seconds;
    let horizon = first.counts.len();
    let mut sums: Vec<u64> = first.counts.clone();
    let mut n = 1usize;
    for s in iter {
        if s.granularity_seconds != granularity {
            return Err(Error::invalid(format!(
                "mixed granularities: {} vs {granularity}",
                s.granularity_seconds
            )));
        }
        if s.counts.len() != horizon {
            return Err(Error::invalid(format!(
                "mixed horizons: {} vs {horizon}",
                s.counts.len()
            )));
        }
        for (acc, &c) in sums.iter_mut().zip(&s.counts) {
            *acc += c;
        }
        n += 1;
    }
    Ok(AverageSeries {
        granularity_seconds: granularity,
        values: sums.into_iter().map(|s| s as f64 / n as f64).collect(),
        n_messages: n,
    })
}

/// A normalized event log together with every message's release time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    /// Normalized: timestamps are seconds since release.
    pub events: Vec<ForwardEvent>,
    pub releases: BTreeMap<String, u64>,
}

impl Corpus {
    /// Normalize raw events against `releases`, keeping every listed message
    /// (including those without events).
    pub fn from_raw(events: &[ForwardEvent], releases: BTreeMap<String, u64>) -> (Self, Normalized) {
        let mut norm = normalize(events, &releases);
        let events = std::mem::take(&mut norm.events);
        (Self { events, releases }, norm)
    }

    /// Message ids ordered by release time (ties by id).
    pub fn chronological_ids(&self) -> Vec<&str> {
        let mut ids: Vec<(&str, u64)> = self.releases.iter().map(|(k, &v)| (k.as_str(), v)).collect();
        ids.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)));
        ids.into_iter().map(|(k, _)| k).collect()
    }

    /// Earliest `fraction` of messages (by release) for training, the rest
    /// for testing. Both sides are kept nonempty when there are at least two
    /// messages.
    pub fn split_chronological(&self, fraction: f64) -> Result<Split> {
        if !(fraction > 0.0 && fraction < 1.0) {
            return Err(Error::param("split_fraction", format!("{fraction} is not in (0, 1)")));
        }
        let ids = self.chronological_ids();
        if ids.len() < 2 {
            return Err(Error::invalid("need at least two messages to split"));
        }
        let n_train = ((ids.len() as f64 * fraction).floor() as usize).clamp(1, ids.len() - 1);
        Ok(Split {
            train: ids[..n_train].iter().map(|s| s.to_string()).collect(),
            test: ids[n_train..].iter().map(|s| s.to_string()).collect(),
        })
    }

    /// Bin every message in the corpus, including silent ones.
    pub fn bin(&self, granularity_seconds: u64, horizon_bins: usize) -> Result<BinnedSet> {
        let mut set = bin(&self.events, granularity_seconds, horizon_bins)?;
        set.ensure_messages(self.releases.keys().map(String::as_str));
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl BinnedSet {
    /// Series for `ids`, in the given order. Unknown ids are an error.
    pub fn select(&self, ids: &[String]) -> Result<Vec<BinnedSeries>> {
        ids.iter()
            .map(|id| {
                self.series
                    .get(id)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("no series for message `{id}`")))
            })
            .collect()
    }
}
