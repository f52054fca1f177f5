//! Seeded synthetic cascades with an activation-decay mean structure.
//!
//! Each message draws a peak scale `q_max` from a log-normal distribution.
//! Bin `t` then receives `Poisson(q_max * shape(t) + noise_floor)` reposts,
//! each stamped uniformly inside the bin. Randomness for message `i` and bin
//! `t` comes from its own position in a counter-based ChaCha stream, so the
//! output does not depend on thread scheduling.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Corpus, ForwardEvent};
use crate::model::{BiHillParams, Shape};

/// Words reserved per bin in a message's stream.
const BIN_STRIDE_BITS: u32 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleDistribution {
    /// Mean of `ln q_max`.
    pub mu: f64,
    /// Standard deviation of `ln q_max`.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Population curve in units of `granularity_seconds` bins; rescaled to
    /// unit peak before use.
    pub shape: BiHillParams,
    pub n_messages: usize,
    pub horizon_bins: usize,
    pub granularity_seconds: u64,
    pub scale: ScaleDistribution,
    /// Per-bin additive Poisson mean.
    pub noise_floor: f64,
    pub rng_seed: u64,
    /// Release time of the first message (epoch seconds).
    pub release_origin: u64,
    /// Gap between consecutive releases.
    pub release_spacing_seconds: u64,
}

const WEEK: u64 = 7 * 24 * 3600;

impl SynthConfig {
    /// WeChat-like: minute bins, average peak around bin 30.
    pub fn wechat(n_messages: usize, rng_seed: u64) -> Self {
        Self {
            shape: BiHillParams {
                p_m: 1.0,
                k_a: 18.0,
                h_a: 2.5,
                k_d: 45.0,
                h_d: 1.6,
            },
            n_messages,
            horizon_bins: (WEEK / 60) as usize,
            granularity_seconds: 60,
            scale: ScaleDistribution {
                mu: 1.0f64.ln(),
                sigma: 1.0,
            },
            noise_floor: 0.005,
            rng_seed,
            release_origin: 1_464_825_600,
            release_spacing_seconds: 37,
        }
    }

    /// Weibo-like: 10-second bins, average peak around 200 s.
    pub fn weibo(n_messages: usize, rng_seed: u64) -> Self {
        Self {
            shape: BiHillParams {
                p_m: 1.0,
                k_a: 12.0,
                h_a: 2.5,
                k_d: 30.0,
                h_d: 1.6,
            },
            horizon_bins: (WEEK / 10) as usize,
            granularity_seconds: 10,
            noise_floor: 0.0008,
            ..Self::wechat(n_messages, rng_seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if self.n_messages == 0 {
            return Err(Error::param("n_messages", "must be >= 1"));
        }
        if self.horizon_bins == 0 || self.horizon_bins >= 1 << (64 - BIN_STRIDE_BITS) {
            return Err(Error::param("horizon_bins", "out of range"));
        }
        if self.granularity_seconds == 0 {
            return Err(Error::param("granularity_seconds", "must be >= 1"));
        }
        if !(self.scale.sigma >= 0.0) || !self.scale.mu.is_finite() || !self.scale.sigma.is_finite() {
            return Err(Error::param("scale", "need finite mu and sigma >= 0"));
        }
        if !(self.noise_floor >= 0.0) || !self.noise_floor.is_finite() {
            return Err(Error::param("noise_floor", "must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn message_id(&self, index: usize) -> String {
        let width = (self.n_messages.max(2) - 1).to_string().len().max(6);
        format!("m{index:0width$}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageTruth {
    pub message_id: String,
    pub release: u64,
    pub q_max: f64,
    /// `sum_t (q_max * shape(t) + noise_floor)` over the horizon.
    pub expected_total: f64,
    pub realized_total: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    /// Absolute timestamps, ordered by `(message_id, timestamp)`.
    pub events: Vec<ForwardEvent>,
    pub releases: BTreeMap<String, u64>,
    pub truth: Vec<MessageTruth>,
    pub shape: Shape,
    pub noise_floor: f64,
    pub granularity_seconds: u64,
    pub horizon_bins: usize,
}

impl SynthOutput {
    /// Per-bin Poisson means of message `index`.
    pub fn bin_means(&self, index: usize) -> Vec<f64> {
        let q = self.truth[index].q_max;
        (1..=self.horizon_bins)
            .map(|t| q * self.shape.at(t) + self.noise_floor)
            .collect()
    }

    /// Normalized corpus ready for training.
    pub fn corpus(&self) -> Corpus {
        Corpus::from_raw(&self.events, self.releases.clone()).0
    }
}

fn message_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let shape = Shape::normalize(&config.shape, config.horizon_bins)?;
    let table = shape.table(config.horizon_bins);
    let shape_mass: f64 = table.iter().sum();
    let scale = LogNormal::new(config.scale.mu, config.scale.sigma)
        .map_err(|e| Error::param("scale", e.to_string()))?;
    let g = config.granularity_seconds;

    let per_message: Vec<(MessageTruth, Vec<ForwardEvent>)> = (0..config.n_messages)
        .into_par_iter()
        .map(|i| {
            let id: Arc<str> = config.message_id(i).into();
            let release = config.release_origin + i as u64 * config.release_spacing_seconds;
            let mut rng = message_rng(config.rng_seed, i);
            let q_max = scale.sample(&mut rng);
            let mut events = Vec::new();
            for (t, &s) in table.iter().enumerate().map(|(k, s)| (k + 1, s)) {
                let mean = q_max * s + config.noise_floor;
                if !(mean > 0.0) {
                    continue;
                }
                rng.set_word_pos((t as u128) << BIN_STRIDE_BITS);
                let count = Poisson::new(mean).map(|p| p.sample(&mut rng)).unwrap_or(0.0) as u64;
                let start = release + (t as u64 - 1) * g;
                let mut stamps: Vec<u64> = (0..count).map(|_| start + rng.random_range(0..g)).collect();
                stamps.sort_unstable();
                events.extend(stamps.into_iter().map(|ts| ForwardEvent {
                    message_id: Arc::clone(&id),
                    timestamp: ts,
                }));
            }
            let truth = MessageTruth {
                message_id: id.to_string(),
                release,
                q_max,
                expected_total: q_max * shape_mass + config.noise_floor * config.horizon_bins as f64,
                realized_total: events.len() as u64,
            };
            (truth, events)
        })
        .collect();

    let total: usize = per_message.iter().map(|(_, e)| e.len()).sum();
    let mut events = Vec::with_capacity(total);
    let mut truth = Vec::with_capacity(per_message.len());
    let mut releases = BTreeMap::new();
    for (t, e) in per_message {
        releases.insert(t.message_id.clone(), t.release);
        events.extend(e);
        truth.push(t);
    }
    Ok(SynthOutput {
        events,
        releases,
        truth,
        shape,
        noise_floor: config.noise_floor,
        granularity_seconds: g,
        horizon_bins: config.horizon_bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::average;

    fn small(n: usize, seed: u64) -> SynthConfig {
        SynthConfig {
            horizon_bins: 400,
            ..SynthConfig::wechat(n, seed)
        }
    }

    #[test]
    fn wechat_preset_peaks_near_half_hour() {
        let c = SynthConfig::wechat(1, 0);
        let shape = Shape::normalize(&c.shape, c.horizon_bins).unwrap();
        assert!((25..=35).contains(&shape.peak_bin), "peak {}", shape.peak_bin);
    }

    #[test]
    fn weibo_preset_peaks_near_200_seconds() {
        let c = SynthConfig::weibo(1, 0);
        let shape = Shape::normalize(&c.shape, c.horizon_bins).unwrap();
        let peak_s = shape.peak_bin as u64 * c.granularity_seconds;
        assert!((150..=250).contains(&peak_s), "peak at {peak_s} s");
    }

    #[test]
    fn zero_mean_yields_no_events() {
        let c = SynthConfig {
            n_messages: 1,
            horizon_bins: 1,
            noise_floor: 0.0,
            scale: ScaleDistribution {
                mu: -800.0,
                sigma: 0.0,
            },
            ..SynthConfig::wechat(1, 0)
        };
        let out = generate(&c).unwrap();
        assert!(out.events.is_empty());
        assert_eq!(out.truth[0].realized_total, 0);
    }

    #[test]
    fn same_seed_same_output() {
        let a = generate(&small(40, 9)).unwrap();
        let b = generate(&small(40, 9)).unwrap();
        assert_eq!(a, b);
        let c = generate(&small(40, 10)).unwrap();
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn prefix_of_messages_is_stable() {
        // per-message streams: adding messages does not perturb earlier ones
        let a = generate(&small(10, 5)).unwrap();
        let b = generate(&small(20, 5)).unwrap();
        assert_eq!(a.truth[..], b.truth[..10]);
    }

    #[test]
    fn events_are_canonically_ordered_and_inside_their_bins() {
        let out = generate(&small(30, 1)).unwrap();
        for w in out.events.windows(2) {
            assert!((&*w[0].message_id, w[0].timestamp) <= (&*w[1].message_id, w[1].timestamp));
        }
        let corpus = out.corpus();
        assert!(corpus.events.iter().all(|e| e.timestamp < 400 * 60));
    }

    #[test]
    fn average_peaks_at_shape_peak() {
        let c = SynthConfig {
            noise_floor: 0.0,
            scale: ScaleDistribution {
                mu: 1000f64.ln(),
                sigma: 0.0,
            },
            ..small(500, 2)
        };
        let out = generate(&c).unwrap();
        let set = out.corpus().bin(c.granularity_seconds, c.horizon_bins).unwrap();
        let avg = average(set.series.values()).unwrap();
        let (_, peak) = avg.peak();
        assert!(peak.abs_diff(out.shape.peak_bin) <= 1, "avg peak {peak}, shape peak {}", out.shape.peak_bin);
    }

    #[test]
    fn average_converges_to_mean_curve() {
        let c = SynthConfig {
            scale: ScaleDistribution { mu: 2.0, sigma: 0.5 },
            noise_floor: 0.05,
            horizon_bins: 120,
            ..SynthConfig::wechat(2000, 4)
        };
        let out = generate(&c).unwrap();
        let set = out.corpus().bin(c.granularity_seconds, c.horizon_bins).unwrap();
        let avg = average(set.series.values()).unwrap();
        let mean_scale = (c.scale.mu + 0.5 * c.scale.sigma * c.scale.sigma).exp();
        let expected: Vec<f64> = (1..=c.horizon_bins)
            .map(|t| mean_scale * out.shape.at(t) + c.noise_floor)
            .collect();
        let sup = expected.iter().copied().fold(0.0, f64::max);
        let worst = avg
            .values
            .iter()
            .zip(&expected)
            .map(|(a, e)| (a - e).abs())
            .fold(0.0, f64::max);
        assert!(worst / sup < 0.05, "sup-norm relative error {}", worst / sup);
    }

    #[test]
    fn message_totals_match_expected_mean() {
        let c = SynthConfig {
            scale: ScaleDistribution { mu: 1.5, sigma: 0.0 },
            ..small(400, 8)
        };
        let out = generate(&c).unwrap();
        let expected = out.truth[0].expected_total;
        let totals: Vec<f64> = out.truth.iter().map(|t| t.realized_total as f64).collect();
        let n = totals.len() as f64;
        let mean = totals.iter().sum::<f64>() / n;
        let sd = (totals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mean - expected).abs() < 3.0 * sd / n.sqrt(), "mean {mean} vs {expected}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate(&SynthConfig { n_messages: 0, ..small(1, 0) }).is_err());
        let bad_scale = SynthConfig {
            scale: ScaleDistribution { mu: 0.0, sigma: -1.0 },
            ..small(1, 0)
        };
        assert!(generate(&bad_scale).is_err());
    }
}
