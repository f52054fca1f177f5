//! Log-linear early-popularity baseline.
//!
//! Popularity grows multiplicatively with a message-independent drift:
//! `ln N(t2) = ln N(t1) + growth(t1, t2) + noise`. The drift is estimated as
//! the mean cumulative log growth over training messages, with add-one
//! smoothing so silent messages contribute finite values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::BinnedSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogGrowthProfile {
    pub granularity_seconds: u64,
    pub t1_bins: usize,
    pub horizon_bins: usize,
    /// `cumulative_log_growth[k]` is the mean of
    /// `ln((N(t1 + k) + 1) / (N(t1) + 1))`, so entry 0 is always 0.
    pub cumulative_log_growth: Vec<f64>,
    pub n_train: usize,
}

impl LogGrowthProfile {
    /// Mean log growth from `t1` to `t2`.
    pub fn growth(&self, t2_bins: usize) -> Result<f64> {
        if t2_bins < self.t1_bins || t2_bins > self.horizon_bins {
            return Err(Error::invalid(format!(
                "t2 = {t2_bins} is outside the profile domain [{}, {}]",
                self.t1_bins, self.horizon_bins
            )));
        }
        Ok(self.cumulative_log_growth[t2_bins - self.t1_bins])
    }
}

pub fn fit_baseline(training: &[BinnedSeries], t1_bins: usize, horizon_bins: usize) -> Result<LogGrowthProfile> {
    let first = training.first().ok_or(Error::Empty("training set"))?;
    if t1_bins == 0 || t1_bins >= horizon_bins {
        return Err(Error::param(
            "t1_bins",
            format!("{t1_bins} must be in [1, {horizon_bins})"),
        ));
    }
    let span = horizon_bins - t1_bins;
    let mut sums = vec![0.0; span + 1];
    for s in training {
        if s.horizon_bins() < horizon_bins {
            return Err(Error::invalid(format!(
                "training series `{}` covers {} bins, need {horizon_bins}",
                s.message_id,
                s.horizon_bins()
            )));
        }
        if s.granularity_seconds != first.granularity_seconds {
            return Err(Error::invalid("mixed granularities in training set"));
        }
        let mut cum = s.cumulative(t1_bins);
        let base = ((cum + 1) as f64).ln();
        for (k, slot) in sums.iter_mut().enumerate().skip(1) {
            cum += s.counts[t1_bins + k - 1];
            *slot += ((cum + 1) as f64).ln() - base;
        }
    }
    let n = training.len() as f64;
    Ok(LogGrowthProfile {
        granularity_seconds: first.granularity_seconds,
        t1_bins,
        horizon_bins,
        cumulative_log_growth: sums.into_iter().map(|v| v / n).collect(),
        n_train: training.len(),
    })
}

/// Predicted cumulative count at `t2_bins` from the cumulative count at `t1`.
pub fn baseline_predict(profile: &LogGrowthProfile, series: &BinnedSeries, t2_bins: usize) -> Result<f64> {
    let growth = profile.growth(t2_bins)?;
    if series.horizon_bins() < profile.t1_bins {
        return Err(Error::invalid(format!(
            "series `{}` is shorter than the reference window",
            series.message_id
        )));
    }
    let n1 = series.cumulative(profile.t1_bins) as f64;
    Ok(predict_from_count(n1, growth))
}

pub(crate) fn predict_from_count(n1: f64, growth: f64) -> f64 {
    ((n1 + 1.0).ln() + growth).exp_m1().max(n1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn s(id: &str, counts: Vec<u64>) -> BinnedSeries {
        BinnedSeries::new(id, 60, counts)
    }

    #[test]
    fn flat_after_t1_gives_zero_profile() {
        let train = vec![s("a", vec![3, 2, 0, 0]), s("b", vec![0, 7, 0, 0])];
        let p = fit_baseline(&train, 2, 4).unwrap();
        assert_eq!(p.cumulative_log_growth, vec![0.0, 0.0, 0.0]);
        let pred = baseline_predict(&p, &s("c", vec![4, 1, 9, 9]), 4).unwrap();
        assert_eq!(pred, 5.0);
    }

    #[test]
    fn doubling_gives_ln2() {
        let train = vec![s("a", vec![1_000_000, 1_000_000])];
        let p = fit_baseline(&train, 1, 2).unwrap();
        assert!((p.growth(2).unwrap() - 2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn smoothing_arithmetic() {
        let p = LogGrowthProfile {
            granularity_seconds: 60,
            t1_bins: 1,
            horizon_bins: 2,
            cumulative_log_growth: vec![0.0, 3f64.ln()],
            n_train: 1,
        };
        let pred = baseline_predict(&p, &s("z", vec![0, 0]), 2).unwrap();
        assert!((pred - 2.0).abs() < 1e-12);
        assert!(baseline_predict(&p, &s("z", vec![0, 0]), 3).is_err());
        assert!(baseline_predict(&p, &s("z", vec![0, 0]), 0).is_err());
    }

    #[test]
    fn profile_matches_per_message_log_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let train: Vec<BinnedSeries> = (0..40)
            .map(|i| {
                let counts = (0..15).map(|_| rand::Rng::random_range(&mut rng, 0..30)).collect();
                s(&format!("m{i}"), counts)
            })
            .collect();
        let p = fit_baseline(&train, 4, 15).unwrap();
        for t2 in 4..=15 {
            let mut total = 0.0;
            for m in &train {
                let n1: u64 = m.counts[..4].iter().sum();
                let n2: u64 = m.counts[..t2].iter().sum();
                total += ((n2 as f64 + 1.0) / (n1 as f64 + 1.0)).ln();
            }
            let oracle = total / train.len() as f64;
            assert!((p.growth(t2).unwrap() - oracle).abs() < 1e-12, "t2 {t2}");
        }
    }

    #[test]
    fn empty_training_is_an_error() {
        assert!(matches!(fit_baseline(&[], 1, 2), Err(Error::Empty(_))));
        assert!(fit_baseline(&[s("a", vec![1, 2])], 2, 2).is_err());
    }

    #[test]
    fn prediction_monotone_in_early_count() {
        let train = vec![s("a", vec![2, 1, 5, 3]), s("b", vec![1, 0, 0, 9])];
        let p = fit_baseline(&train, 2, 4).unwrap();
        let mut last = -1.0;
        for n in 0..50 {
            let pred = baseline_predict(&p, &s("x", vec![n, 0, 0, 0]), 4).unwrap();
            assert!(pred >= last);
            last = pred;
        }
    }

    #[test]
    fn log_residuals_are_centered() {
        // Per-message multiplicative growth with i.i.d. log-normal noise;
        // fit on one corpus, check residual mean on an independent one.
        let growth = 1.8f64;
        let noise: Normal<f64> = Normal::new(0.0, 0.3).unwrap();
        let make = |seed: u64| -> Vec<BinnedSeries> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..1000)
                .map(|i| {
                    let n1 = 200 + (i % 50) * 40;
                    let n2 = (n1 as f64 * growth.exp() * noise.sample(&mut rng).exp()).round() as u64;
                    s(&format!("m{i}"), vec![n1, n2.saturating_sub(n1)])
                })
                .collect()
        };
        let p = fit_baseline(&make(1), 1, 2).unwrap();
        let test = make(2);
        let resid: Vec<f64> = test
            .iter()
            .map(|m| {
                let pred = baseline_predict(&p, m, 2).unwrap();
                ((m.total() + 1) as f64).ln() - (pred + 1.0).ln()
            })
            .collect();
        let n = resid.len() as f64;
        let mean = resid.iter().sum::<f64>() / n;
        let sd = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 3.0 * sd / n.sqrt(), "mean {mean}, se {}", sd / n.sqrt());
    }
}
