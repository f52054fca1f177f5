//! Forecast accuracy metrics over per-message predicted/real totals.
//!
//! APE is a fraction (`0.2` means 20%). Messages with a zero real total have
//! no APE; they are tallied and left out of APE, MAPE and the percentiles,
//! but still enter the Theil coefficient.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub message_id: String,
    pub predicted: f64,
    pub real: f64,
}

impl EvalPair {
    pub fn new(message_id: impl Into<String>, predicted: f64, real: f64) -> Self {
        Self {
            message_id: message_id.into(),
            predicted,
            real,
        }
    }

    /// `None` when the real total is zero.
    pub fn ape(&self) -> Option<f64> {
        ape(self.predicted, self.real).ok()
    }
}

/// `|predicted - real| / real`.
pub fn ape(predicted: f64, real: f64) -> Result<f64> {
    if real < 0.0 || !real.is_finite() {
        return Err(Error::invalid(format!("real value {real} must be finite and >= 0")));
    }
    if real == 0.0 {
        return Err(Error::ZeroReal);
    }
    Ok((predicted - real).abs() / real)
}

/// Mean APE over pairs with a nonzero real total.
pub fn mape(pairs: &[EvalPair]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for a in pairs.iter().filter_map(EvalPair::ape) {
        sum += a;
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoValidPairs);
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TicVariant {
    /// `RMS(p - r) / (RMS(p) + RMS(r))`: 0 for a perfect forecast.
    #[default]
    Standard,
    /// `RMS(p) / (RMS(p) + RMS(r))`: 0.5 for a perfect forecast.
    AsWritten,
}

fn rms(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v * v;
        n += 1;
    }
    ((sum / n as f64).sqrt(), n)
}

/// Theil inequality coefficient.
pub fn tic(pairs: &[EvalPair], variant: TicVariant) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation pairs"));
    }
    let (rms_p, _) = rms(pairs.iter().map(|p| p.predicted));
    let (rms_r, _) = rms(pairs.iter().map(|p| p.real));
    let denom = rms_p + rms_r;
    if denom == 0.0 {
        return Err(Error::Degenerate("predicted and real are all zero".into()));
    }
    let num = match variant {
        TicVariant::Standard => rms(pairs.iter().map(|p| p.predicted - p.real)).0,
        TicVariant::AsWritten => rms_p,
    };
    Ok(num / denom)
}

pub const DEFAULT_PERCENTILES: [u32; 3] = [50, 70, 90];

/// Nearest-rank percentiles of the APE distribution.
pub fn ape_percentiles(pairs: &[EvalPair], levels: &[u32]) -> Result<BTreeMap<u32, f64>> {
    let mut apes: Vec<f64> = pairs.iter().filter_map(EvalPair::ape).collect();
    if apes.is_empty() {
        return Err(Error::NoValidPairs);
    }
    apes.sort_by(f64::total_cmp);
    let n = apes.len();
    levels
        .iter()
        .map(|&level| {
            if level == 0 || level > 100 {
                return Err(Error::param("level", format!("{level} is not in 1..=100")));
            }
            // ceil(level/100 * n) in integer arithmetic
            let rank = (level as usize * n).div_ceil(100).max(1);
            Ok((level, apes[rank - 1]))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mape: f64,
    pub tic_standard: f64,
    pub tic_as_written: f64,
    pub ape_percentiles: BTreeMap<u32, f64>,
    pub n_evaluated: usize,
    pub n_excluded_zero_real: usize,
}

impl EvalSummary {
    pub fn tic(&self, variant: TicVariant) -> f64 {
        match variant {
            TicVariant::Standard => self.tic_standard,
            TicVariant::AsWritten => self.tic_as_written,
        }
    }
}

pub fn summarize(pairs: &[EvalPair]) -> Result<EvalSummary> {
    let n_excluded = pairs.iter().filter(|p| p.real == 0.0).count();
    Ok(EvalSummary {
        mape: mape(pairs)?,
        tic_standard: tic(pairs, TicVariant::Standard)?,
        tic_as_written: tic(pairs, TicVariant::AsWritten)?,
        ape_percentiles: ape_percentiles(pairs, &DEFAULT_PERCENTILES)?,
        n_evaluated: pairs.len() - n_excluded,
        n_excluded_zero_real: n_excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairs(v: &[(f64, f64)]) -> Vec<EvalPair> {
        v.iter()
            .enumerate()
            .map(|(i, &(p, r))| EvalPair::new(format!("m{i}"), p, r))
            .collect()
    }

    #[test]
    fn ape_examples() {
        assert!((ape(12.0, 10.0).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(ape(10.0, 10.0).unwrap(), 0.0);
        assert_eq!(ape(0.0, 10.0).unwrap(), 1.0);
        assert!(ape(1.0, 0.0).is_err());
    }

    #[test]
    fn mape_examples() {
        let p = pairs(&[(11.0, 10.0), (13.0, 10.0)]);
        assert!((mape(&p).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(mape(&pairs(&[(3.0, 3.0), (5.0, 5.0)])).unwrap(), 0.0);
        assert!(matches!(mape(&pairs(&[(3.0, 0.0)])), Err(Error::NoValidPairs)));
        // zero-real pairs are skipped
        assert_eq!(mape(&pairs(&[(3.0, 0.0), (2.0, 4.0)])).unwrap(), 0.5);
    }

    #[test]
    fn tic_examples() {
        let perfect = pairs(&[(3.0, 3.0), (7.0, 7.0), (1.0, 1.0)]);
        assert_eq!(tic(&perfect, TicVariant::Standard).unwrap(), 0.0);
        assert_eq!(tic(&perfect, TicVariant::AsWritten).unwrap(), 0.5);
        let zero = pairs(&[(0.0, 3.0), (0.0, 7.0)]);
        assert_eq!(tic(&zero, TicVariant::Standard).unwrap(), 1.0);
        assert_eq!(tic(&zero, TicVariant::AsWritten).unwrap(), 0.0);
        assert!(tic(&pairs(&[(0.0, 0.0)]), TicVariant::Standard).is_err());
        assert!(tic(&[], TicVariant::Standard).is_err());
    }

    #[test]
    fn percentile_examples() {
        let p = pairs(&[(1.1, 1.0), (1.2, 1.0), (1.3, 1.0)]);
        let apes: Vec<f64> = p.iter().map(|x| x.ape().unwrap()).collect();
        let pct = ape_percentiles(&p, &[50]).unwrap();
        assert_eq!(pct[&50], apes[1]);
        let single = pairs(&[(5.0, 4.0)]);
        let pct = ape_percentiles(&single, &DEFAULT_PERCENTILES).unwrap();
        assert!(pct.values().all(|&v| v == 0.25));
        assert!(ape_percentiles(&p, &[0]).is_err());
    }

    #[test]
    fn summary_counts_zero_real() {
        let p = pairs(&[(2.0, 0.0), (2.0, 4.0), (6.0, 4.0)]);
        let s = summarize(&p).unwrap();
        assert_eq!(s.n_evaluated, 2);
        assert_eq!(s.n_excluded_zero_real, 1);
        assert_eq!(s.mape, 0.5);
    }

    fn arb_pairs() -> impl Strategy<Value = Vec<(f64, f64)>> {
        proptest::collection::vec((0.0f64..1e4, 1.0f64..1e4), 1..60)
    }

    proptest! {
        #[test]
        fn mape_between_min_and_max_ape(v in arb_pairs()) {
            let p = pairs(&v);
            let apes: Vec<f64> = p.iter().filter_map(EvalPair::ape).collect();
            let m = mape(&p).unwrap();
            let lo = apes.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = apes.iter().copied().fold(0.0, f64::max);
            prop_assert!(m >= lo * (1.0 - 1e-12) && m <= hi * (1.0 + 1e-12));
        }

        #[test]
        fn tic_standard_bounded(v in arb_pairs()) {
            let t = tic(&pairs(&v), TicVariant::Standard).unwrap();
            prop_assert!((0.0..=1.0 + 1e-15).contains(&t));
            let w = tic(&pairs(&v), TicVariant::AsWritten).unwrap();
            prop_assert!((0.0..=1.0).contains(&w));
        }

        #[test]
        fn metrics_are_permutation_invariant(v in arb_pairs(), rot in 0usize..60) {
            let p = pairs(&v);
            let mut q = p.clone();
            q.rotate_left(rot % p.len());
            q.reverse();
            prop_assert!((mape(&p).unwrap() - mape(&q).unwrap()).abs() <= 1e-12 * mape(&p).unwrap().max(1e-300));
            for variant in [TicVariant::Standard, TicVariant::AsWritten] {
                let a = tic(&p, variant).unwrap();
                let b = tic(&q, variant).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-300));
            }
            prop_assert_eq!(ape_percentiles(&p, &DEFAULT_PERCENTILES).unwrap(), ape_percentiles(&q, &DEFAULT_PERCENTILES).unwrap());
        }

        #[test]
        fn metrics_are_scale_invariant(v in arb_pairs(), c in 0.01f64..100.0) {
            let p = pairs(&v);
            let scaled: Vec<EvalPair> = p.iter().map(|x| EvalPair::new(x.message_id.clone(), x.predicted * c, x.real * c)).collect();
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * a.abs().max(1e-12);
            prop_assert!(close(mape(&p).unwrap(), mape(&scaled).unwrap()));
            for variant in [TicVariant::Standard, TicVariant::AsWritten] {
                prop_assert!(close(tic(&p, variant).unwrap(), tic(&scaled, variant).unwrap()));
            }
        }

        #[test]
        fn percentiles_non_decreasing(v in arb_pairs()) {
            let pct = ape_percentiles(&pairs(&v), &DEFAULT_PERCENTILES).unwrap();
            prop_assert!(pct[&50] <= pct[&70] && pct[&70] <= pct[&90]);
        }

        #[test]
        fn tic_zero_iff_perfect(v in arb_pairs(), bump in 0usize..60) {
            let mut p = pairs(&v);
            for x in p.iter_mut() {
                x.predicted = x.real;
            }
            prop_assert_eq!(tic(&p, TicVariant::Standard).unwrap(), 0.0);
            let i = bump % p.len();
            p[i].predicted += 1.0;
            prop_assert!(tic(&p, TicVariant::Standard).unwrap() > 0.0);
        }
    }
}
