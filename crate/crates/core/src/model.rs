//! Hill, BiHill and activation-decay curves.
//!
//! The canonical BiHill form used throughout the crate is the unimodal one:
//!
//! ```text
//! BiHill(t) = P_m / [(1 + (K_a / t)^H_a) * (1 + (t / K_d)^H_d)]
//! ```
//!
//! with all five parameters strictly positive. The first factor activates
//! (rises from 0 to 1), the second decays (falls from 1 to 0). Two other
//! surface forms are in common use and can be converted to and from exactly:
//! the rate form `1 / (1 + K t^H)` per factor ([`RateForm`]) and the ratio
//! form `1 / (1 + (K / t)^H)` per factor with signed exponents
//! ([`RatioForm`]).
//!
//! Time `t` is always the 1-based bin index in granularity units.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(t))
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be finite and > 0, got {v}")))
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// `e^x / (1 + e^x)` without overflow.
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Single Hill curve `p / (1 + (k / t)^h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HillParams {
    pub p: f64,
    pub k: f64,
    pub h: f64,
}

impl HillParams {
    pub fn new(p: f64, k: f64, h: f64) -> Result<Self> {
        positive("p", p)?;
        positive("k", k)?;
        if h == 0.0 || !h.is_finite() {
            return Err(Error::param("h", "must be finite and nonzero"));
        }
        Ok(Self { p, k, h })
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.p / (1.0 + (self.k / t).powf(self.h)))
    }
}

/// Unimodal BiHill parameters; see the module docs for the formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiHillParams {
    pub p_m: f64,
    pub k_a: f64,
    pub h_a: f64,
    pub k_d: f64,
    pub h_d: f64,
}

impl BiHillParams {
    pub fn new(p_m: f64, k_a: f64, h_a: f64, k_d: f64, h_d: f64) -> Result<Self> {
        let p = Self {
            p_m,
            k_a,
            h_a,
            k_d,
            h_d,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        positive("p_m", self.p_m)?;
        positive("k_a", self.k_a)?;
        positive("h_a", self.h_a)?;
        positive("k_d", self.k_d)?;
        positive("h_d", self.h_d)
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.at(t))
    }

    /// Unchecked evaluation; `t` must be positive.
    ///
    /// Computed in log space so extreme exponents neither overflow nor
    /// produce `inf / inf`.
    #[inline]
    pub fn at(&self, t: f64) -> f64 {
        debug_assert!(t > 0.0);
        let lt = t.ln();
        let u = self.h_a * (self.k_a.ln() - lt);
        let v = self.h_d * (lt - self.k_d.ln());
        self.p_m * (-softplus(u) - softplus(v)).exp()
    }

    /// `1 / (1 + (K_a / t)^H_a)`, rising from 0 to 1.
    pub fn activation_factor(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(logistic(-self.h_a * (self.k_a / t).ln()))
    }

    /// `1 / (1 + (t / K_d)^H_d)`, falling from 1 to 0.
    pub fn decay_factor(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(logistic(-self.h_d * (t / self.k_d).ln()))
    }

    /// Same curve with `P_m` replaced.
    pub fn with_scale(&self, p_m: f64) -> Self {
        Self { p_m, ..*self }
    }

    pub fn to_rate_form(&self) -> RateForm {
        RateForm {
            p_m: self.p_m,
            k_a: self.k_a.powf(self.h_a),
            h_a: -self.h_a,
            k_d: self.k_d.powf(-self.h_d),
            h_d: self.h_d,
        }
    }

    pub fn from_rate_form(f: &RateForm) -> Result<Self> {
        if !(f.h_a < 0.0) {
            return Err(Error::param("h_a", "activation exponent must be < 0 in rate form"));
        }
        if !(f.h_d > 0.0) {
            return Err(Error::param("h_d", "decay exponent must be > 0 in rate form"));
        }
        positive("k_a", f.k_a)?;
        positive("k_d", f.k_d)?;
        let h_a = -f.h_a;
        Self::new(
            f.p_m,
            f.k_a.powf(1.0 / h_a),
            h_a,
            f.k_d.powf(-1.0 / f.h_d),
            f.h_d,
        )
    }

    pub fn to_ratio_form(&self) -> RatioForm {
        RatioForm {
            p_m: self.p_m,
            k_a: self.k_a,
            h_a: self.h_a,
            k_i: self.k_d,
            h_i: -self.h_d,
        }
    }

    pub fn from_ratio_form(f: &RatioForm) -> Result<Self> {
        if !(f.h_i < 0.0) {
            return Err(Error::param(
                "h_i",
                "inhibitory exponent must be < 0 in ratio form for the curve to decay",
            ));
        }
        Self::new(f.p_m, f.k_a, f.h_a, f.k_i, -f.h_i)
    }
}

/// `P_m / [(1 + K_a t^H_a)(1 + K_d t^H_d)]` with `H_a < 0 < H_d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateForm {
    pub p_m: f64,
    pub k_a: f64,
    pub h_a: f64,
    pub k_d: f64,
    pub h_d: f64,
}

impl RateForm {
    pub fn eval(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.p_m / ((1.0 + self.k_a * t.powf(self.h_a)) * (1.0 + self.k_d * t.powf(self.h_d))))
    }
}

/// `P_m / [(1 + (K_a/t)^H_a)(1 + (K_i/t)^H_i)]` with `H_a > 0 > H_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioForm {
    pub p_m: f64,
    pub k_a: f64,
    pub h_a: f64,
    pub k_i: f64,
    pub h_i: f64,
}

impl RatioForm {
    pub fn eval(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.p_m
            / ((1.0 + (self.k_a / t).powf(self.h_a)) * (1.0 + (self.k_i / t).powf(self.h_i))))
    }
}

/// Per-message calibration: scale `alpha` and additive per-bin floor `e^beta`.
///
/// `beta = -inf` means no floor. It is persisted as JSON `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub alpha: f64,
    #[serde(with = "beta_serde")]
    pub beta: f64,
}

impl Calibration {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        positive("alpha", alpha)?;
        if beta.is_nan() || beta == f64::INFINITY {
            return Err(Error::param("beta", "must be finite or -inf"));
        }
        Ok(Self { alpha, beta })
    }

    /// Build from the floor value `e^beta` directly (`0` maps to `-inf`).
    pub fn from_floor(alpha: f64, floor: f64) -> Result<Self> {
        if !(floor >= 0.0) || !floor.is_finite() {
            return Err(Error::param("floor", "must be finite and >= 0"));
        }
        Self::new(alpha, if floor == 0.0 { f64::NEG_INFINITY } else { floor.ln() })
    }

    /// `e^beta`.
    pub fn floor(&self) -> f64 {
        self.beta.exp()
    }
}

mod beta_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(beta: &f64, s: S) -> Result<S::Ok, S::Error> {
        if beta.is_finite() {
            s.serialize_f64(*beta)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

/// BiHill shape rescaled so that its maximum over bins `1..=horizon` is 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub params: BiHillParams,
    pub peak_bin: usize,
}

impl Shape {
    /// Normalize `params` to unit peak over the integer grid `1..=horizon_bins`.
    pub fn normalize(params: &BiHillParams, horizon_bins: usize) -> Result<Self> {
        params.validate()?;
        if horizon_bins == 0 {
            return Err(Error::param("horizon_bins", "must be >= 1"));
        }
        let mut peak = (f64::NEG_INFINITY, 1usize);
        for t in 1..=horizon_bins {
            let v = params.at(t as f64);
            if v > peak.0 {
                peak = (v, t);
            }
        }
        if !(peak.0 > 0.0) {
            return Err(Error::Degenerate("shape underflows on the whole grid".into()));
        }
        Ok(Self {
            params: params.with_scale(params.p_m / peak.0),
            peak_bin: peak.1,
        })
    }

    #[inline]
    pub fn at(&self, t: usize) -> f64 {
        self.params.at(t as f64)
    }

    /// Tabulated shape values for bins `1..=horizon_bins`.
    pub fn table(&self, horizon_bins: usize) -> Vec<f64> {
        (1..=horizon_bins).map(|t| self.at(t)).collect()
    }
}

/// Activation-decay curve `alpha * q_max * shape(t) + e^beta`.
///
/// `shape` is expected to be unit-peak normalized (see [`Shape`]) so that
/// `q_max` is the peak scale.
pub fn ad_eval(shape: &BiHillParams, cal: &Calibration, q_max: f64, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(cal.alpha * q_max * shape.at(t) + cal.floor())
}

/// One point of the peak-proximity index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RPoint {
    /// 1-based bin.
    pub t: usize,
    /// `(q_max - q) / q`; infinite where `q = 0`.
    pub r: f64,
    /// False for `q = 0` and for peak bins (`r = 0`), which have no logarithm.
    pub usable: bool,
}

/// Peak-proximity index `r(t) = (q_max - q(t)) / q(t)` for every bin.
pub fn r_index(q: &[f64]) -> Result<Vec<RPoint>> {
    if q.is_empty() {
        return Err(Error::Empty("series"));
    }
    if let Some(bad) = q.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!("series value {bad} is not a finite non-negative number")));
    }
    let q_max = q.iter().copied().fold(0.0, f64::max);
    if q_max <= 0.0 {
        return Err(Error::Degenerate("all-zero series has no peak".into()));
    }
    Ok(q
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v == 0.0 {
                RPoint {
                    t: i + 1,
                    r: f64::INFINITY,
                    usable: false,
                }
            } else {
                let r = (q_max - v) / v;
                RPoint {
                    t: i + 1,
                    r,
                    usable: r > 0.0,
                }
            }
        })
        .collect())
}
