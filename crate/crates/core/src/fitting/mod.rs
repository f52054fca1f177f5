//! Estimating the population BiHill shape from an average series.
//!
//! Two routes are provided:
//!
//! - [`fit_r_powerlaw`] / [`fit_by_r_index`]: split the peak-proximity
//!   index at the peak and regress `ln r` on `ln t` on each side. Each side
//!   is a power law `r = K t^H`, negative `H` before the peak and positive
//!   after it.
//! - [`fit_bihill`]: direct nonlinear least squares on the BiHill curve,
//!   seeded from the first route plus a fixed multi-start grid.

mod lm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::AverageSeries;
use crate::model::{r_index, BiHillParams};

pub use lm::{MAX_ITERATIONS, PARAM_RTOL, RSS_RTOL};

/// `r(t) = k * t^h` fitted by least squares in log-log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub k: f64,
    pub h: f64,
    /// Coefficient of determination of the log-log regression.
    pub r2: f64,
    pub n_points: usize,
}

/// Both branches of the peak-proximity index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexFit {
    /// Bins before the peak; `None` when fewer than two usable points.
    pub rising: Option<PowerLawFit>,
    /// Bins after the peak; `None` when fewer than two usable points.
    pub decaying: Option<PowerLawFit>,
    /// Earliest bin attaining the maximum (1-based).
    pub peak_bin: usize,
    /// Bins skipped because `q = 0` or `r = 0`.
    pub excluded_bins: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitRoute {
    RIndexRegression,
    NonlinearLs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    #[default]
    Uniform,
    /// Weight each bin by `1 / q(t)`, the inverse of a Poisson variance.
    InverseVariance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub params: BiHillParams,
    pub rss: f64,
    pub iterations: usize,
    pub converged: bool,
    pub route: FitRoute,
}

fn ols_loglog(points: &[(f64, f64)]) -> Option<PowerLawFit> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), &(t, r)| (a + t.ln(), b + r.ln()));
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(t, r) in points {
        let dx = t.ln() - mx;
        let dy = r.ln() - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx <= 0.0 {
        return None;
    }
    let h = sxy / sxx;
    let intercept = my - h * mx;
    let ss_res: f64 = points
        .iter()
        .map(|&(t, r)| {
            let e = r.ln() - (intercept + h * t.ln());
            e * e
        })
        .sum();
    let r2 = if syy > 0.0 {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Some(PowerLawFit {
        k: intercept.exp(),
        h,
        r2,
        n_points: points.len(),
    })
}

/// Split the peak-proximity index at the earliest peak and fit a power law
/// to each side.
pub fn fit_r_powerlaw(avg: &AverageSeries) -> Result<IndexFit> {
    let points = r_index(&avg.values)?;
    let (_, peak_bin) = avg.peak();
    let mut rising = Vec::new();
    let mut decaying = Vec::new();
    let mut excluded = 0;
    for p in &points {
        if !p.usable {
            excluded += 1;
        } else if p.t < peak_bin {
            rising.push((p.t as f64, p.r));
        } else {
            decaying.push((p.t as f64, p.r));
        }
    }
    Ok(IndexFit {
        rising: ols_loglog(&rising),
        decaying: ols_loglog(&decaying),
        peak_bin,
        excluded_bins: excluded,
    })
}

impl IndexFit {
    /// Translate the branch fits into BiHill half-points and exponents.
    ///
    /// Before the peak `r ~ (K_a / t)^H_a`, after it `r ~ (t / K_d)^H_d`.
    /// Missing or wrongly signed branches yield `None` for that side.
    fn branches(&self) -> (Option<(f64, f64)>, Option<(f64, f64)>) {
        let act = self
            .rising
            .filter(|f| f.h < 0.0)
            .map(|f| (f.k.powf(-1.0 / f.h), -f.h));
        let dec = self
            .decaying
            .filter(|f| f.h > 0.0)
            .map(|f| (f.k.powf(-1.0 / f.h), f.h));
        (act, dec)
    }
}

fn validate_series(avg: &AverageSeries) -> Result<()> {
    if avg.values.is_empty() {
        return Err(Error::Empty("average series"));
    }
    if let Some(bad) = avg.values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::invalid(format!("average value {bad} is not finite and non-negative")));
    }
    let (max, _) = avg.peak();
    if max <= 0.0 {
        return Err(Error::Degenerate("average series has no positive value".into()));
    }
    if avg.values.iter().all(|&v| v == max) {
        return Err(Error::Degenerate("average series is flat".into()));
    }
    Ok(())
}

fn weights(avg: &AverageSeries, weighting: Weighting) -> Option<Vec<f64>> {
    match weighting {
        Weighting::Uniform => None,
        Weighting::InverseVariance => {
            let floor = avg
                .values
                .iter()
                .copied()
                .filter(|&v| v > 0.0)
                .fold(f64::INFINITY, f64::min);
            Some(avg.values.iter().map(|&v| 1.0 / v.max(floor)).collect())
        }
    }
}

/// Least-squares optimal `P_m` for the shape of `p` (linear in `P_m`).
fn best_scale(p: &BiHillParams, y: &[f64], w: Option<&[f64]>) -> f64 {
    let unit = p.with_scale(1.0);
    let (mut num, mut den) = (0.0, 0.0);
    for (i, &yi) in y.iter().enumerate() {
        let g = unit.at((i + 1) as f64);
        let wi = w.map_or(1.0, |w| w[i]);
        num += wi * yi * g;
        den += wi * g * g;
    }
    if den > 0.0 && num > 0.0 {
        num / den
    } else {
        p.p_m
    }
}

fn unweighted_rss(p: &BiHillParams, y: &[f64]) -> f64 {
    y.iter()
        .enumerate()
        .map(|(i, &v)| {
            let e = v - p.at((i + 1) as f64);
            e * e
        })
        .sum()
}

/// BiHill parameters taken straight from the two power-law branches, with
/// `P_m` set by linear least squares.
pub fn fit_by_r_index(avg: &AverageSeries) -> Result<FitReport> {
    validate_series(avg)?;
    let index = fit_r_powerlaw(avg)?;
    let (Some((k_a, h_a)), Some((k_d, h_d))) = index.branches() else {
        return Err(Error::Degenerate(
            "peak-proximity index lacks a usable rising or decaying branch".into(),
        ));
    };
    let shape = BiHillParams::new(1.0, k_a, h_a, k_d, h_d)?;
    let params = shape.with_scale(best_scale(&shape, &avg.values, None));
    Ok(FitReport {
        params,
        rss: unweighted_rss(&params, &avg.values),
        iterations: 0,
        converged: true,
        route: FitRoute::RIndexRegression,
    })
}

/// Deterministic list of starting points.
fn starts(avg: &AverageSeries, y: &[f64], w: Option<&[f64]>) -> Vec<BiHillParams> {
    let (max, peak) = avg.peak();
    let p = peak as f64;
    let mut out = Vec::with_capacity(6);

    if let Ok(index) = fit_r_powerlaw(avg) {
        let (act, dec) = index.branches();
        if act.is_some() || dec.is_some() {
            let (k_a, h_a) = act.unwrap_or((p, 1.0));
            let (k_d, h_d) = dec.unwrap_or((p, 1.0));
            if let Ok(seed) = BiHillParams::new(4.0 * max, k_a, h_a, k_d, h_d) {
                out.push(seed);
            }
        }
    }

    // (K_a / peak, H_a, K_d / peak, H_d)
    const GRID: [(f64, f64, f64, f64); 5] = [
        (1.0, 1.0, 1.0, 1.0),
        (0.5, 2.0, 2.0, 1.0),
        (0.25, 1.0, 4.0, 1.0),
        (1.0, 3.0, 10.0, 0.7),
        (1.0 / 3.0, 1.5, 30.0, 1.5),
    ];
    for (ka, ha, kd, hd) in GRID {
        let shape = BiHillParams {
            p_m: 1.0,
            k_a: ka * p,
            h_a: ha,
            k_d: kd * p,
            h_d: hd,
        };
        out.push(shape.with_scale(best_scale(&shape, y, w)));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FitOptions {
    pub weighting: Weighting,
}

/// Fit the BiHill curve to `avg` by Levenberg-Marquardt.
///
/// Without `init`, every start from the fixed multi-start list is run in
/// order and the lowest objective wins (earliest on ties). With `init`, only
/// that start is used.
pub fn fit_bihill(avg: &AverageSeries, init: Option<&BiHillParams>, opts: &FitOptions) -> Result<FitReport> {
    validate_series(avg)?;
    if let Some(p) = init {
        p.validate()?;
    }
    let w = weights(avg, opts.weighting);
    let problem = lm::Problem::new(&avg.values, w.as_deref());

    let candidates = match init {
        Some(p) => vec![*p],
        None => starts(avg, &avg.values, w.as_deref()),
    };
    let mut best: Option<lm::Outcome> = None;
    for start in &candidates {
        let out = problem.solve(start);
        if !out.objective.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|b| out.objective < b.objective) {
            best = Some(out);
        }
    }
    let best = best.ok_or_else(|| Error::Degenerate("no start produced a finite objective".into()))?;
    Ok(FitReport {
        params: best.params,
        rss: unweighted_rss(&best.params, &avg.values),
        iterations: best.iterations,
        converged: best.converged,
        route: FitRoute::NonlinearLs,
    })
}

/// Fit by the requested route.
pub fn fit(avg: &AverageSeries, route: FitRoute, opts: &FitOptions) -> Result<FitReport> {
    match route {
        FitRoute::RIndexRegression => fit_by_r_index(avg),
        FitRoute::NonlinearLs => fit_bihill(avg, None, opts),
    }
}

#[cfg(test)]
mod tests;
