//! Damped Gauss-Newton for the five-parameter BiHill curve.
//!
//! The solver works on `x = ln(P_m, K_a, H_a, K_d, H_d)` so every iterate
//! maps back to strictly positive parameters. Damping is Marquardt-style
//! (`lambda * diag(J^T J)`), which makes the iteration invariant to a
//! rescaling of the data.

use nalgebra::{SMatrix, SVector};

use crate::model::{logistic, softplus, BiHillParams};

type Vec5 = SVector<f64, 5>;
type Mat5 = SMatrix<f64, 5, 5>;

pub const MAX_ITERATIONS: usize = 10_000;
pub const RSS_RTOL: f64 = 1e-10;
pub const PARAM_RTOL: f64 = 1e-8;

const LAMBDA_INIT: f64 = 1e-3;
const LAMBDA_MIN: f64 = 1e-12;
const LAMBDA_MAX: f64 = 1e16;

// Box on the log parameters: exponents in [1e-3, 100], half-points in
// [e^-20, e^30]. Keeps trial steps from wandering into overflow.
const LO: [f64; 5] = [-700.0, -20.0, -6.907_755_278_982_137, -20.0, -6.907_755_278_982_137];
const HI: [f64; 5] = [700.0, 30.0, 4.605_170_185_988_092, 30.0, 4.605_170_185_988_092];

pub(crate) struct Problem<'a> {
    ln_t: Vec<f64>,
    y: &'a [f64],
    sqrt_w: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub params: BiHillParams,
    /// Weighted objective at exit.
    pub objective: f64,
    /// Objective at the start and after every accepted step.
    #[cfg_attr(not(test), allow(dead_code))]
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub(crate) fn to_log(p: &BiHillParams) -> Vec5 {
    let x = Vec5::new(p.p_m.ln(), p.k_a.ln(), p.h_a.ln(), p.k_d.ln(), p.h_d.ln());
    clamp(x)
}

pub(crate) fn from_log(x: &Vec5) -> BiHillParams {
    BiHillParams {
        p_m: x[0].exp(),
        k_a: x[1].exp(),
        h_a: x[2].exp(),
        k_d: x[3].exp(),
        h_d: x[4].exp(),
    }
}

fn clamp(mut x: Vec5) -> Vec5 {
    for i in 0..5 {
        x[i] = x[i].clamp(LO[i], HI[i]);
    }
    x
}

impl<'a> Problem<'a> {
    /// Samples `y[i]` at `t = i + 1`.
    pub fn new(y: &'a [f64], weights: Option<&[f64]>) -> Self {
        Self {
            ln_t: (1..=y.len()).map(|t| (t as f64).ln()).collect(),
            y,
            sqrt_w: weights.map(|w| w.iter().map(|v| v.sqrt()).collect()),
        }
    }

    fn sw(&self, i: usize) -> f64 {
        self.sqrt_w.as_ref().map_or(1.0, |w| w[i])
    }

    pub fn objective(&self, x: &Vec5) -> f64 {
        let (ln_p, ln_ka, ha, ln_kd, hd) = (x[0], x[1], x[2].exp(), x[3], x[4].exp());
        let mut rss = 0.0;
        for (i, &lt) in self.ln_t.iter().enumerate() {
            let u = ha * (ln_ka - lt);
            let v = hd * (lt - ln_kd);
            let f = (ln_p - softplus(u) - softplus(v)).exp();
            let r = self.sw(i) * (self.y[i] - f);
            rss += r * r;
        }
        rss
    }

    /// Normal equations `(J^T J, J^T r)` at `x`.
    fn normal_equations(&self, x: &Vec5) -> (Mat5, Vec5) {
        let (ln_p, ln_ka, ha, ln_kd, hd) = (x[0], x[1], x[2].exp(), x[3], x[4].exp());
        let mut a = Mat5::zeros();
        let mut g = Vec5::zeros();
        for (i, &lt) in self.ln_t.iter().enumerate() {
            let u = ha * (ln_ka - lt);
            let v = hd * (lt - ln_kd);
            let f = (ln_p - softplus(u) - softplus(v)).exp();
            let sa = logistic(u);
            let sd = logistic(v);
            let sw = self.sw(i);
            let row = Vec5::new(f, -f * sa * ha, -f * sa * u, f * sd * hd, -f * sd * v) * sw;
            let r = sw * (self.y[i] - f);
            a += row * row.transpose();
            g += row * r;
        }
        (a, g)
    }

    pub fn solve(&self, init: &BiHillParams) -> Outcome {
        let mut x = to_log(init);
        let mut obj = self.objective(&x);
        let mut lambda = LAMBDA_INIT;
        let mut converged = false;
        let mut iterations = 0;
        let mut history = vec![obj];

        while iterations < MAX_ITERATIONS {
            if obj == 0.0 {
                converged = true;
                break;
            }
            iterations += 1;
            let (a, g) = self.normal_equations(&x);
            let max_diag = (0..5).map(|i| a[(i, i)]).fold(0.0, f64::max);
            if !(max_diag > 0.0) || !max_diag.is_finite() {
                break;
            }
            // Gradient small relative to the curvature scale: stationary.
            let gnorm = (0..5)
                .map(|i| g[i].abs() / (a[(i, i)].max(1e-300) * obj).sqrt())
                .fold(0.0, f64::max);
            if gnorm < 1e-14 {
                converged = true;
                break;
            }

            let mut damped = a;
            for i in 0..5 {
                damped[(i, i)] += lambda * a[(i, i)].max(1e-12 * max_diag);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&g)) else {
                lambda *= 4.0;
                if lambda > LAMBDA_MAX {
                    break;
                }
                continue;
            };
            let trial = clamp(x + step);
            let step_rel = (trial - x).amax();
            let trial_obj = self.objective(&trial);

            if trial_obj.is_finite() && trial_obj < obj {
                let rel = (obj - trial_obj) / obj;
                x = trial;
                obj = trial_obj;
                history.push(obj);
                lambda = (lambda / 3.0).max(LAMBDA_MIN);
                if rel < RSS_RTOL || step_rel < PARAM_RTOL {
                    converged = true;
                    break;
                }
            } else {
                if step_rel < PARAM_RTOL && gauss_newton_step(&a, &g).is_some_and(|s| s < 1e3 * PARAM_RTOL) {
                    // even the nearly undamped step is negligible: stationary
                    converged = true;
                    break;
                }
                lambda *= 4.0;
                if lambda > LAMBDA_MAX {
                    break;
                }
            }
        }

        Outcome {
            params: from_log(&x),
            objective: obj,
            history,
            iterations,
            converged,
        }
    }
}

/// Size of the lightly damped step, `None` if the system is singular.
fn gauss_newton_step(a: &Mat5, g: &Vec5) -> Option<f64> {
    let max_diag = (0..5).map(|i| a[(i, i)]).fold(0.0, f64::max);
    let mut damped = *a;
    for i in 0..5 {
        damped[(i, i)] += LAMBDA_MIN * a[(i, i)].max(1e-12 * max_diag);
    }
    damped.cholesky().map(|c| c.solve(g).amax())
}
