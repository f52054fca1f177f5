use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn series(values: Vec<f64>) -> AverageSeries {
    AverageSeries {
        granularity_seconds: 60,
        values,
        n_messages: 1,
    }
}

fn sample(p: &BiHillParams, n: usize) -> Vec<f64> {
    (1..=n).map(|t| p.at(t as f64)).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn max_rel_err(a: &BiHillParams, b: &BiHillParams) -> f64 {
    [
        rel(a.p_m, b.p_m),
        rel(a.k_a, b.k_a),
        rel(a.h_a, b.h_a),
        rel(a.k_d, b.k_d),
        rel(a.h_d, b.h_d),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

fn truth() -> BiHillParams {
    BiHillParams::new(50.0, 12.0, 2.5, 60.0, 1.3).unwrap()
}

#[test]
fn exact_samples_are_recovered() {
    let t = truth();
    let report = fit_bihill(&series(sample(&t, 2000)), None, &FitOptions::default()).unwrap();
    assert!(report.converged);
    assert!(report.rss < 1e-12, "rss {}", report.rss);
    assert!(max_rel_err(&report.params, &t) < 1e-4, "{:?}", report.params);
    assert_eq!(report.route, FitRoute::NonlinearLs);
}

#[test]
fn init_at_optimum_is_a_fixed_point() {
    let t = truth();
    let avg = series(sample(&t, 2000));
    let report = fit_bihill(&avg, Some(&t), &FitOptions::default()).unwrap();
    assert!(report.converged);
    assert!(report.iterations <= 2, "iterations {}", report.iterations);
    assert!(report.rss < 1e-12);
}

#[test]
fn noisy_samples_recovered_in_most_seeds() {
    let t = truth();
    let clean = sample(&t, 2000);
    let peak = clean.iter().copied().fold(0.0, f64::max);
    let noise = Normal::new(0.0, 0.01 * peak).unwrap();
    let mut passed = 0;
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // clip at zero: the series is an average of counts
        let noisy: Vec<f64> = clean.iter().map(|v| (v + noise.sample(&mut rng)).max(0.0)).collect();
        let report = fit_bihill(&series(noisy), None, &FitOptions::default()).unwrap();
        if max_rel_err(&report.params, &t) < 0.05 {
            passed += 1;
        }
    }
    assert!(passed >= 27, "passed {passed}/30");
}

#[test]
fn rss_is_scale_equivariant() {
    let t = truth();
    let base = sample(&t, 800);
    let a = fit_bihill(&series(base.clone()), None, &FitOptions::default()).unwrap();
    let c = 37.5;
    let b = fit_bihill(&series(base.iter().map(|v| v * c).collect()), None, &FitOptions::default()).unwrap();
    assert!(rel(b.params.p_m, c * a.params.p_m) < 1e-6);
    assert!(rel(b.params.k_a, a.params.k_a) < 1e-6);
    assert!(rel(b.params.h_a, a.params.h_a) < 1e-6);
    assert!(rel(b.params.k_d, a.params.k_d) < 1e-6);
    assert!(rel(b.params.h_d, a.params.h_d) < 1e-6);
}

#[test]
fn time_rescaling_moves_half_points_only() {
    // Sampling the curve at t = s * j and fitting against j yields K / s.
    let t = BiHillParams::new(20.0, 30.0, 2.0, 240.0, 1.1).unwrap();
    let s = 3.0;
    let values: Vec<f64> = (1..=1500).map(|j| t.at(s * j as f64)).collect();
    let report = fit_bihill(&series(values), None, &FitOptions::default()).unwrap();
    let p = report.params;
    assert!(rel(p.k_a, t.k_a / s) < 1e-4, "{p:?}");
    assert!(rel(p.k_d, t.k_d / s) < 1e-4);
    assert!(rel(p.h_a, t.h_a) < 1e-4);
    assert!(rel(p.h_d, t.h_d) < 1e-4);
}

#[test]
fn inverse_variance_weighting_still_recovers_exact_data() {
    let t = truth();
    let opts = FitOptions {
        weighting: Weighting::InverseVariance,
    };
    let report = fit_bihill(&series(sample(&t, 1000)), None, &opts).unwrap();
    assert!(max_rel_err(&report.params, &t) < 1e-4);
}

#[test]
fn degenerate_series_are_rejected() {
    assert!(matches!(
        fit_bihill(&series(vec![3.0; 10]), None, &FitOptions::default()),
        Err(Error::Degenerate(_))
    ));
    assert!(fit_bihill(&series(vec![0.0; 10]), None, &FitOptions::default()).is_err());
    assert!(fit_bihill(&series(vec![]), None, &FitOptions::default()).is_err());
}

/// Peak value `q_max` at `peak`, rate-form branches elsewhere.
fn two_branch(q_max: f64, peak: usize, n: usize, rise: (f64, f64), decay: (f64, f64)) -> Vec<f64> {
    (1..=n)
        .map(|t| {
            let tf = t as f64;
            match t.cmp(&peak) {
                std::cmp::Ordering::Less => q_max / (1.0 + rise.0 * tf.powf(rise.1)),
                std::cmp::Ordering::Equal => q_max,
                std::cmp::Ordering::Greater => q_max / (1.0 + decay.0 * tf.powf(decay.1)),
            }
        })
        .collect()
}

#[test]
fn powerlaw_pure_decay_is_exact() {
    let values = two_branch(10.0, 1, 500, (0.0, 0.0), (0.5, 1.0));
    let fit = fit_r_powerlaw(&series(values)).unwrap();
    assert!(fit.rising.is_none());
    let d = fit.decaying.unwrap();
    assert!((d.k - 0.5).abs() < 1e-9 * 0.5, "k {}", d.k);
    assert!((d.h - 1.0).abs() < 1e-9, "h {}", d.h);
    assert!((d.r2 - 1.0).abs() < 1e-12);
    assert_eq!(d.n_points, 499);
    assert_eq!(fit.peak_bin, 1);
}

#[test]
fn powerlaw_two_branches_are_exact() {
    let values = two_branch(42.0, 20, 3000, (80.0, -1.7), (0.003, 1.25));
    let fit = fit_r_powerlaw(&series(values)).unwrap();
    let r = fit.rising.unwrap();
    let d = fit.decaying.unwrap();
    assert!(rel(r.k, 80.0) < 1e-9 && (r.h + 1.7).abs() < 1e-9);
    assert!(rel(d.k, 0.003) < 1e-9 && (d.h - 1.25).abs() < 1e-9);
    assert_eq!(r.n_points, 19);
    assert_eq!(fit.excluded_bins, 1);
}

#[test]
fn powerlaw_flat_series_has_no_branches() {
    let fit = fit_r_powerlaw(&series(vec![4.0; 30])).unwrap();
    assert!(fit.rising.is_none() && fit.decaying.is_none());
    assert_eq!(fit.excluded_bins, 30);
}

#[test]
fn powerlaw_ties_use_earliest_peak() {
    let fit = fit_r_powerlaw(&series(vec![1.0, 5.0, 2.0, 5.0, 1.0, 0.5])).unwrap();
    assert_eq!(fit.peak_bin, 2);
    // bins 1 | 3, 5, 6 usable; 2 and 4 have r = 0
    assert_eq!(fit.excluded_bins, 2);
    assert!(fit.rising.is_none());
    assert_eq!(fit.decaying.unwrap().n_points, 3);
}

#[test]
fn powerlaw_skips_zero_bins() {
    let fit = fit_r_powerlaw(&series(vec![0.0, 1.0, 4.0, 2.0, 0.0, 1.0])).unwrap();
    assert_eq!(fit.excluded_bins, 3);
}

#[test]
fn powerlaw_recovers_branch_exponents_of_clean_bihill() {
    // Steep activation and a long tail keep both branches close to their
    // asymptotic power laws over most of their bins.
    let t = BiHillParams::new(1.0, 2.0, 8.0, 10.0, 2.0).unwrap();
    let fit = fit_r_powerlaw(&series(sample(&t, 2000))).unwrap();
    let r = fit.rising.unwrap();
    let d = fit.decaying.unwrap();
    assert!(rel(-r.h, t.h_a) < 0.05, "rising h {}", r.h);
    assert!(rel(d.h, t.h_d) < 0.05, "decaying h {}", d.h);
}

#[test]
fn r_index_route_yields_a_usable_curve() {
    let t = BiHillParams::new(1.0, 2.0, 8.0, 10.0, 2.0).unwrap();
    let report = fit_by_r_index(&series(sample(&t, 2000))).unwrap();
    assert_eq!(report.route, FitRoute::RIndexRegression);
    report.params.validate().unwrap();
    assert!(report.rss.is_finite());
    let nls = fit_bihill(&series(sample(&t, 2000)), None, &FitOptions::default()).unwrap();
    assert!(nls.rss <= report.rss);
}

#[test]
fn fitting_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let noise = Normal::new(0.0, 0.2).unwrap();
    let values: Vec<f64> = sample(&truth(), 600)
        .into_iter()
        .map(|v| (v + noise.sample(&mut rng)).max(0.0))
        .collect();
    let a = fit_bihill(&series(values.clone()), None, &FitOptions::default()).unwrap();
    let b = fit_bihill(&series(values), None, &FitOptions::default()).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn lm_objective_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let values: Vec<f64> = sample(&truth(), 400)
        .into_iter()
        .map(|v| (v + noise.sample(&mut rng)).max(0.0))
        .collect();
    let problem = lm::Problem::new(&values, None);
    for init in [
        BiHillParams::new(10.0, 3.0, 1.0, 100.0, 1.0).unwrap(),
        BiHillParams::new(200.0, 40.0, 4.0, 20.0, 0.5).unwrap(),
    ] {
        let out = problem.solve(&init);
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*out.history.last().unwrap(), out.objective);
    }
}
