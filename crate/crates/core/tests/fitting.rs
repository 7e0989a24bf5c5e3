use aplab_core::extract::histogram_from_intervals;
use aplab_core::fit::{
    init_heuristic, levenberg_marquardt, multistart_fit, FitProblem, SinhcAxis, Termination, SSE_ROUNDING, Weighting,
};
use aplab_core::models::{ExpComponent, ModelFamily, ModelParams, MultiExpParams, SinhcParams};
use aplab_core::sim::{dark_rate_for_extra_fraction, simulate_periods, DetectorConfig, TrapModel};
use aplab_core::stats::model_probabilities;
use aplab_core::ResponseHistogram;

/// Histogram whose normalized counts equal the model's bin probabilities to
/// about 1e-15. The model is rescaled so its bin probabilities sum to one.
fn noiseless(params: &ModelParams, n_bins: usize) -> (ResponseHistogram, ModelParams) {
    let cfg = DetectorConfig::default();
    let mut h = ResponseHistogram { counts: vec![0; n_bins], n_periods: 1, ..ResponseHistogram::empty(&cfg) };
    let mass: f64 = model_probabilities(&h, params).iter().sum();
    let mut x = params.to_vec();
    match params {
        ModelParams::MultiExp(me) => {
            for i in 0..me.components.len() {
                x[2 * i] /= mass;
            }
        }
        ModelParams::Sinhc(_) => x[0] /= mass,
        ModelParams::PowerLaw(_) => x[0] /= mass,
    }
    *x.last_mut().unwrap() /= mass;
    let truth = ModelParams::from_vec(params.family(), &x);
    let scale = 1e15;
    h.counts = model_probabilities(&h, &truth).iter().map(|q| (q * scale).round() as u64).collect();
    h.n_total = h.counts.iter().sum();
    h.n_periods = h.n_total * 80;
    h.p_ad_hat = 0.0125;
    (h, truth)
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn reference_histogram(periods: u64, seed: u64) -> ResponseHistogram {
    let cfg = DetectorConfig::default();
    let v = dark_rate_for_extra_fraction(&cfg, 0.0087, 0.0113);
    let model = TrapModel::continuum(0.0087, 0.017, 2.0, v);
    histogram_from_intervals(&simulate_periods(&cfg, &model, periods, seed).unwrap().intervals, &cfg).unwrap()
}

#[test]
fn noiseless_sinhc_from_truth() {
    let p = ModelParams::Sinhc(SinhcParams::from_limits(0.16, 0.017, 2.0, 0.006));
    let (h, truth) = noiseless(&p, 15_978);
    let prob = FitProblem::new(h, ModelFamily::Sinhc, 0).unwrap();
    let init = prob.free_from_params(&truth);
    let out = levenberg_marquardt(&prob, &init).unwrap();
    for (a, b) in out.free.iter().zip(&init) {
        assert!(rel(*a, *b) < 1e-8, "{:?} vs {:?}", out.free, init);
    }
}

#[test]
fn noiseless_two_exponentials_from_doubled_init() {
    let p = ModelParams::MultiExp(MultiExpParams::new(
        vec![ExpComponent { u: 0.3, tau: 0.05 }, ExpComponent { u: 0.2, tau: 0.8 }],
        0.004,
    ));
    let (h, truth) = noiseless(&p, 15_978);
    let prob = FitProblem::new(h, ModelFamily::MultiExp, 2).unwrap();
    let exact = prob.free_from_params(&truth);
    let init: Vec<f64> = exact.iter().enumerate().map(|(i, x)| if i % 2 == 0 { x * 2.0 } else { x / 2.0 }).collect();
    let out = levenberg_marquardt(&prob, &init).unwrap();
    assert!(out.converged, "{:?}", out.termination);
    for (a, b) in out.free.iter().zip(&exact) {
        assert!(rel(*a, *b) < 1e-6, "{:?} vs {:?}", out.free, exact);
    }
}

#[test]
fn argmin_invariant_under_count_rescaling() {
    let h = reference_histogram(2_000_000, 31);
    let a = multistart_fit(&FitProblem::new(h.clone(), ModelFamily::Sinhc, 0).unwrap(), 3, 1).unwrap();
    let b = multistart_fit(&FitProblem::new(h.scaled(7), ModelFamily::Sinhc, 0).unwrap(), 3, 1).unwrap();
    for (x, y) in a.free.iter().zip(&b.free) {
        assert!(rel(*x, *y) < 1e-7, "{:?} vs {:?}", a.free, b.free);
    }
}

#[test]
fn sinhc_axes_agree() {
    let h = reference_histogram(2_000_000, 32);
    let limits = FitProblem::new(h.clone(), ModelFamily::Sinhc, 0).unwrap();
    let rates = limits.clone().with_sinhc_axis(SinhcAxis::Rates);
    // same starting density on both axes
    let start = ModelParams::Sinhc(SinhcParams::from_limits(0.12, 0.025, 1.5, 0.004));
    let a = levenberg_marquardt(&limits, &limits.free_from_params(&start)).unwrap();
    let b = levenberg_marquardt(&rates, &rates.free_from_params(&start)).unwrap();
    assert!(a.converged && b.converged);
    for i in 0..h.n_bins() {
        let t = h.bin_center(i);
        assert!(rel(b.params.pdf(t), a.params.pdf(t)) < 1e-6, "bin {i}");
    }
}

#[test]
fn sse_never_increases() {
    let h = reference_histogram(1_000_000, 33);
    for (family, k) in [(ModelFamily::Sinhc, 0), (ModelFamily::MultiExp, 3), (ModelFamily::PowerLaw, 0)] {
        let prob = FitProblem::new(h.clone(), family, k).unwrap();
        let out = levenberg_marquardt(&prob, &init_heuristic(&prob)).unwrap();
        assert!(out.sse_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + SSE_ROUNDING)), "{family}");
        assert_eq!(*out.sse_trace.last().unwrap(), out.sse);
    }
}

#[test]
fn lifetimes_come_out_sorted() {
    let h = reference_histogram(1_000_000, 34);
    let out = multistart_fit(&FitProblem::new(h, ModelFamily::MultiExp, 3).unwrap(), 4, 9).unwrap();
    let ModelParams::MultiExp(me) = &out.params else { panic!("family changed") };
    assert!(me.components.windows(2).all(|w| w[0].tau < w[1].tau));
    assert!(out.free.chunks(2).take(3).map(|c| c[1]).collect::<Vec<_>>().windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn single_start_is_plain_lm_from_heuristic() {
    let h = reference_histogram(500_000, 35);
    let prob = FitProblem::new(h, ModelFamily::Sinhc, 0).unwrap();
    let multi = multistart_fit(&prob, 1, 123).unwrap();
    let plain = levenberg_marquardt(&prob, &init_heuristic(&prob)).unwrap();
    assert_eq!(multi.free, plain.free);
    assert_eq!(multi.sse, plain.sse);
    assert_eq!(multi.start_index, 0);
}

#[test]
fn converged_means_gradient_criterion() {
    let h = reference_histogram(1_000_000, 36);
    let out = multistart_fit(&FitProblem::new(h, ModelFamily::Sinhc, 0).unwrap(), 5, 2).unwrap();
    assert!(out.converged);
    assert_eq!(out.termination, Termination::GradientTolerance);
    assert!(out.max_scaled_gradient < 1e-10);
}

#[test]
fn single_exponential_init_within_factor_three() {
    let cfg = DetectorConfig::default();
    let tau = 0.15;
    let model = TrapModel::discrete(vec![ExpComponent { u: 0.05, tau }], 1e-4);
    let h = histogram_from_intervals(&simulate_periods(&cfg, &model, 2_000_000, 4).unwrap().intervals, &cfg).unwrap();
    let prob = FitProblem::new(h, ModelFamily::MultiExp, 1).unwrap();
    let init = init_heuristic(&prob);
    assert!(init[1] > tau / 3.0 && init[1] < tau * 3.0, "tau init {}", init[1]);
}

#[test]
fn dark_rate_init_on_flat_histogram() {
    let cfg = DetectorConfig::default();
    let v = 0.001;
    let model = TrapModel::continuum(0.0, 0.017, 2.0, v);
    let h = histogram_from_intervals(&simulate_periods(&cfg, &model, 5_000_000, 5).unwrap().intervals, &cfg).unwrap();
    let prob = FitProblem::new(h.clone(), ModelFamily::Sinhc, 0).unwrap();
    let init = init_heuristic(&prob);
    // the normalized density of a flat histogram is 1/window
    let expected = 1.0 / h.window();
    assert!(rel(init[3], expected) < 0.1, "v init {} expected {}", init[3], expected);
}

#[test]
fn poisson_weighting_recovers_truth() {
    let h = reference_histogram(5_000_000, 37);
    let prob = FitProblem::new(h, ModelFamily::Sinhc, 0).unwrap().with_weighting(Weighting::Poisson);
    let out = multistart_fit(&prob, 3, 1).unwrap();
    let ModelParams::Sinhc(s) = out.params else { panic!() };
    assert!(rel(s.tau_min(), 0.017) < 0.1, "{}", s.tau_min());
    assert!(rel(s.tau_max(), 2.0) < 0.25, "{}", s.tau_max());
}
