mod fixtures;

use addams_frailty::estimation::{aic, lrt, nested_lrt, Domain};
use addams_frailty::likelihood::PreparedData;
use addams_frailty::numdiff;
use addams_frailty::simulate::{CovariateLaw, CovariateSpec};
use addams_frailty::*;
use fixtures::*;

fn fit_default(spec: &ModelSpec, data: &CurrentStatusDataset) -> FittedModel {
    fit(spec, data, &FitOptions::default()).unwrap()
}

fn loglik_at(model: &FittedModel, data: &CurrentStatusDataset) -> impl Fn(&[f64]) -> f64 {
    let prepared = PreparedData::new(&model.template, data).unwrap();
    let template = model.template.clone();
    let layout = model.layout.clone();
    let theta = model.result.theta.clone();
    move |free: &[f64]| {
        let full = layout.expand(&theta, free);
        let spec = layout.apply(&template, &full).unwrap();
        total_loglik(&spec, &prepared).map_or(f64::NEG_INFINITY, |v| v.value)
    }
}

#[test]
fn near_independence_recovers_the_rate() {
    let rate = 0.03;
    let mut spec = pair_gamma_model(1e-8);
    for u in &mut spec.units {
        u.baselines = vec![Baseline::exponential(rate).unwrap()];
    }
    let data = simulate(&spec, 2000, 11);
    let opts = FitOptions { pins: vec![free_gamma_name().into()], init: Init::Template, ..Default::default() };
    let mut start = spec.clone();
    for u in &mut start.units {
        u.baselines = vec![Baseline::exponential(0.1).unwrap()];
    }
    let model = fit(&start, &data, &opts).unwrap();
    assert!(model.result.converged);
    for name in ["baseline[HPV16].log_rate", "baseline[HPV18].log_rate"] {
        let est = model.result.value(name).unwrap();
        let se = model.result.se(name).unwrap();
        assert!((est - rate.ln()).abs() < 3.0 * se, "{name}: {est} vs {} (se {se})", rate.ln());
    }
}

#[test]
fn recovers_negative_alpha_within_three_standard_errors() {
    let spec = pair_model(-1.0, 5.0);
    let data = simulate(&spec, 3000, 2024);
    let model = fit_default(&spec, &data);
    let r = &model.result;
    assert!(r.converged, "{}", r.termination);
    let a = r.value(free_alpha_name()).unwrap();
    let a_se = r.se(free_alpha_name()).unwrap();
    assert!((a + 1.0).abs() < 3.0 * a_se, "alpha {a} se {a_se}");
    let g = model.spec().frailty_params(0).unwrap().gamma();
    let g_se = model.delta_se(|s| s.frailty_params(0).ok().map(|p| p.gamma())).unwrap();
    assert!((g - 5.0).abs() < 3.0 * g_se, "gamma {g} se {g_se}");
}

#[test]
fn numerical_derivatives_at_the_optimum() {
    let spec = pair_model(-1.0, 5.0);
    let data = simulate(&spec, 1500, 7);
    let model = fit_default(&spec, &data);
    let r = &model.result;
    assert!(r.converged);
    let f = loglik_at(&model, &data);
    let free = model.layout.free_values(&r.theta);

    let grad = numdiff::numeric_gradient(&f, &free).unwrap();
    let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    assert!(gmax < 1e-5 * r.loglik.abs().max(1.0), "gradient {gmax}");

    let h = r.hessian.as_ref().unwrap();
    for i in 0..h.len() {
        for j in 0..h.len() {
            assert_eq!(h[i][j], h[j][i]);
        }
    }
    let quarter: Vec<f64> = free.iter().map(|&x| numdiff::hessian_step(x) / 4.0).collect();
    let plain = numdiff::central_hessian(&f, &free, &quarter).unwrap();
    for i in 0..h.len() {
        for j in 0..h.len() {
            let scale = h[i][j].abs().max(1e-3 * (h[i][i] * h[j][j]).abs().sqrt());
            assert!((h[i][j] - plain[i][j]).abs() < 1e-3 * scale, "H[{i}][{j}] {} vs {}", h[i][j], plain[i][j]);
        }
    }

    let cov = r.covariance.as_ref().unwrap();
    for i in 0..h.len() {
        for j in 0..h.len() {
            let p: f64 = (0..h.len()).map(|k| cov[i][k] * h[k][j]).sum();
            let target = if i == j { -1.0 } else { 0.0 };
            assert!((p - target).abs() < 1e-4, "(cov H)[{i}][{j}] = {p}");
        }
    }
}

#[test]
fn refit_from_the_optimum_is_a_fixed_point() {
    let spec = pair_model(-1.0, 5.0);
    let data = simulate(&spec, 1000, 3);
    let first = fit_default(&spec, &data);
    let again = fit(&spec, &data, &FitOptions { init: Init::Vector(first.result.theta.clone()), ..Default::default() })
        .unwrap();
    assert!(again.result.iterations <= 2, "{} iterations", again.result.iterations);
    assert!((again.result.loglik - first.result.loglik).abs() < 1e-8);
}

#[test]
fn pinning_at_the_estimate_reproduces_the_likelihood() {
    let spec = pair_model(-1.0, 5.0);
    let data = simulate(&spec, 1000, 5);
    let full = fit_default(&spec, &data);
    let pins: Vec<String> = full.layout.names().into_iter().filter(|n| n.starts_with("baseline")).collect();
    let pinned = fit(&spec, &data, &FitOptions { init: Init::Vector(full.result.theta.clone()), pins, ..Default::default() })
        .unwrap();
    assert!((pinned.result.loglik - full.result.loglik).abs() < 1e-6);
    assert_eq!(pinned.result.n_free, 2);
}

#[test]
fn single_interval_piecewise_matches_exponential_fit() {
    let mut expo = pair_model(-1.0, 5.0);
    let mut single = expo.clone();
    for u in &mut expo.units {
        u.baselines = vec![Baseline::exponential(0.02).unwrap()];
    }
    for u in &mut single.units {
        u.baselines = vec![Baseline::piecewise(vec![0.0], vec![0.02]).unwrap()];
    }
    let data = simulate(&expo, 1000, 9);
    let a = fit_default(&expo, &data).result.loglik;
    let b = fit_default(&single, &data).result.loglik;
    assert!((a - b).abs() < 1e-6, "{a} vs {b}");
}

#[test]
fn lrt_is_invariant_to_unit_order() {
    let spec = pair_model(-1.0, 5.0);
    let data = simulate(&spec, 1000, 13);
    let alt = fit_default(&spec, &data);
    let null = fit_default(&pair_gamma_model(5.0), &data);
    let forward = nested_lrt(&null.result, &alt.result).unwrap();

    let swap = |mut s: ModelSpec| {
        s.units.reverse();
        s
    };
    let alt_r = fit_default(&swap(spec.clone()), &data);
    let null_r = fit_default(&swap(pair_gamma_model(5.0)), &data);
    let reversed = lrt(&null_r.result, &alt_r.result, 1).unwrap();
    assert_eq!(forward.df, 1);
    assert!((forward.statistic - reversed.statistic).abs() < 1e-6);
    assert!((forward.p_value - reversed.p_value).abs() < 1e-6);
}

#[test]
fn fits_do_not_depend_on_thread_count() {
    let spec = pair_model(-1.0, 5.0);
    let data = simulate(&spec, 1200, 17);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| fit_default(&spec, &data))
    };
    let one = run(1);
    let four = run(4);
    for (a, b) in one.result.theta.iter().zip(&four.result.theta) {
        assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
    }
    assert_eq!(one.result.loglik.to_bits(), four.result.loglik.to_bits());
}

#[test]
fn unidentifiable_layouts_are_rejected() {
    let mut spec = pair_model(-1.0, 5.0);
    spec.frailty = sex_link((-1.0, 5.0, 1.0), (-1.0, 5.0, 1.0));
    spec.regimes = vec![BranchRegime::Free; 2];
    spec.frailty.mu_pinned.clear();
    let err = ParameterLayout::new(&spec, &[]).unwrap_err();
    assert!(matches!(err, EstimationError::Identifiability(_)), "{err}");

    spec.stratified_baseline = true;
    spec.frailty.mu_pinned = vec!["male".into()];
    for u in &mut spec.units {
        u.baselines = vec![u.baselines[0].clone(); 2];
    }
    let err = ParameterLayout::new(&spec, &[]).unwrap_err();
    assert!(matches!(err, EstimationError::Identifiability(_)), "{err}");

    spec.frailty.mu_pinned = vec!["male".into(), "female".into()];
    assert!(ParameterLayout::new(&spec, &[]).is_ok());
}

#[test]
fn pinned_covariate_leaves_aic_unchanged() {
    let mut spec = pair_model(-1.0, 5.0);
    let mut config = SimConfig::new(spec.clone(), 800, 21);
    config.covariates = vec![CovariateSpec { name: "x".into(), law: CovariateLaw::Normal { mean: 0.0, sd: 1.0 }, per_cluster: true }];
    let data = generate(&config).unwrap();
    let without = fit_default(&spec, &data);
    spec.units[0].predictor = LinearPredictor::new(vec!["x".into()], vec![0.0]).unwrap();
    let with = fit(&spec, &data, &FitOptions { pins: vec!["beta[HPV16].x".into()], ..Default::default() }).unwrap();
    assert_eq!(with.result.n_free, without.result.n_free);
    assert!((aic(&with.result) - aic(&without.result)).abs() < 1e-6);
}

#[test]
fn aic_prefers_the_true_family() {
    let truth = pair_model(-2.0, 5.0);
    let reps = 50;
    let wins = (0..reps)
        .filter(|&r| {
            let data = simulate(&truth, 3000, 1000 + r);
            let alt = fit_default(&truth, &data);
            let null = fit_default(&pair_gamma_model(5.0), &data);
            alt.result.aic < null.result.aic
        })
        .count();
    assert!(wins as f64 >= 0.8 * reps as f64, "{wins}/{reps}");
}

#[test]
fn lowest_category_interval_coverage() {
    let truth = pair_model(-1.0, 5.0);
    let lowest = |s: &ModelSpec| s.frailty_params(0).ok()?.lowest_atom().map(|(_, lp)| lp.exp());
    let target = lowest(&truth).unwrap();
    let reps = 200;
    let mut hits = 0;
    for r in 0..reps {
        let data = simulate(&truth, 1500, 5000 + r);
        let model = fit_default(&truth, &data);
        let est = model.estimate(lowest, Domain::UnitInterval, 0.95).unwrap();
        let (lo, hi) = est.ci.unwrap();
        assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi);
        hits += (lo <= target && target <= hi) as usize;
    }
    let coverage = hits as f64 / reps as f64;
    assert!((0.9..=0.99).contains(&coverage), "coverage {coverage}");
}

#[test]
fn stratified_fit_with_a_reference_mean() {
    let mut spec = pair_model(-1.0, 5.0);
    spec.frailty = sex_link((-1.0, 5.0, 1.0), (-2.0, 3.0, 0.6));
    spec.regimes = vec![BranchRegime::Free; 2];
    let data = simulate(&spec, 3000, 41);
    let err = fit(&spec, &data, &FitOptions::default()).unwrap_err();
    assert!(matches!(err, EstimationError::Identifiability(_)), "{err}");
    let opts = FitOptions { pins: vec!["beta0[intercept]".into()], ..Default::default() };
    let model = fit(&spec, &data, &opts).unwrap();
    let r = &model.result;
    assert!(r.converged, "{}", r.termination);
    assert_eq!(r.n_free, 4 + 5);
    let name = "beta0[female]";
    let (b, se) = (r.value(name).unwrap(), r.se(name).unwrap());
    assert!((b - 0.6f64.ln()).abs() < 3.0 * se, "{b} (se {se})");
}
