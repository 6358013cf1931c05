mod common;
mod fixtures;

use addams_frailty::data::CsvOptions;
use addams_frailty::simulate::{event_time_from_exponential, substream};
use addams_frailty::*;
use fixtures::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Log odds ratio of `(d1, d2)` over clusters and its large-sample SE.
fn log_odds_ratio(data: &CurrentStatusDataset) -> (f64, f64) {
    let mut n = [[0.5f64; 2]; 2];
    for c in &data.clusters {
        let d = |u: &str| c.records.iter().find(|r| r.unit == u).unwrap().event as usize;
        n[d(UNITS[0])][d(UNITS[1])] += 1.0;
    }
    let lor = (n[1][1] * n[0][0] / (n[1][0] * n[0][1])).ln();
    let se = n.iter().flatten().map(|v| 1.0 / v).sum::<f64>().sqrt();
    (lor, se)
}

fn at_fixed_time(spec: &ModelSpec, t: f64, n: usize, seed: u64) -> CurrentStatusDataset {
    let mut config = SimConfig::new(spec.clone(), n, seed);
    config.monitoring = MonitoringLaw::FixedGrid { times: vec![t] };
    generate(&config).unwrap()
}

#[test]
fn degenerate_and_bounded_draws() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let zero = FrailtyBranch::ScaledBinomial { psi: 2.0, trials: 4, pi: 0.0 };
    assert!((0..1000).all(|_| sample_frailty(&zero, &mut rng) == 0.0));
    let male = AddamsParameters::new(MALE.0, MALE.1, MALE.2).unwrap().classify().unwrap();
    let floor = male.psi().unwrap() * male.nu().unwrap();
    assert!((0..10_000).all(|_| sample_frailty(&male, &mut rng) >= floor * (1.0 - 1e-12)));
    let b = two_interval([0.02, 0.04]);
    assert_eq!(sample_event_time(0.0, &b, 1.0, &mut rng), f64::INFINITY);
    let e = 0.7;
    let expo = Baseline::exponential(0.05).unwrap();
    assert!((event_time_from_exponential(1.0, &expo, 1.0, e) - e / 0.05).abs() < 1e-12);
}

#[test]
fn frailty_moments_match_the_male_branch() {
    let p = AddamsParameters::new(MALE.0, MALE.1, MALE.2).unwrap();
    let branch = p.classify().unwrap();
    let mut rng = substream(99, 7, 0);
    let n = 1_000_000;
    let draws: Vec<f64> = (0..n).map(|_| sample_frailty(&branch, &mut rng)).collect();
    let nf = n as f64;
    let m1 = draws.iter().sum::<f64>() / nf;
    let m2 = draws.iter().map(|z| z * z).sum::<f64>() / nf;
    let sd = (m2 - m1 * m1).sqrt();
    assert!((m1 - p.mu()).abs() < 4.0 * sd / nf.sqrt(), "mean {m1}");
    // Influence function of m2 / m1^2 - 1.
    let ratio = m2 / (m1 * m1) - 1.0;
    let infl: Vec<f64> = draws.iter().map(|z| (z * z - m2) / (m1 * m1) - 2.0 * m2 * (z - m1) / (m1 * m1 * m1)).collect();
    let se = (infl.iter().map(|v| v * v).sum::<f64>() / nf).sqrt() / nf.sqrt();
    assert!((ratio - p.gamma()).abs() < 4.0 * se, "ratio {ratio} vs {} (se {se})", p.gamma());
}

#[test]
fn event_times_follow_the_conditional_law() {
    let b = Baseline::PiecewiseConstant(
        PiecewiseConstantBaseline::pienter2(vec![0.002, 0.004, 0.06, 0.07, 0.05, 0.03, 0.02, 0.02]).unwrap(),
    );
    let (z, mult) = (1.7, 1.3);
    let mut rng = substream(5, 3, 0);
    let mut draws: Vec<f64> = (0..100_000).map(|_| sample_event_time(z, &b, mult, &mut rng)).collect();
    let p = common::ks_p_value(&mut draws, |t| 1.0 - (-z * mult * b.cumulative(t).unwrap()).exp());
    assert!(p > 0.01, "KS p = {p}");
}

#[test]
fn independence_without_frailty_variance() {
    let data = at_fixed_time(&pair_gamma_model(1e-8), 30.0, 100_000, 8);
    let (lor, se) = log_odds_ratio(&data);
    assert!(lor.abs() < 3.0 * se, "log OR {lor} (se {se})");
}

#[test]
fn shared_frailty_induces_positive_association() {
    let data = at_fixed_time(&pair_model(-1.0, 5.0), 30.0, 20_000, 8);
    let (lor, se) = log_odds_ratio(&data);
    assert!(lor > 3.0 * se, "log OR {lor} (se {se})");
}

#[test]
fn marginal_prevalence_matches_the_transform() {
    let spec = pair_model(-1.0, 5.0);
    let ages = [5.0, 15.0, 30.0, 45.0, 70.0];
    let mut config = SimConfig::new(spec.clone(), 100_000, 31);
    config.monitoring = MonitoringLaw::FixedGrid { times: ages.to_vec() };
    let data = generate(&config).unwrap();
    let law = spec.frailty_params(0).unwrap();
    for (j, unit) in spec.units.iter().enumerate() {
        for &t in &ages {
            let rows: Vec<bool> = data
                .clusters
                .iter()
                .flat_map(|c| c.records.iter())
                .filter(|r| r.unit == unit.name && r.time == t)
                .map(|r| r.event)
                .collect();
            let n = rows.len() as f64;
            let observed = rows.iter().filter(|&&d| d).count() as f64 / n;
            let expected = 1.0 - law.laplace(spec.baseline(j, 0).cumulative(t).unwrap()).unwrap();
            let se = (expected * (1.0 - expected) / n).sqrt();
            assert!((observed - expected).abs() < 3.0 * se, "{} at {t}: {observed} vs {expected}", unit.name);
        }
    }
}

#[test]
fn zero_monitoring_time_gives_no_events() {
    let data = at_fixed_time(&pair_model(-1.0, 5.0), 0.0, 1, 4);
    assert_eq!(data.clusters.len(), 1);
    assert!(data.clusters[0].records.iter().all(|r| !r.event && r.time == 0.0));
}

#[test]
fn datasets_are_reproducible_and_cluster_local() {
    let spec = pair_model(-1.0, 5.0);
    let a = simulate(&spec, 300, 77);
    assert_eq!(a, simulate(&spec, 300, 77));
    assert_ne!(a, simulate(&spec, 300, 78));
    let longer = simulate(&spec, 400, 77);
    assert_eq!(&longer.clusters[..300], &a.clusters[..]);
    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| simulate(&spec, 300, 77));
    assert_eq!(serial, a);
    for c in &a.clusters {
        assert!(c.records.iter().all(|r| (1.0..=80.0).contains(&r.time)));
        assert!(c.records.iter().all(|r| r.time == c.records[0].time));
    }
}

#[test]
fn simulated_csv_round_trips() {
    let data = simulate(&published_model(), 500, 3);
    let opts = CsvOptions { stratum_column: Some("sex".into()), weight_column: None };
    let mut buf = Vec::new();
    data.write_csv(&mut buf, &opts).unwrap();
    let back = CurrentStatusDataset::read_csv(buf.as_slice(), &opts).unwrap();
    assert_eq!(back, data);
    let strata: std::collections::BTreeSet<_> = back.clusters.iter().map(|c| c.stratum.as_str()).collect();
    assert_eq!(strata.into_iter().collect::<Vec<_>>(), ["female", "male"]);
}
