mod common;
mod fixtures;

use addams_frailty::risk::{RcTable, QUANTILE_SCAN_LIMIT};
use addams_frailty::*;
use fixtures::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn published_table() -> RcTable {
    rc_table(&FittedModel::pinned(published_model()).unwrap(), 5, 0.95).unwrap()
}

fn branch(p: (f64, f64, f64)) -> FrailtyBranch {
    AddamsParameters::new(p.0, p.1, p.2).unwrap().classify().unwrap()
}

#[test]
fn published_branch_parameters() {
    for (p, (psi, nu, pi)) in [(MALE, (0.502, 0.012, 0.006)), (FEMALE, (0.946, 0.011, 0.031))] {
        let b = branch(p);
        assert_eq!(b.kind(), BranchKind::ShiftedScaledNegBinomial);
        assert!((b.psi().unwrap() - psi).abs() < 0.002, "psi {:?}", b.psi());
        assert!((b.nu().unwrap() - nu).abs() < 0.002, "nu {:?}", b.nu());
        assert!((b.pi().unwrap() - pi).abs() < 0.002, "pi {:?}", b.pi());
    }
}

#[test]
fn published_category_table() {
    let table = published_table();
    let male_p = [0.941, 0.952, 0.958, 0.961, 0.964];
    let female_p = [0.964, 0.974, 0.978, 0.982, 0.984];
    let male_z = [0.006, 0.508, 1.011, 1.513, 2.016];
    let female_z = [0.01, 0.956, 1.902, 2.848, 3.794];
    let hr_a = [1.684, 1.881, 1.882, 1.882, 1.882];
    let (male, female) = (&table.strata[0], &table.strata[1]);
    assert_eq!((male.level.as_str(), female.level.as_str()), ("male", "female"));
    for k in 0..5 {
        assert!((male.rows[k].cum_prob.value - male_p[k]).abs() < 0.002, "male P row {}", k + 1);
        assert!((female.rows[k].cum_prob.value - female_p[k]).abs() < 0.002, "female P row {}", k + 1);
        assert!((male.rows[k].z.value - male_z[k]).abs() < 0.001 + 0.005 * male_z[k], "male z row {}", k + 1);
        assert!((female.rows[k].z.value - female_z[k]).abs() < 0.001 + 0.005 * female_z[k], "female z row {}", k + 1);
        let hr = table.comparisons[0].rows[k].hr_across.ratio.finite().unwrap();
        assert!((hr - hr_a[k]).abs() < 0.01, "HR_A row {}: {hr}", k + 1);
    }
    let hw = |s: &risk::RcStratum| s.rows[0].hr_within.unwrap().ratio.finite().unwrap();
    assert!((hw(male) - 84.949).abs() < 1.0, "{}", hw(male));
    assert!((hw(female) - 94.878).abs() < 1.0, "{}", hw(female));
    let limit = branch(FEMALE).psi().unwrap() / branch(MALE).psi().unwrap();
    assert!((limit - 1.883).abs() < 0.01);
    // A pinned model carries exact values with degenerate intervals.
    let row = &male.rows[0];
    assert_eq!(row.cum_prob.se, Some(0.0));
    assert_eq!(row.cum_prob.ci, Some((row.cum_prob.value, row.cum_prob.value)));
}

#[test]
fn table_probabilities_match_independent_pmf() {
    let table = published_table();
    for (s, p) in table.strata.iter().zip([MALE, FEMALE]) {
        let common::LawOracle::Discrete { scale, offset, count } = common::law(p.0, p.1, p.2) else {
            panic!("discrete member expected")
        };
        let mut cum = 0.0;
        for row in &s.rows {
            let m = (row.k - 1) as u64;
            let prob = common::ln_pmf(count, m).exp();
            cum += prob;
            assert!((row.prob.value - prob).abs() < 1e-12);
            assert!((row.cum_prob.value - cum).abs() < 1e-12);
            assert!((row.z.value - scale * (offset + m as f64)).abs() < 1e-12);
        }
    }
}

/// Quantile matching by exhaustive comparison of cumulative probabilities.
fn brute_force_match(branch: &FrailtyBranch, reference: &FrailtyBranch, k: usize) -> usize {
    let own = support_and_pmf(branch, k).unwrap();
    let upper = own[k - 1].cum_prob;
    let lower = if k > 1 { own[k - 2].cum_prob } else { 0.0 };
    let other = support_and_pmf(reference, 10_000).unwrap();
    if let Some(p) = other.iter().find(|p| p.cum_prob > lower && p.cum_prob <= upper) {
        return p.index;
    }
    other
        .iter()
        .min_by(|a, b| (a.cum_prob - upper).abs().total_cmp(&(b.cum_prob - upper).abs()))
        .unwrap()
        .index
}

#[test]
fn quantile_matching_agrees_with_brute_force() {
    assert!(QUANTILE_SCAN_LIMIT >= 10_000);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let draw = |rng: &mut ChaCha8Rng| -> FrailtyBranch {
        let g = rng.random_range(0.2..6.0);
        let mu = rng.random_range(0.3..2.0);
        let a = match rng.random_range(0..3) {
            0 => -rng.random_range(0.05..3.0),
            1 => g * rng.random_range(0.05..0.95),
            _ => g,
        };
        AddamsParameters::new(a, g, mu).unwrap().classify().unwrap()
    };
    for _ in 0..200 {
        let (b, r) = (draw(&mut rng), draw(&mut rng));
        for k in 1..=6 {
            let (kk, hr) = hr_across_quantile_matched(&b, &r, k).unwrap();
            assert_eq!(kk, brute_force_match(&b, &r, k), "{b:?} vs {r:?} at {k}");
            assert_eq!(hr, HazardRatio::from_ratio(b.support_value(k).unwrap(), r.support_value(kk).unwrap()));
        }
    }
}

#[test]
fn trajectory_limits() {
    let model = FittedModel::pinned(published_model()).unwrap();
    let units = vec![UNITS[0].to_string()];
    let grid = [0.0, 1.0, 5.0, 20.0, 60.0, 2000.0];
    for (name, p) in [("male", MALE), ("female", FEMALE)] {
        let tr = trajectories(&model, name, &units, &grid, None, 0.95).unwrap();
        assert!((tr.rfv.points[0].value - p.1).abs() < 1e-9 * p.1);
        assert!((tr.conditional_mean.points[0].value - p.2).abs() < 1e-12);
        assert_eq!(tr.prevalence[0].points[0].value, 0.0);
        let b = branch(p);
        let floor = b.psi().unwrap() * b.nu().unwrap();
        let last = tr.conditional_mean.points.last().unwrap().value;
        assert!((last - floor).abs() < 1e-6 * floor, "{last} vs {floor}");
        for w in tr.rfv.points.windows(2) {
            assert!(w[1].value < w[0].value);
        }
        for w in tr.prevalence[0].points.windows(2) {
            assert!(w[1].value > w[0].value);
        }
    }
}

#[test]
fn cure_fraction_caps_prevalence() {
    let mut spec = pair_model(2.0, 4.0);
    spec.units[0].baselines = vec![Baseline::exponential(0.5).unwrap()];
    let model = FittedModel::pinned(spec).unwrap();
    let units = vec![UNITS[0].to_string()];
    let grid: Vec<f64> = (0..40).map(|i| 2.0 * i as f64).collect();
    let tr = trajectories(&model, "all", &units, &grid, None, 0.95).unwrap();
    let p = model.spec().frailty_params(0).unwrap();
    let cure = p.lowest_atom().unwrap().1.exp();
    let prev = &tr.prevalence[0].points;
    for w in prev.windows(2) {
        assert!(w[1].value >= w[0].value);
    }
    assert!(prev.iter().all(|q| q.value <= 1.0 - cure + 1e-15));
    assert!((prev.last().unwrap().value - (1.0 - cure)).abs() < 1e-9);
    for w in tr.rfv.points.windows(2) {
        assert!(w[1].value > w[0].value);
    }
}

#[test]
fn gamma_prevalence_matches_quadrature() {
    let spec = pair_gamma_model(1.7);
    let model = FittedModel::pinned(spec.clone()).unwrap();
    let units: Vec<String> = UNITS.iter().map(|u| u.to_string()).collect();
    let grid = [3.0, 12.0, 35.0, 70.0];
    let tr = trajectories(&model, "all", &units, &grid, None, 0.95).unwrap();
    for (j, curve) in tr.prevalence.iter().enumerate() {
        for pt in &curve.points {
            let h = spec.baseline(j, 0).cumulative(pt.time).unwrap();
            let oracle = 1.0 - common::laplace(0.0, 1.7, 1.0, h);
            assert!((pt.value - oracle).abs() < 1e-9, "{} vs {oracle}", pt.value);
        }
    }
}

#[test]
fn invalid_requests_are_rejected() {
    let model = FittedModel::pinned(published_model()).unwrap();
    assert!(rc_table(&model, 0, 0.95).is_err());
    let units = vec![UNITS[0].to_string()];
    assert!(trajectories(&model, "male", &units, &[], None, 0.95).is_err());
    assert!(trajectories(&model, "male", &units, &[2.0, 1.0], None, 0.95).is_err());
    assert!(trajectories(&model, "nobody", &units, &[1.0], None, 0.95).is_err());
    let gamma = FittedModel::pinned(pair_gamma_model(1.0)).unwrap();
    assert!(rc_table(&gamma, 3, 0.95).is_err());
}
