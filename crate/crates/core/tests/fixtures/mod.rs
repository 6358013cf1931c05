//! Model and dataset builders shared by the integration tests.

#![allow(dead_code)]

use addams_frailty::*;

pub const UNITS: [&str; 2] = ["HPV16", "HPV18"];

/// Published male fit of the stratified model.
pub const MALE: (f64, f64, f64) = (-0.502, 83.447, 1.0);
/// Published female fit of the stratified model.
pub const FEMALE: (f64, f64, f64) = (-2.882, 90.996, 0.328);

pub fn two_interval(rates: [f64; 2]) -> Baseline {
    Baseline::piecewise(vec![0.0, 30.0], rates.to_vec()).unwrap()
}

pub fn unit(name: &str, baseline: Baseline) -> UnitModel {
    UnitModel { name: name.into(), predictor: LinearPredictor::empty(), baselines: vec![baseline] }
}

/// Two units with two-interval piecewise baselines and a single stratum.
pub fn pair_model(alpha: f64, gamma: f64) -> ModelSpec {
    ModelSpec {
        units: vec![
            unit(UNITS[0], two_interval([0.02, 0.04])),
            unit(UNITS[1], two_interval([0.03, 0.015])),
        ],
        stratified_baseline: false,
        frailty: FrailtyLink::single("all", alpha, gamma),
        regimes: vec![BranchRegime::Free],
    }
}

/// `pair_model` with the gamma member pinned.
pub fn pair_gamma_model(gamma: f64) -> ModelSpec {
    let mut spec = pair_model(0.0, gamma);
    spec.regimes = vec![BranchRegime::Gamma];
    spec
}

/// Link with levels `male` (reference, `mu` pinned) and `female`.
pub fn sex_link(male: (f64, f64, f64), female: (f64, f64, f64)) -> FrailtyLink {
    FrailtyLink {
        columns: vec!["intercept".into(), "female".into()],
        levels: vec![
            StratumLevel { name: "male".into(), row: vec![1.0, 0.0] },
            StratumLevel { name: "female".into(), row: vec![1.0, 1.0] },
        ],
        zeta: vec![male.0, female.0 - male.0],
        kappa: vec![male.1.ln(), female.1.ln() - male.1.ln()],
        beta0: vec![male.2.ln(), female.2.ln() - male.2.ln()],
        mu_pinned: vec!["male".into()],
        reference: "male".into(),
    }
}

/// Published stratified fit with a single unit and the preset baseline.
pub fn published_model() -> ModelSpec {
    let rates = vec![0.002, 0.004, 0.06, 0.07, 0.05, 0.03, 0.02, 0.02];
    ModelSpec {
        units: vec![unit(
            UNITS[0],
            Baseline::PiecewiseConstant(PiecewiseConstantBaseline::pienter2(rates).unwrap()),
        )],
        stratified_baseline: false,
        frailty: sex_link(MALE, FEMALE),
        regimes: vec![BranchRegime::Free; 2],
    }
}

pub fn simulate(spec: &ModelSpec, n: usize, seed: u64) -> CurrentStatusDataset {
    generate(&SimConfig::new(spec.clone(), n, seed)).unwrap()
}

pub fn free_alpha_name() -> &'static str {
    "zeta[intercept]"
}

pub fn free_gamma_name() -> &'static str {
    "kappa[intercept]"
}
