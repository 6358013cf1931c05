//! Baseline hazards, proportional covariate effects and the links from a
//! stratum's design row to its frailty parameters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};
use thiserror::Error;

use crate::family::{AddamsParameters, BranchRegime, FamilyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HazardError {
    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),
    #[error("missing covariate `{0}`")]
    MissingCovariate(String),
    #[error("unknown stratum level `{0}`")]
    UnknownStratum(String),
    #[error("unknown unit `{0}`")]
    UnknownUnit(String),
    #[error("invalid baseline: {0}")]
    InvalidBaseline(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Family(#[from] FamilyError),
}

/// Cutpoints of the eight age bands `[0,5), [5,10), [10,20), [20,30),
/// [30,40), [40,50), [50,65), [65,inf)` used for serological survey fits.
pub const PIENTER2_CUTPOINTS: [f64; 8] = [0.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 65.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseConstantBaseline {
    cutpoints: Vec<f64>,
    rates: Vec<f64>,
}

impl PiecewiseConstantBaseline {
    pub fn new(cutpoints: Vec<f64>, rates: Vec<f64>) -> Result<Self, HazardError> {
        if cutpoints.is_empty() || cutpoints[0] != 0.0 {
            return Err(HazardError::InvalidBaseline(
                "cutpoints must start at 0".into(),
            ));
        }
        if cutpoints.len() != rates.len() {
            return Err(HazardError::InvalidBaseline(format!(
                "{} cutpoints but {} rates",
                cutpoints.len(),
                rates.len()
            )));
        }
        if cutpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(HazardError::InvalidBaseline(
                "cutpoints must be strictly increasing".into(),
            ));
        }
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(HazardError::InvalidBaseline("rates must be positive".into()));
        }
        Ok(Self { cutpoints, rates })
    }

    pub fn pienter2(rates: Vec<f64>) -> Result<Self, HazardError> {
        Self::new(PIENTER2_CUTPOINTS.to_vec(), rates)
    }

    pub fn cutpoints(&self) -> &[f64] {
        &self.cutpoints
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Time spent in each interval up to `t`; `cumulative = sum(rates * exposure)`.
    pub fn exposures(&self, t: f64) -> Vec<f64> {
        let n = self.cutpoints.len();
        (0..n)
            .map(|i| {
                let lo = self.cutpoints[i];
                let hi = if i + 1 < n { self.cutpoints[i + 1] } else { f64::INFINITY };
                (t.min(hi) - lo).max(0.0)
            })
            .collect()
    }

    fn cumulative(&self, t: f64) -> f64 {
        let n = self.cutpoints.len();
        let mut total = 0.0;
        for i in 0..n {
            let lo = self.cutpoints[i];
            if t <= lo {
                break;
            }
            let hi = if i + 1 < n { self.cutpoints[i + 1] } else { f64::INFINITY };
            total += self.rates[i] * (t.min(hi) - lo);
        }
        total
    }

    fn hazard(&self, t: f64) -> f64 {
        let i = self.cutpoints.partition_point(|&c| c <= t).saturating_sub(1);
        self.rates[i]
    }

    fn inverse_cumulative(&self, target: f64) -> f64 {
        let n = self.cutpoints.len();
        let mut acc = 0.0;
        for i in 0..n {
            let lo = self.cutpoints[i];
            let hi = if i + 1 < n { self.cutpoints[i + 1] } else { f64::INFINITY };
            let piece = self.rates[i] * (hi - lo);
            if acc + piece >= target {
                return lo + (target - acc) / self.rates[i];
            }
            acc += piece;
        }
        f64::INFINITY
    }
}

/// Parametric baselines. `Weibull` has cumulative hazard `(t/scale)^shape`.
/// `GeneralizedGamma` is Stacy's law with survival `Q(shape, (t/scale)^power)`,
/// `Q` the regularized upper incomplete gamma function; `shape = 1` gives the
/// Weibull and `power = 1` the gamma distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ParametricBaseline {
    Exponential { rate: f64 },
    Weibull { shape: f64, scale: f64 },
    GeneralizedGamma { power: f64, shape: f64, scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Baseline {
    PiecewiseConstant(PiecewiseConstantBaseline),
    Parametric(ParametricBaseline),
}

impl Baseline {
    pub fn exponential(rate: f64) -> Result<Self, HazardError> {
        Self::parametric(ParametricBaseline::Exponential { rate })
    }

    pub fn weibull(shape: f64, scale: f64) -> Result<Self, HazardError> {
        Self::parametric(ParametricBaseline::Weibull { shape, scale })
    }

    pub fn generalized_gamma(power: f64, shape: f64, scale: f64) -> Result<Self, HazardError> {
        Self::parametric(ParametricBaseline::GeneralizedGamma { power, shape, scale })
    }

    pub fn piecewise(cutpoints: Vec<f64>, rates: Vec<f64>) -> Result<Self, HazardError> {
        Ok(Baseline::PiecewiseConstant(PiecewiseConstantBaseline::new(
            cutpoints, rates,
        )?))
    }

    fn parametric(p: ParametricBaseline) -> Result<Self, HazardError> {
        let b = Baseline::Parametric(p);
        if b.log_params().iter().all(|v| v.is_finite()) {
            Ok(b)
        } else {
            Err(HazardError::InvalidBaseline(
                "parametric baseline parameters must be positive".into(),
            ))
        }
    }

    /// `Lambda_0(t) = int_0^t lambda_0(u) du`.
    pub fn cumulative(&self, t: f64) -> Result<f64, HazardError> {
        if t.is_nan() || t < 0.0 {
            return Err(HazardError::NegativeTime(t));
        }
        Ok(match self {
            Baseline::PiecewiseConstant(p) => p.cumulative(t),
            Baseline::Parametric(ParametricBaseline::Exponential { rate }) => rate * t,
            Baseline::Parametric(ParametricBaseline::Weibull { shape, scale }) => {
                (t / scale).powf(*shape)
            }
            Baseline::Parametric(ParametricBaseline::GeneralizedGamma { power, shape, scale }) => {
                if t == 0.0 {
                    0.0
                } else {
                    -ln_upper_regularized_gamma(*shape, (t / scale).powf(*power))
                }
            }
        })
    }

    /// Hazard rate `lambda_0(t)`.
    pub fn hazard(&self, t: f64) -> Result<f64, HazardError> {
        if t.is_nan() || t < 0.0 {
            return Err(HazardError::NegativeTime(t));
        }
        Ok(match self {
            Baseline::PiecewiseConstant(p) => p.hazard(t),
            Baseline::Parametric(ParametricBaseline::Exponential { rate }) => *rate,
            Baseline::Parametric(ParametricBaseline::Weibull { shape, scale }) => {
                shape / scale * (t / scale).powf(shape - 1.0)
            }
            Baseline::Parametric(ParametricBaseline::GeneralizedGamma { power, shape, scale }) => {
                let x = (t / scale).powf(*power);
                let log_density =
                    power.ln() + shape * x.ln() - x - t.ln() - ln_gamma(*shape);
                (log_density - ln_upper_regularized_gamma(*shape, x)).exp()
            }
        })
    }

    /// Smallest `t` with `Lambda_0(t) >= target`; `inf` if never reached.
    pub fn inverse_cumulative(&self, target: f64) -> f64 {
        if target <= 0.0 {
            return 0.0;
        }
        match self {
            Baseline::PiecewiseConstant(p) => p.inverse_cumulative(target),
            Baseline::Parametric(ParametricBaseline::Exponential { rate }) => target / rate,
            Baseline::Parametric(ParametricBaseline::Weibull { shape, scale }) => {
                scale * target.powf(1.0 / shape)
            }
            Baseline::Parametric(ParametricBaseline::GeneralizedGamma { .. }) => {
                let f = |t: f64| self.cumulative(t).unwrap_or(f64::NAN) - target;
                let mut hi = 1.0;
                while f(hi) < 0.0 {
                    hi *= 2.0;
                    if hi > 1e300 {
                        return f64::INFINITY;
                    }
                }
                let mut lo = 0.0;
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-15 * hi {
                        break;
                    }
                }
                hi
            }
        }
    }

    /// Parameters on the log scale, in layout order.
    pub fn log_params(&self) -> Vec<f64> {
        match self {
            Baseline::PiecewiseConstant(p) => p.rates.iter().map(|r| r.ln()).collect(),
            Baseline::Parametric(ParametricBaseline::Exponential { rate }) => vec![rate.ln()],
            Baseline::Parametric(ParametricBaseline::Weibull { shape, scale }) => {
                vec![shape.ln(), scale.ln()]
            }
            Baseline::Parametric(ParametricBaseline::GeneralizedGamma { power, shape, scale }) => {
                vec![power.ln(), shape.ln(), scale.ln()]
            }
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        match self {
            Baseline::PiecewiseConstant(p) => (0..p.rates.len())
                .map(|i| format!("log_rate[{}]", i))
                .collect(),
            Baseline::Parametric(ParametricBaseline::Exponential { .. }) => vec!["log_rate".into()],
            Baseline::Parametric(ParametricBaseline::Weibull { .. }) => {
                vec!["log_shape".into(), "log_scale".into()]
            }
            Baseline::Parametric(ParametricBaseline::GeneralizedGamma { .. }) => {
                vec!["log_power".into(), "log_shape".into(), "log_scale".into()]
            }
        }
    }

    /// Overwrite the parameters from log-scale values.
    pub fn set_log_params(&mut self, values: &[f64]) {
        match self {
            Baseline::PiecewiseConstant(p) => {
                for (r, v) in p.rates.iter_mut().zip(values) {
                    *r = v.exp();
                }
            }
            Baseline::Parametric(ParametricBaseline::Exponential { rate }) => *rate = values[0].exp(),
            Baseline::Parametric(ParametricBaseline::Weibull { shape, scale }) => {
                *shape = values[0].exp();
                *scale = values[1].exp();
            }
            Baseline::Parametric(ParametricBaseline::GeneralizedGamma { power, shape, scale }) => {
                *power = values[0].exp();
                *shape = values[1].exp();
                *scale = values[2].exp();
            }
        }
    }
}

/// `ln Q(a, x)` for the regularized upper incomplete gamma function, accurate
/// far into the upper tail where `Q` itself underflows.
pub fn ln_upper_regularized_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        return (-gamma_lr(a, x)).ln_1p();
    }
    // Modified Lentz evaluation of the continued fraction for Q.
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    -x + a * x.ln() - ln_gamma(a) + h.ln()
}

/// `exp(x' beta)` covariate effect for one unit.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LinearPredictor {
    covariate_names: Vec<String>,
    coefficients: Vec<f64>,
}

impl LinearPredictor {
    pub fn new(covariate_names: Vec<String>, coefficients: Vec<f64>) -> Result<Self, HazardError> {
        if covariate_names.len() != coefficients.len() {
            return Err(HazardError::InvalidModel(format!(
                "{} covariates but {} coefficients",
                covariate_names.len(),
                coefficients.len()
            )));
        }
        Ok(Self {
            covariate_names,
            coefficients,
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn coefficients_mut(&mut self) -> &mut [f64] {
        &mut self.coefficients
    }

    /// Covariate values ordered like the coefficients.
    pub fn gather(&self, covariates: &BTreeMap<String, f64>) -> Result<Vec<f64>, HazardError> {
        self.covariate_names
            .iter()
            .map(|name| {
                covariates
                    .get(name)
                    .copied()
                    .ok_or_else(|| HazardError::MissingCovariate(name.clone()))
            })
            .collect()
    }

    pub fn eta(&self, x: &[f64]) -> f64 {
        self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumLevel {
    pub name: String,
    /// Design row `x~` for this level.
    pub row: Vec<f64>,
}

/// `alpha = x~' zeta`, `gamma = exp(x~' kappa)`, `mu = exp(x~' beta0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrailtyLink {
    pub columns: Vec<String>,
    pub levels: Vec<StratumLevel>,
    pub zeta: Vec<f64>,
    pub kappa: Vec<f64>,
    pub beta0: Vec<f64>,
    /// Levels whose mean is fixed at one regardless of `beta0`.
    pub mu_pinned: Vec<String>,
    /// Level that cross-stratum comparisons are made against.
    pub reference: String,
}

impl FrailtyLink {
    /// One stratum, intercept-only links, reference `mu` pinned to one.
    pub fn single(level: &str, alpha: f64, gamma: f64) -> Self {
        Self {
            columns: vec!["intercept".into()],
            levels: vec![StratumLevel {
                name: level.into(),
                row: vec![1.0],
            }],
            zeta: vec![alpha],
            kappa: vec![gamma.ln()],
            beta0: vec![0.0],
            mu_pinned: vec![level.into()],
            reference: level.into(),
        }
    }

    pub fn validate(&self) -> Result<(), HazardError> {
        let p = self.columns.len();
        if self.levels.is_empty() {
            return Err(HazardError::InvalidModel("frailty link has no strata".into()));
        }
        for (name, v) in [("zeta", &self.zeta), ("kappa", &self.kappa), ("beta0", &self.beta0)] {
            if v.len() != p {
                return Err(HazardError::InvalidModel(format!(
                    "{name} has {} entries but the design has {p} columns",
                    v.len()
                )));
            }
        }
        for level in &self.levels {
            if level.row.len() != p {
                return Err(HazardError::InvalidModel(format!(
                    "design row for `{}` has {} entries, expected {p}",
                    level.name,
                    level.row.len()
                )));
            }
        }
        for (i, a) in self.levels.iter().enumerate() {
            if self.levels[..i].iter().any(|b| b.name == a.name) {
                return Err(HazardError::InvalidModel(format!(
                    "duplicate stratum level `{}`",
                    a.name
                )));
            }
        }
        for name in self.mu_pinned.iter().chain(std::iter::once(&self.reference)) {
            self.level_index(name)?;
        }
        Ok(())
    }

    pub fn level_index(&self, level: &str) -> Result<usize, HazardError> {
        self.levels
            .iter()
            .position(|l| l.name == level)
            .ok_or_else(|| HazardError::UnknownStratum(level.to_string()))
    }

    pub fn is_mu_pinned(&self, level: &str) -> bool {
        self.mu_pinned.iter().any(|l| l == level)
    }

    /// `(x~' zeta, exp(x~' kappa), exp(x~' beta0))` for a level; `mu = 1`
    /// for pinned levels.
    pub fn linear_parts(&self, level_idx: usize) -> (f64, f64, f64) {
        let level = &self.levels[level_idx];
        let dot = |coef: &[f64]| -> f64 { level.row.iter().zip(coef).map(|(x, c)| x * c).sum() };
        let alpha = dot(&self.zeta);
        let gamma = dot(&self.kappa).exp();
        let mu = if self.is_mu_pinned(&level.name) {
            1.0
        } else {
            dot(&self.beta0).exp()
        };
        (alpha, gamma, mu)
    }
}

/// Free-regime frailty parameters of a stratum level.
pub fn stratum_frailty_params(
    link: &FrailtyLink,
    level: &str,
) -> Result<AddamsParameters, HazardError> {
    let idx = link.level_index(level)?;
    let (a, g, m) = link.linear_parts(idx);
    Ok(AddamsParameters::new(a, g, m)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitModel {
    pub name: String,
    pub predictor: LinearPredictor,
    /// One baseline, or one per stratum level when baselines are stratified.
    pub baselines: Vec<Baseline>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub units: Vec<UnitModel>,
    pub stratified_baseline: bool,
    pub frailty: FrailtyLink,
    /// Branch regime per stratum level, in `frailty.levels` order.
    pub regimes: Vec<BranchRegime>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), HazardError> {
        self.frailty.validate()?;
        if self.units.is_empty() {
            return Err(HazardError::InvalidModel("model has no units".into()));
        }
        let n_levels = self.frailty.levels.len();
        if self.regimes.len() != n_levels {
            return Err(HazardError::InvalidModel(format!(
                "{} branch regimes for {n_levels} strata",
                self.regimes.len()
            )));
        }
        for (i, u) in self.units.iter().enumerate() {
            if self.units[..i].iter().any(|v| v.name == u.name) {
                return Err(HazardError::InvalidModel(format!("duplicate unit `{}`", u.name)));
            }
            let expected = if self.stratified_baseline { n_levels } else { 1 };
            if u.baselines.len() != expected {
                return Err(HazardError::InvalidModel(format!(
                    "unit `{}` has {} baselines, expected {expected}",
                    u.name,
                    u.baselines.len()
                )));
            }
        }
        Ok(())
    }

    pub fn unit_index(&self, name: &str) -> Result<usize, HazardError> {
        self.units
            .iter()
            .position(|u| u.name == name)
            .ok_or_else(|| HazardError::UnknownUnit(name.to_string()))
    }

    pub fn baseline(&self, unit: usize, level_idx: usize) -> &Baseline {
        let u = &self.units[unit];
        if self.stratified_baseline {
            &u.baselines[level_idx]
        } else {
            &u.baselines[0]
        }
    }

    /// Frailty parameters of a stratum under its pinned regime.
    pub fn frailty_params(&self, level_idx: usize) -> Result<AddamsParameters, FamilyError> {
        let (a, g, m) = self.frailty.linear_parts(level_idx);
        AddamsParameters::with_regime(self.regimes[level_idx], a, g, m)
    }

    pub fn frailty_params_for(&self, level: &str) -> Result<AddamsParameters, HazardError> {
        let idx = self.frailty.level_index(level)?;
        Ok(self.frailty_params(idx)?)
    }
}

/// `exp(x' beta_j) * Lambda_0^(j)(t)` for one unit of a cluster.
pub fn unit_cumulative_hazard(
    spec: &ModelSpec,
    covariates: &BTreeMap<String, f64>,
    unit: usize,
    level_idx: usize,
    t: f64,
) -> Result<f64, HazardError> {
    let u = &spec.units[unit];
    let x = u.predictor.gather(covariates)?;
    let base = spec.baseline(unit, level_idx).cumulative(t)?;
    Ok(u.predictor.eta(&x).exp() * base)
}
