//! Maximum-likelihood fitting, observed-information inference, transformed
//! confidence intervals, likelihood-ratio tests and AIC.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal as StdNormal};
use thiserror::Error;

use crate::data::CurrentStatusDataset;
use crate::family::{BranchRegime, FamilyError, FrailtyBranch};
use crate::hazard::{Baseline, HazardError, ModelSpec, ParametricBaseline};
use crate::likelihood::{total_loglik, LikelihoodError, PreparedData};
use crate::numdiff::{self, NonFiniteEvaluation};
use crate::optim::{self, BfgsOptions, Termination};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Hazard(#[from] HazardError),
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error(transparent)]
    NonFinite(#[from] NonFiniteEvaluation),
    #[error("model is not identifiable: {0}")]
    Identifiability(String),
    #[error("log-likelihood is not finite at the initial point: {0}")]
    InvalidInitialPoint(String),
    #[error("expected {expected} parameters, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("estimate {estimate} lies outside the {domain:?} domain")]
    DomainViolation { estimate: f64, domain: Domain },
    #[error("standard error must be non-negative, got {0}")]
    NegativeStandardError(f64),
    #[error("likelihood-ratio statistic {0} is negative; models are not nested or a fit did not converge")]
    NegativeStatistic(f64),
    #[error("degrees of freedom must be at least one, got {0}")]
    InvalidDegreesOfFreedom(i64),
    #[error("dataset has no clusters")]
    EmptyData,
}

/// Role of one entry in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "block", rename_all = "snake_case")]
pub enum ParameterRole {
    /// Log of a baseline parameter.
    Baseline { unit: usize, baseline: usize, index: usize },
    /// Hazard regression coefficient of a unit.
    Beta { unit: usize, index: usize },
    /// Log-mean link coefficient.
    Beta0 { column: usize },
    /// RFV slope link coefficient.
    Zeta { column: usize },
    /// Log RFV intercept link coefficient.
    Kappa { column: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEntry {
    pub name: String,
    pub role: ParameterRole,
    pub free: bool,
}

/// Bijection between a [`ModelSpec`] and a flat parameter vector, with the
/// subset of entries that the optimizer may move.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterLayout {
    pub entries: Vec<ParameterEntry>,
}

impl ParameterLayout {
    /// Layout of `spec` with the named entries pinned. Link coefficients that
    /// cannot influence any stratum are pinned automatically.
    pub fn new(spec: &ModelSpec, pins: &[String]) -> Result<Self, EstimationError> {
        let (mut layout, mu_free, alpha_free, all) = Self::unchecked(spec)?;
        for name in pins {
            let i = layout.index_of(name)?;
            layout.entries[i].free = false;
        }
        layout.check_identifiable(spec, &mu_free, &alpha_free, &all)?;
        Ok(layout)
    }

    /// Layout with every entry pinned.
    pub fn all_pinned(spec: &ModelSpec) -> Result<Self, EstimationError> {
        let (mut layout, ..) = Self::unchecked(spec)?;
        for e in &mut layout.entries {
            e.free = false;
        }
        Ok(layout)
    }

    #[allow(clippy::type_complexity)]
    fn unchecked(spec: &ModelSpec) -> Result<(Self, Vec<usize>, Vec<usize>, Vec<usize>), EstimationError> {
        spec.validate()?;
        let link = &spec.frailty;
        let mut entries = Vec::new();
        for (u, unit) in spec.units.iter().enumerate() {
            for (b, baseline) in unit.baselines.iter().enumerate() {
                let label = if spec.stratified_baseline {
                    format!("{}@{}", unit.name, link.levels[b].name)
                } else {
                    unit.name.clone()
                };
                for (i, p) in baseline.param_names().into_iter().enumerate() {
                    entries.push(ParameterEntry {
                        name: format!("baseline[{label}].{p}"),
                        role: ParameterRole::Baseline { unit: u, baseline: b, index: i },
                        free: true,
                    });
                }
            }
            for (i, cov) in unit.predictor.covariate_names().iter().enumerate() {
                entries.push(ParameterEntry {
                    name: format!("beta[{}].{cov}", unit.name),
                    role: ParameterRole::Beta { unit: u, index: i },
                    free: true,
                });
            }
        }
        let mu_free: Vec<usize> = (0..link.levels.len())
            .filter(|&l| !link.is_mu_pinned(&link.levels[l].name))
            .collect();
        let alpha_free: Vec<usize> = (0..link.levels.len())
            .filter(|&l| spec.regimes[l] == BranchRegime::Free)
            .collect();
        let all: Vec<usize> = (0..link.levels.len()).collect();
        let touches = |rows: &[usize], c: usize| rows.iter().any(|&l| link.levels[l].row[c] != 0.0);
        for (c, col) in link.columns.iter().enumerate() {
            entries.push(ParameterEntry {
                name: format!("beta0[{col}]"),
                role: ParameterRole::Beta0 { column: c },
                free: touches(&mu_free, c),
            });
        }
        for (c, col) in link.columns.iter().enumerate() {
            entries.push(ParameterEntry {
                name: format!("zeta[{col}]"),
                role: ParameterRole::Zeta { column: c },
                free: touches(&alpha_free, c),
            });
        }
        for (c, col) in link.columns.iter().enumerate() {
            entries.push(ParameterEntry {
                name: format!("kappa[{col}]"),
                role: ParameterRole::Kappa { column: c },
                free: touches(&all, c),
            });
        }
        Ok((Self { entries }, mu_free, alpha_free, all))
    }

    fn check_identifiable(
        &self,
        spec: &ModelSpec,
        mu_free: &[usize],
        alpha_free: &[usize],
        all: &[usize],
    ) -> Result<(), EstimationError> {
        let link = &spec.frailty;
        let blocks: [(&str, &[usize], fn(&ParameterRole) -> Option<usize>); 3] = [
            ("beta0", mu_free, |r| match r {
                ParameterRole::Beta0 { column } => Some(*column),
                _ => None,
            }),
            ("zeta", alpha_free, |r| match r {
                ParameterRole::Zeta { column } => Some(*column),
                _ => None,
            }),
            ("kappa", all, |r| match r {
                ParameterRole::Kappa { column } => Some(*column),
                _ => None,
            }),
        ];
        for (name, rows, pick) in blocks {
            let cols: Vec<usize> = self
                .entries
                .iter()
                .filter(|e| e.free)
                .filter_map(|e| pick(&e.role))
                .collect();
            if cols.is_empty() {
                continue;
            }
            let m = DMatrix::from_fn(rows.len(), cols.len(), |i, j| link.levels[rows[i]].row[cols[j]]);
            if rows.len() < cols.len() || m.rank(1e-10) < cols.len() {
                return Err(EstimationError::Identifiability(format!(
                    "free {name} columns are not estimable from the stratum design"
                )));
            }
        }
        // A free stratum mean aliases the scale of any baseline it shares or owns.
        let mean_moves: BTreeSet<usize> = mu_free
            .iter()
            .copied()
            .filter(|&l| {
                self.entries.iter().any(|e| {
                    matches!(e.role, ParameterRole::Beta0 { column } if e.free && link.levels[l].row[column] != 0.0)
                })
            })
            .collect();
        let baseline_free = |level: Option<usize>| {
            self.entries.iter().any(|e| {
                matches!(e.role, ParameterRole::Baseline { baseline, .. }
                    if e.free && level.map_or(true, |l| l == baseline))
            })
        };
        if spec.stratified_baseline {
            if let Some(&l) = mean_moves.iter().find(|&&l| baseline_free(Some(l))) {
                return Err(EstimationError::Identifiability(format!(
                    "stratum `{}` has a free mean and its own free baseline",
                    link.levels[l].name
                )));
            }
        } else if !mean_moves.is_empty() && mean_moves.len() == link.levels.len() && baseline_free(None) {
            return Err(EstimationError::Identifiability(
                "every stratum mean is free while the shared baseline is free; pin one stratum mean".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_free(&self) -> usize {
        self.entries.iter().filter(|e| e.free).count()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.name.clone()).collect()
    }

    pub fn free_mask(&self) -> Vec<bool> {
        self.entries.iter().map(|e| e.free).collect()
    }

    pub fn index_of(&self, name: &str) -> Result<usize, EstimationError> {
        self.entries
            .iter()
            .position(|e| e.name == name)
            .ok_or_else(|| EstimationError::UnknownParameter(name.to_string()))
    }

    /// Read the full parameter vector from a model.
    pub fn pack(&self, spec: &ModelSpec) -> Vec<f64> {
        let logs: Vec<Vec<Vec<f64>>> = spec
            .units
            .iter()
            .map(|u| u.baselines.iter().map(|b| b.log_params()).collect())
            .collect();
        self.entries
            .iter()
            .map(|e| match e.role {
                ParameterRole::Baseline { unit, baseline, index } => logs[unit][baseline][index],
                ParameterRole::Beta { unit, index } => spec.units[unit].predictor.coefficients()[index],
                ParameterRole::Beta0 { column } => spec.frailty.beta0[column],
                ParameterRole::Zeta { column } => spec.frailty.zeta[column],
                ParameterRole::Kappa { column } => spec.frailty.kappa[column],
            })
            .collect()
    }

    /// Write a full parameter vector into a copy of `template`.
    pub fn apply(&self, template: &ModelSpec, theta: &[f64]) -> Result<ModelSpec, EstimationError> {
        if theta.len() != self.len() {
            return Err(EstimationError::DimensionMismatch { expected: self.len(), got: theta.len() });
        }
        let mut spec = template.clone();
        let mut logs: Vec<Vec<Vec<f64>>> = spec
            .units
            .iter()
            .map(|u| u.baselines.iter().map(|b| b.log_params()).collect())
            .collect();
        for (e, &v) in self.entries.iter().zip(theta) {
            match e.role {
                ParameterRole::Baseline { unit, baseline, index } => logs[unit][baseline][index] = v,
                ParameterRole::Beta { unit, index } => {
                    spec.units[unit].predictor.coefficients_mut()[index] = v
                }
                ParameterRole::Beta0 { column } => spec.frailty.beta0[column] = v,
                ParameterRole::Zeta { column } => spec.frailty.zeta[column] = v,
                ParameterRole::Kappa { column } => spec.frailty.kappa[column] = v,
            }
        }
        for (u, unit) in spec.units.iter_mut().enumerate() {
            for (b, baseline) in unit.baselines.iter_mut().enumerate() {
                baseline.set_log_params(&logs[u][b]);
            }
        }
        Ok(spec)
    }

    pub fn free_values(&self, theta: &[f64]) -> Vec<f64> {
        self.entries
            .iter()
            .zip(theta)
            .filter(|(e, _)| e.free)
            .map(|(_, &v)| v)
            .collect()
    }

    /// Full vector from `base` with the free entries replaced by `free`.
    pub fn expand(&self, base: &[f64], free: &[f64]) -> Vec<f64> {
        let mut out = base.to_vec();
        let mut it = free.iter();
        for (e, v) in self.entries.iter().zip(out.iter_mut()) {
            if e.free {
                *v = *it.next().expect("free vector too short");
            }
        }
        out
    }
}

/// Log-likelihood as a function of the free parameters.
#[derive(Debug, Clone)]
pub struct LikelihoodProblem<'a> {
    pub template: &'a ModelSpec,
    pub layout: &'a ParameterLayout,
    pub data: &'a PreparedData,
    /// Full vector supplying the pinned entries.
    pub base: Vec<f64>,
}

impl LikelihoodProblem<'_> {
    pub fn loglik(&self, free: &[f64]) -> Result<(f64, usize), EstimationError> {
        let theta = self.layout.expand(&self.base, free);
        let spec = self.layout.apply(self.template, &theta)?;
        let v = total_loglik(&spec, self.data)?;
        Ok((v.value, v.clamped))
    }

    /// Log-likelihood with invalid regions mapped to `-inf`.
    pub fn loglik_or_neg_inf(&self, free: &[f64]) -> f64 {
        match self.loglik(free) {
            Ok((v, _)) if v.is_finite() => v,
            _ => f64::NEG_INFINITY,
        }
    }
}

/// Starting point for the optimizer.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Data-driven defaults for free entries; pinned entries keep the template.
    #[default]
    Default,
    /// The template's own values.
    Template,
    /// A full parameter vector in layout order.
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub init: Init,
    /// Names of entries held at their initial values.
    pub pins: Vec<String>,
    pub bfgs: BfgsOptions,
    /// Jittered restarts after a line-search failure.
    pub restarts: usize,
    pub seed: u64,
    /// Confidence level of reported intervals.
    pub level: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            init: Init::Default,
            pins: Vec::new(),
            bfgs: BfgsOptions::default(),
            restarts: 3,
            seed: 0,
            level: 0.95,
        }
    }
}

/// Point estimate with optional standard error and interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, se: None, ci: None }
    }

    /// Attach an interval on `domain`; the interval is dropped when it cannot
    /// be formed.
    pub fn with_se(value: f64, se: Option<f64>, domain: Domain, level: f64) -> Self {
        let ci = se.and_then(|s| transformed_ci(value, s, domain, level).ok());
        Self { value, se, ci }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub theta: Vec<f64>,
    pub free: Vec<bool>,
    pub estimates: Vec<Estimate>,
    pub loglik: f64,
    /// Inverse observed information over the free entries.
    pub covariance: Option<Vec<Vec<f64>>>,
    /// Hessian of the log-likelihood over the free entries.
    pub hessian: Option<Vec<Vec<f64>>>,
    pub aic: f64,
    pub n_free: usize,
    pub converged: bool,
    pub termination: String,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Clusters whose probability was clamped at the optimum.
    pub clamped: usize,
}

impl FitResult {
    pub fn se(&self, name: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == name)?;
        self.estimates[i].se
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(self.theta[i])
    }
}

/// A fit bundled with what is needed to propagate its uncertainty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub template: ModelSpec,
    pub layout: ParameterLayout,
    pub result: FitResult,
}

impl FittedModel {
    /// The model at the estimate.
    pub fn spec(&self) -> ModelSpec {
        self.layout
            .apply(&self.template, &self.result.theta)
            .expect("fitted vector matches its layout")
    }

    /// Treat `spec` as a fit with every parameter known exactly.
    pub fn pinned(spec: ModelSpec) -> Result<Self, EstimationError> {
        let layout = ParameterLayout::all_pinned(&spec)?;
        let theta = layout.pack(&spec);
        let result = FitResult {
            names: layout.names(),
            estimates: theta.iter().map(|&v| Estimate::exact(v)).collect(),
            free: layout.free_mask(),
            theta,
            loglik: f64::NAN,
            covariance: Some(Vec::new()),
            hessian: Some(Vec::new()),
            aic: f64::NAN,
            n_free: 0,
            converged: true,
            termination: "pinned".into(),
            iterations: 0,
            gradient_norm: 0.0,
            clamped: 0,
        };
        Ok(Self { template: spec, layout, result })
    }

    /// Delta-method standard error of `g` evaluated on the fitted model.
    /// `None` when no covariance is available or `g` fails near the estimate.
    pub fn delta_se<G>(&self, g: G) -> Option<f64>
    where
        G: Fn(&ModelSpec) -> Option<f64>,
    {
        let cov = self.result.covariance.as_ref()?;
        if cov.is_empty() {
            return Some(0.0);
        }
        let free0 = self.layout.free_values(&self.result.theta);
        let eval = |free: &[f64]| -> f64 {
            let theta = self.layout.expand(&self.result.theta, free);
            self.layout
                .apply(&self.template, &theta)
                .ok()
                .and_then(|s| g(&s))
                .unwrap_or(f64::NAN)
        };
        let grad = numdiff::numeric_gradient(eval, &free0).ok()?;
        let mut var = 0.0;
        for i in 0..grad.len() {
            for j in 0..grad.len() {
                var += grad[i] * cov[i][j] * grad[j];
            }
        }
        Some(var.max(0.0).sqrt())
    }

    /// `g` at the estimate with its delta-method interval on `domain`.
    pub fn estimate<G>(&self, g: G, domain: Domain, level: f64) -> Option<Estimate>
    where
        G: Fn(&ModelSpec) -> Option<f64>,
    {
        let value = g(&self.spec())?;
        let se = self.delta_se(&g);
        Some(Estimate::with_se(value, se, domain, level))
    }
}

/// Data-driven starting values for the free entries of `layout`.
///
/// Piecewise baselines get rates from the complementary-log-log transform of
/// the observed prevalence in each interval. Parametric baselines start from
/// a constant hazard with the same overall cumulative hazard. Link
/// intercepts start at `alpha = -0.1` and `gamma = 0.5`; every other
/// coefficient starts at zero.
pub fn default_initial(
    spec: &ModelSpec,
    layout: &ParameterLayout,
    data: &CurrentStatusDataset,
) -> Vec<f64> {
    let mut init = spec.clone();
    let levels = &spec.frailty.levels;
    for (u, unit) in init.units.iter_mut().enumerate() {
        let name = &spec.units[u].name;
        for (b, baseline) in unit.baselines.iter_mut().enumerate() {
            let obs: Vec<(f64, f64, f64)> = data
                .clusters
                .iter()
                .filter(|c| !spec.stratified_baseline || c.stratum == levels[b].name)
                .flat_map(|c| {
                    c.records
                        .iter()
                        .filter(move |r| &r.unit == name)
                        .map(move |r| (r.time, r.event as u8 as f64, c.weight))
                })
                .collect();
            *baseline = initial_baseline(baseline, &obs);
        }
        for c in unit.predictor.coefficients_mut() {
            *c = 0.0;
        }
    }
    let intercept = intercept_column(spec);
    let link = &mut init.frailty;
    for c in 0..link.columns.len() {
        let is_int = Some(c) == intercept;
        link.zeta[c] = if is_int { -0.1 } else { 0.0 };
        link.kappa[c] = if is_int { 0.5f64.ln() } else { 0.0 };
        link.beta0[c] = 0.0;
    }
    let template = layout.pack(spec);
    let start = layout.pack(&init);
    layout
        .entries
        .iter()
        .zip(template.iter().zip(start))
        .map(|(e, (&t, s))| if e.free { s } else { t })
        .collect()
}

fn intercept_column(spec: &ModelSpec) -> Option<usize> {
    let link = &spec.frailty;
    link.columns
        .iter()
        .position(|c| c.eq_ignore_ascii_case("intercept"))
        .or_else(|| {
            (!link.columns.is_empty() && link.levels.iter().all(|l| l.row[0] == 1.0)).then_some(0)
        })
}

/// `(time, event, weight)` observations of one unit.
fn initial_baseline(current: &Baseline, obs: &[(f64, f64, f64)]) -> Baseline {
    let cloglog = |sel: &mut dyn Iterator<Item = &(f64, f64, f64)>| -> Option<(f64, f64)> {
        let (mut w, mut wt, mut wd) = (0.0, 0.0, 0.0);
        for &(t, d, wi) in sel {
            w += wi;
            wt += wi * t;
            wd += wi * d;
        }
        if w <= 0.0 {
            return None;
        }
        let p = (wd / w).clamp(0.5 / w.max(1.0), 1.0 - 0.5 / w.max(1.0));
        Some((wt / w, -(1.0 - p).ln()))
    };
    const FLOOR: f64 = 1e-3;
    match current {
        Baseline::PiecewiseConstant(p) => {
            let cuts = p.cutpoints();
            let mut rates = Vec::with_capacity(cuts.len());
            let (mut t_prev, mut h_prev) = (0.0, 0.0);
            for i in 0..cuts.len() {
                let hi = cuts.get(i + 1).copied().unwrap_or(f64::INFINITY);
                let point = cloglog(&mut obs.iter().filter(|o| o.0 >= cuts[i] && o.0 < hi));
                let rate = match point {
                    Some((t, h)) if t > t_prev => {
                        let r = ((h - h_prev) / (t - t_prev)).max(FLOOR);
                        t_prev = t;
                        h_prev = h_prev.max(h);
                        r
                    }
                    _ => rates.last().copied().unwrap_or(0.01),
                };
                rates.push(rate);
            }
            Baseline::piecewise(cuts.to_vec(), rates).unwrap_or_else(|_| current.clone())
        }
        Baseline::Parametric(par) => {
            let rate = cloglog(&mut obs.iter())
                .filter(|(t, _)| *t > 0.0)
                .map(|(t, h)| (h / t).max(FLOOR))
                .unwrap_or(0.01);
            let b = match par {
                ParametricBaseline::Exponential { .. } => Baseline::exponential(rate),
                ParametricBaseline::Weibull { .. } => Baseline::weibull(1.0, 1.0 / rate),
                ParametricBaseline::GeneralizedGamma { .. } => {
                    Baseline::generalized_gamma(1.0, 1.0, 1.0 / rate)
                }
            };
            b.unwrap_or_else(|_| current.clone())
        }
    }
}

/// Maximize the log-likelihood of `data` under the structure of `spec`.
///
/// A run that stops without meeting the convergence tests is returned with
/// `converged = false` rather than as an error.
pub fn fit(
    spec: &ModelSpec,
    data: &CurrentStatusDataset,
    options: &FitOptions,
) -> Result<FittedModel, EstimationError> {
    if data.is_empty() {
        return Err(EstimationError::EmptyData);
    }
    let layout = ParameterLayout::new(spec, &options.pins)?;
    let prepared = PreparedData::new(spec, data)?;
    let start = match &options.init {
        Init::Default => default_initial(spec, &layout, data),
        Init::Template => layout.pack(spec),
        Init::Vector(v) => {
            if v.len() != layout.len() {
                return Err(EstimationError::DimensionMismatch { expected: layout.len(), got: v.len() });
            }
            v.clone()
        }
    };
    let problem = LikelihoodProblem {
        template: spec,
        layout: &layout,
        data: &prepared,
        base: start.clone(),
    };
    let x0 = layout.free_values(&start);
    if let Err(e) = problem.loglik(&x0) {
        return Err(EstimationError::InvalidInitialPoint(e.to_string()));
    }
    let objective = |x: &[f64]| -problem.loglik_or_neg_inf(x);
    let gradient = |x: &[f64]| numdiff::numeric_gradient(objective, x).ok();

    let run = |x: &[f64]| optim::minimize(objective, gradient, x, &options.bfgs);
    let mut best = run(&x0);
    let mut iterations = best.iterations;
    let mut rng = ChaCha20Rng::seed_from_u64(options.seed);
    let jitter = Normal::new(0.0, 0.1).expect("valid jitter law");
    for _ in 0..options.restarts {
        if !matches!(best.termination, Termination::LineSearchFailed | Termination::GradientUnavailable) {
            break;
        }
        let mut x: Vec<f64> = best.x.iter().map(|v| v + jitter.sample(&mut rng)).collect();
        if !objective(&x).is_finite() {
            x = x0.iter().map(|v| v + jitter.sample(&mut rng)).collect();
            if !objective(&x).is_finite() {
                continue;
            }
        }
        let next = run(&x);
        iterations += next.iterations;
        if next.f <= best.f || next.converged() {
            best = next;
        }
    }

    let (loglik, clamped) = problem.loglik(&best.x)?;
    let theta = layout.expand(&start, &best.x);
    let n_free = layout.n_free();
    let hessian = if n_free == 0 {
        Some(Vec::new())
    } else {
        numdiff::hessian(|x| problem.loglik_or_neg_inf(x), &best.x).ok()
    };
    let covariance = hessian.as_ref().and_then(|h| invert_information(h));
    let mut se = vec![Some(0.0); layout.len()];
    let mut k = 0;
    for (i, e) in layout.entries.iter().enumerate() {
        if e.free {
            se[i] = covariance.as_ref().map(|c| c[k][k].max(0.0).sqrt());
            k += 1;
        }
    }
    let estimates = theta
        .iter()
        .zip(&se)
        .map(|(&v, &s)| Estimate::with_se(v, s, Domain::Unconstrained, options.level))
        .collect();
    let result = FitResult {
        names: layout.names(),
        free: layout.free_mask(),
        estimates,
        theta,
        loglik,
        covariance,
        hessian,
        aic: aic_value(loglik, n_free),
        n_free,
        converged: best.converged(),
        termination: format!("{:?}", best.termination),
        iterations,
        gradient_norm: best.gradient_norm(),
        clamped,
    };
    Ok(FittedModel { template: spec.clone(), layout, result })
}

/// Fit the binomial member for each trial count in `trials`, pinning every
/// stratum to it in turn.
pub fn profile_binomial_trials(
    spec: &ModelSpec,
    data: &CurrentStatusDataset,
    trials: &[u32],
    options: &FitOptions,
) -> Result<Vec<(u32, FittedModel)>, EstimationError> {
    trials
        .iter()
        .map(|&b| {
            let mut s = spec.clone();
            s.regimes = vec![BranchRegime::Binomial { trials: b }; s.frailty.levels.len()];
            fit(&s, data, options).map(|f| (b, f))
        })
        .collect()
}

/// `(-H)^{-1}` when `-H` is positive definite.
fn invert_information(h: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = h.len();
    let info = DMatrix::from_fn(n, n, |i, j| -h[i][j]);
    let chol = info.cholesky()?;
    let inv = chol.inverse();
    Some((0..n).map(|i| (0..n).map(|j| 0.5 * (inv[(i, j)] + inv[(j, i)])).collect()).collect())
}

/// Support of a reported quantity, which picks its interval transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Positive,
    UnitInterval,
    Unconstrained,
}

/// Two-sided standard normal quantile for confidence `level`.
pub fn normal_quantile(level: f64) -> f64 {
    StdNormal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(0.5 + level / 2.0)
}

/// Wald interval built on the `ln` scale for positive quantities, on the
/// `ln(-ln)` scale for probabilities and directly otherwise.
pub fn transformed_ci(
    estimate: f64,
    se: f64,
    domain: Domain,
    level: f64,
) -> Result<(f64, f64), EstimationError> {
    if !(se >= 0.0) {
        return Err(EstimationError::NegativeStandardError(se));
    }
    let z = normal_quantile(level);
    let violation = || EstimationError::DomainViolation { estimate, domain };
    match domain {
        Domain::Unconstrained => {
            if !estimate.is_finite() {
                return Err(violation());
            }
            Ok((estimate - z * se, estimate + z * se))
        }
        Domain::Positive => {
            if !(estimate > 0.0 && estimate.is_finite()) {
                return Err(violation());
            }
            let s = se / estimate;
            let l = estimate.ln();
            Ok(((l - z * s).exp(), (l + z * s).exp()))
        }
        Domain::UnitInterval => {
            if !(estimate > 0.0 && estimate < 1.0) {
                return Err(violation());
            }
            let ln = estimate.ln();
            let eta = (-ln).ln();
            let s = se / (estimate * ln.abs());
            Ok(((-(eta + z * s).exp()).exp(), (-(eta - z * s).exp()).exp()))
        }
    }
}

pub fn aic_value(loglik: f64, n_free: usize) -> f64 {
    -2.0 * loglik + 2.0 * n_free as f64
}

pub fn aic(fit: &FitResult) -> f64 {
    aic_value(fit.loglik, fit.n_free)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrtResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Likelihood-ratio test of `null` nested in `alt`.
pub fn lrt(null: &FitResult, alt: &FitResult, df: usize) -> Result<LrtResult, EstimationError> {
    lrt_from_logliks(null.loglik, alt.loglik, df)
}

pub fn lrt_from_logliks(null: f64, alt: f64, df: usize) -> Result<LrtResult, EstimationError> {
    if df == 0 {
        return Err(EstimationError::InvalidDegreesOfFreedom(0));
    }
    let raw = 2.0 * (alt - null);
    if raw < -1e-6 {
        return Err(EstimationError::NegativeStatistic(raw));
    }
    let statistic = raw.max(0.0);
    let p_value = if statistic == 0.0 {
        1.0
    } else {
        ChiSquared::new(df as f64).expect("positive df").sf(statistic)
    };
    Ok(LrtResult { statistic, df, p_value })
}

/// Likelihood-ratio test with `df` from the difference in free parameters.
pub fn nested_lrt(null: &FitResult, alt: &FitResult) -> Result<LrtResult, EstimationError> {
    let df = alt.n_free as i64 - null.n_free as i64;
    if df < 1 {
        return Err(EstimationError::InvalidDegreesOfFreedom(df));
    }
    lrt(null, alt, df as usize)
}

/// Frailty parameters of one stratum at the estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSummary {
    pub level: String,
    pub branch: String,
    pub alpha: Estimate,
    pub gamma: Estimate,
    pub mu: Estimate,
    pub psi: Option<Estimate>,
    pub nu: Option<Estimate>,
    pub pi: Option<Estimate>,
}

/// Per-stratum `(alpha, gamma, mu)` and the derived branch parameters, each
/// with a delta-method interval.
pub fn frailty_summary(model: &FittedModel, level: f64) -> Result<Vec<StratumSummary>, EstimationError> {
    let spec = model.spec();
    let mut out = Vec::new();
    for (l, lv) in spec.frailty.levels.iter().enumerate() {
        let branch = spec.frailty_params(l)?.classify()?;
        let param = |f: fn(&crate::family::AddamsParameters) -> f64| {
            move |s: &ModelSpec| s.frailty_params(l).ok().map(|p| f(&p))
        };
        let derived = |f: fn(&FrailtyBranch) -> Option<f64>| {
            move |s: &ModelSpec| s.frailty_params(l).ok()?.classify().ok().and_then(|b| f(&b))
        };
        let est = |g: &dyn Fn(&ModelSpec) -> Option<f64>, d: Domain| model.estimate(g, d, level);
        let alpha = est(&param(|p| p.alpha()), Domain::Unconstrained).expect("alpha is defined");
        let gamma = est(&param(|p| p.gamma()), Domain::Positive).expect("gamma is defined");
        let mu = est(&param(|p| p.mu()), Domain::Positive).expect("mu is defined");
        let psi = branch.psi().and_then(|_| est(&derived(|b| b.psi()), Domain::Positive));
        let nu = branch.nu().and_then(|_| est(&derived(|b| b.nu()), Domain::Positive));
        let pi = branch.pi().and_then(|_| est(&derived(|b| b.pi()), Domain::UnitInterval));
        out.push(StratumSummary {
            level: lv.name.clone(),
            branch: format!("{:?}", branch.kind()),
            alpha,
            gamma,
            mu,
            psi,
            nu,
            pi,
        });
    }
    Ok(out)
}
