//! Hazard ratios between latent risk categories, risk-category tables and
//! time trajectories of heterogeneity measures.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::{Domain, Estimate, FittedModel};
use crate::family::{AddamsParameters, FamilyError, FrailtyBranch};
use crate::hazard::{HazardError, ModelSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error(transparent)]
    Hazard(#[from] HazardError),
    #[error("risk categories need a discrete frailty law; stratum `{0}` has the gamma limit")]
    ContinuousStratum(String),
    #[error("risk category {k} is outside the {size} support points")]
    OutOfSupport { k: usize, size: usize },
    #[error("risk categories are numbered from 1")]
    ZeroCategory,
    #[error("time grid must be non-empty, non-negative and strictly increasing")]
    InvalidGrid,
}

/// A hazard ratio that may be infinite (`x/0`) or undefined (`0/0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HazardRatio {
    Finite(f64),
    Infinite,
    Undefined,
}

impl HazardRatio {
    pub fn from_ratio(num: f64, den: f64) -> Self {
        match (num == 0.0, den == 0.0) {
            (true, true) => HazardRatio::Undefined,
            (false, true) => HazardRatio::Infinite,
            _ => HazardRatio::Finite(num / den),
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            HazardRatio::Finite(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for HazardRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HazardRatio::Finite(v) => write!(f, "{v}"),
            HazardRatio::Infinite => f.write_str("inf"),
            HazardRatio::Undefined => f.write_str("undef"),
        }
    }
}

fn check_category(branch: &FrailtyBranch, k: usize) -> Result<(), RiskError> {
    if k == 0 {
        return Err(RiskError::ZeroCategory);
    }
    if !branch.is_discrete() {
        return Err(FamilyError::ContinuousBranch.into());
    }
    match branch.support_size() {
        Some(size) if k > size => Err(RiskError::OutOfSupport { k, size }),
        _ => Ok(()),
    }
}

/// `z_(k+1) / z_(k)` within one stratum.
pub fn hr_within(branch: &FrailtyBranch, k: usize) -> Result<HazardRatio, RiskError> {
    check_category(branch, k)?;
    check_category(branch, k + 1)?;
    let k = k as f64;
    Ok(match *branch {
        FrailtyBranch::ShiftedScaledNegBinomial { nu, .. } => HazardRatio::Finite((nu + k) / (nu + k - 1.0)),
        _ if k == 1.0 => HazardRatio::Infinite,
        _ => HazardRatio::Finite(k / (k - 1.0)),
    })
}

/// `z_i,(k) / z_i',(k)` between two strata.
pub fn hr_across(
    branch: &FrailtyBranch,
    reference: &FrailtyBranch,
    k: usize,
) -> Result<HazardRatio, RiskError> {
    check_category(branch, k)?;
    check_category(reference, k)?;
    Ok(HazardRatio::from_ratio(branch.support_value(k)?, reference.support_value(k)?))
}

/// Cumulative probabilities `P(Z <= z_(k))` for `k = 1..=n`, fewer when the
/// support ends first.
fn cumulative(branch: &FrailtyBranch, n: usize) -> Result<Vec<f64>, RiskError> {
    Ok(branch.support()?.take(n).map(|p| p.cum_prob).collect())
}

/// Upper limit on the categories scanned when matching quantiles.
pub const QUANTILE_SCAN_LIMIT: usize = 1_000_000;

/// Category of `reference` whose cumulative probability falls in
/// `(F(k-1), F(k)]` of `branch` (the smallest such), or else the one closest
/// to `F(k)`; returned with `z_i,(k) / z_i',(k')`.
pub fn hr_across_quantile_matched(
    branch: &FrailtyBranch,
    reference: &FrailtyBranch,
    k: usize,
) -> Result<(usize, HazardRatio), RiskError> {
    check_category(branch, k)?;
    if !reference.is_discrete() {
        return Err(FamilyError::ContinuousBranch.into());
    }
    let own = cumulative(branch, k)?;
    let upper = own[k - 1];
    let lower = if k > 1 { own[k - 2] } else { 0.0 };
    let mut best = (1, f64::INFINITY);
    let mut matched = None;
    for (idx, point) in reference.support()?.take(QUANTILE_SCAN_LIMIT).enumerate() {
        let kk = idx + 1;
        let f = point.cum_prob;
        if f > lower && f <= upper {
            matched = Some(kk);
            break;
        }
        let d = (f - upper).abs();
        if d < best.1 {
            best = (kk, d);
        }
        if f > upper {
            break;
        }
    }
    let kk = matched.unwrap_or(best.0);
    let hr = HazardRatio::from_ratio(branch.support_value(k)?, reference.support_value(kk)?);
    Ok((kk, hr))
}

/// A hazard ratio with its interval when finite and positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioEstimate {
    pub ratio: HazardRatio,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RcRow {
    pub k: usize,
    pub z: Estimate,
    pub prob: Estimate,
    pub cum_prob: Estimate,
    /// `z_(k+1) / z_(k)`; absent past the end of a bounded support.
    pub hr_within: Option<RatioEstimate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RcStratum {
    pub level: String,
    pub branch: FrailtyBranch,
    pub rows: Vec<RcRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RcComparisonRow {
    pub k: usize,
    /// `P(Z_i <= z_i,(k)) / P(Z_ref <= z_ref,(k))`.
    pub cum_prob_ratio: Estimate,
    pub hr_across: RatioEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RcComparison {
    pub level: String,
    pub reference: String,
    pub rows: Vec<RcComparisonRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RcTable {
    pub strata: Vec<RcStratum>,
    /// Every non-reference stratum against the reference stratum.
    pub comparisons: Vec<RcComparison>,
}

fn stratum_branch(spec: &ModelSpec, level: usize) -> Option<FrailtyBranch> {
    spec.frailty_params(level).ok()?.classify().ok()
}

/// Estimate carrying a point interval for exact zeros and ones, and a
/// transformed interval otherwise.
fn bounded_estimate(model: &FittedModel, g: impl Fn(&ModelSpec) -> Option<f64>, domain: Domain, level: f64) -> Option<Estimate> {
    let mut e = model.estimate(&g, domain, level)?;
    let at_edge = match domain {
        Domain::Positive => e.value == 0.0,
        Domain::UnitInterval => e.value == 0.0 || e.value == 1.0,
        Domain::Unconstrained => false,
    };
    if at_edge && e.ci.is_none() && e.se.is_some() {
        e.ci = Some((e.value, e.value));
    }
    Some(e)
}

fn ratio_estimate(
    model: &FittedModel,
    g: impl Fn(&ModelSpec) -> Option<HazardRatio>,
    level: f64,
) -> Option<RatioEstimate> {
    let ratio = g(&model.spec())?;
    let (se, ci) = match ratio {
        HazardRatio::Finite(v) if v > 0.0 => {
            let e = model.estimate(|s| g(s).and_then(HazardRatio::finite), Domain::Positive, level)?;
            (e.se, e.ci)
        }
        _ => (None, None),
    };
    Some(RatioEstimate { ratio, se, ci })
}

/// Ranked risk categories of every stratum with delta-method intervals, and
/// cross-stratum comparisons against the reference stratum.
pub fn rc_table(model: &FittedModel, k_max: usize, level: f64) -> Result<RcTable, RiskError> {
    if k_max == 0 {
        return Err(RiskError::ZeroCategory);
    }
    let spec = model.spec();
    let link = &spec.frailty;
    let mut strata = Vec::new();
    for (l, lv) in link.levels.iter().enumerate() {
        let branch = spec.frailty_params(l)?.classify()?;
        if !branch.is_discrete() {
            return Err(RiskError::ContinuousStratum(lv.name.clone()));
        }
        let n = branch.support_size().map_or(k_max, |s| s.min(k_max));
        let mut rows = Vec::with_capacity(n);
        for k in 1..=n {
            let point = move |s: &ModelSpec| stratum_branch(s, l)?.support().ok()?.nth(k - 1);
            let z = bounded_estimate(model, |s| point(s).map(|p| p.z), Domain::Positive, level)
                .expect("support point exists");
            let prob = bounded_estimate(model, |s| point(s).map(|p| p.prob), Domain::UnitInterval, level)
                .expect("support point exists");
            let cum_prob = bounded_estimate(model, |s| point(s).map(|p| p.cum_prob), Domain::UnitInterval, level)
                .expect("support point exists");
            let hr = ratio_estimate(model, |s| hr_within(&stratum_branch(s, l)?, k).ok(), level);
            rows.push(RcRow { k, z, prob, cum_prob, hr_within: hr });
        }
        strata.push(RcStratum { level: lv.name.clone(), branch, rows });
    }
    let r = link.level_index(&link.reference)?;
    let mut comparisons = Vec::new();
    for (l, lv) in link.levels.iter().enumerate() {
        if l == r {
            continue;
        }
        let n = strata[l].rows.len().min(strata[r].rows.len());
        let mut rows = Vec::with_capacity(n);
        for k in 1..=n {
            let cum = move |s: &ModelSpec, level: usize| {
                Some(stratum_branch(s, level)?.support().ok()?.nth(k - 1)?.cum_prob)
            };
            let cum_prob_ratio = bounded_estimate(model, |s| Some(cum(s, l)? / cum(s, r)?), Domain::Positive, level)
                .expect("cumulative probabilities exist");
            let hr_across = ratio_estimate(
                model,
                |s| hr_across(&stratum_branch(s, l)?, &stratum_branch(s, r)?, k).ok(),
                level,
            )
            .expect("hazard ratio exists");
            rows.push(RcComparisonRow { k, cum_prob_ratio, hr_across });
        }
        comparisons.push(RcComparison { level: lv.name.clone(), reference: link.reference.clone(), rows });
    }
    Ok(RcTable { strata, comparisons })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub time: f64,
    pub value: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryCurve {
    pub name: String,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectories {
    pub level: String,
    pub rfv: TrajectoryCurve,
    pub conditional_mean: TrajectoryCurve,
    /// Marginal prevalence `1 - L(Lambda_j(t))` per unit.
    pub prevalence: Vec<TrajectoryCurve>,
}

/// Cumulative hazard of `unit` at `t`: the bare baseline, or scaled by the
/// unit's linear predictor when a covariate profile is supplied.
fn profile_hazard(
    spec: &ModelSpec,
    level: usize,
    unit: usize,
    t: f64,
    profile: Option<&BTreeMap<String, f64>>,
) -> Result<f64, HazardError> {
    let base = spec.baseline(unit, level).cumulative(t)?;
    Ok(match profile {
        Some(p) => {
            let pred = &spec.units[unit].predictor;
            pred.eta(&pred.gather(p)?).exp() * base
        }
        None => base,
    })
}

/// RFV, conditional mean and per-unit marginal prevalence of a stratum over
/// a time grid. The heterogeneity curves condition on the summed cumulative
/// hazard of `units`.
pub fn trajectories(
    model: &FittedModel,
    level_name: &str,
    units: &[String],
    grid: &[f64],
    profile: Option<&BTreeMap<String, f64>>,
    level: f64,
) -> Result<Trajectories, RiskError> {
    if grid.is_empty() || grid[0] < 0.0 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(RiskError::InvalidGrid);
    }
    let spec = model.spec();
    let l = spec.frailty.level_index(level_name)?;
    let idx = units
        .iter()
        .map(|u| spec.unit_index(u))
        .collect::<Result<Vec<_>, _>>()?;
    // Surface hazard and parameter errors before the delta-method closures swallow them.
    spec.frailty_params(l)?;
    for &u in &idx {
        profile_hazard(&spec, l, u, grid[grid.len() - 1], profile)?;
    }
    let total = |s: &ModelSpec, t: f64| -> Option<f64> {
        idx.iter().map(|&u| profile_hazard(s, l, u, t, profile).ok()).sum()
    };
    let params = |s: &ModelSpec| -> Option<AddamsParameters> { s.frailty_params(l).ok() };
    let curve = |name: &str, domain: Domain, g: &dyn Fn(&ModelSpec, f64) -> Option<f64>| {
        let points = grid
            .iter()
            .map(|&t| {
                let e = bounded_estimate(model, |s| g(s, t), domain, level).expect("curve is defined on the grid");
                CurvePoint { time: t, value: e.value, lo: e.ci.map(|c| c.0), hi: e.ci.map(|c| c.1) }
            })
            .collect();
        TrajectoryCurve { name: name.to_string(), points }
    };
    let rfv = curve("rfv", Domain::Positive, &|s, t| Some(params(s)?.rfv(total(s, t)?)));
    let conditional_mean = curve("conditional_mean", Domain::Positive, &|s, t| {
        Some(params(s)?.conditional_moments(total(s, t)?).ok()?.mean)
    });
    let prevalence = idx
        .iter()
        .zip(units)
        .map(|(&u, name)| {
            curve(&format!("prevalence[{name}]"), Domain::UnitInterval, &|s, t| {
                let h = profile_hazard(s, l, u, t, profile).ok()?;
                Some(1.0 - params(s)?.laplace(h).ok()?)
            })
        })
        .collect();
    Ok(Trajectories { level: level_name.to_string(), rfv, conditional_mean, prevalence })
}
