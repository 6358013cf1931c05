//! Marginal likelihood of clustered current-status observations.
//!
//! Given a shared frailty `Z` with Laplace transform `L`, a cluster whose
//! units with an event form the set `d` contributes
//!
//! ```text
//! P = sum_{A subset of d} (-1)^|A| L(Lambda_A + Lambda_{not d})
//! ```
//!
//! The subsets are visited in Gray-code order and every term is scaled by
//! the largest one, `L(Lambda_{not d})`, before the alternating sum is
//! accumulated with compensation, separately for each parity. For discrete
//! laws the lowest support point is taken out of the sum first.

use rayon::prelude::*;
use thiserror::Error;

use crate::data::CurrentStatusDataset;
use crate::family::{AddamsParameters, FamilyError};
use crate::hazard::{Baseline, HazardError, ModelSpec};
use crate::summation::{pairwise_sum, CompensatedSum};

/// Alternating sums in `(-CLAMP_TOLERANCE, 0]` are treated as round-off.
pub const CLAMP_TOLERANCE: f64 = 1e-12;
const CLAMP_FLOOR: f64 = 1e-300;
/// Clusters with more events than this are refused (2^n terms).
pub const MAX_EVENTS_PER_CLUSTER: usize = 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LikelihoodError {
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error(transparent)]
    Hazard(#[from] HazardError),
    #[error("inclusion-exclusion sum is non-positive ({0:e})")]
    NonPositiveProbability(f64),
    #[error("cluster `{id}`: {source}")]
    Cluster {
        id: String,
        #[source]
        source: Box<LikelihoodError>,
    },
    #[error("{0} events in one cluster exceed the supported maximum")]
    TooManyEvents(usize),
    #[error("parameter vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dataset is empty or malformed: {0}")]
    Data(String),
}

/// Log-probability of one cluster plus whether round-off clamping was needed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterValue {
    pub loglik: f64,
    pub clamped: bool,
}

/// Log-probability of the observed current-status pattern of one cluster.
///
/// `cumulative_hazards[j]` is `Lambda^(j)` at the unit's monitoring time and
/// `events[j]` its indicator.
pub fn cluster_loglik(
    params: &AddamsParameters,
    cumulative_hazards: &[f64],
    events: &[bool],
) -> Result<ClusterValue, LikelihoodError> {
    debug_assert_eq!(cumulative_hazards.len(), events.len());
    let mut base = CompensatedSum::new();
    let mut event_hazards = Vec::with_capacity(events.len());
    for (&h, &e) in cumulative_hazards.iter().zip(events) {
        if e {
            event_hazards.push(h);
        } else {
            base.add(h);
        }
    }
    let s0 = base.value();
    let log_l0 = params.log_laplace(s0)?;
    let k = event_hazards.len();
    if k == 0 {
        return Ok(ClusterValue { loglik: log_l0, clamped: false });
    }
    if k > MAX_EVENTS_PER_CLUSTER {
        return Err(LikelihoodError::TooManyEvents(k));
    }

    match params.lowest_atom() {
        Some((z1, ln_p1)) => split_alternating_sum(params, s0, &event_hazards, z1, ln_p1),
        None => {
            let log_l = |s: f64| params.log_laplace(s);
            let scaled = alternating_sum(log_l, s0, &event_hazards, log_l0)?;
            finish(log_l0, scaled, f64::NEG_INFINITY)
        }
    }
}

/// `sum_A (-1)^|A| exp(f(s0 + Lambda_A) - f0)` over subsets `A` of the
/// event hazards, in Gray-code order.
fn alternating_sum<F>(f: F, s0: f64, event_hazards: &[f64], f0: f64) -> Result<f64, LikelihoodError>
where
    F: Fn(f64) -> Result<f64, FamilyError>,
{
    let k = event_hazards.len();
    let mut even = CompensatedSum::new();
    let mut odd = CompensatedSum::new();
    even.add(1.0);
    let mut in_subset = vec![false; k];
    let mut size = 0usize;
    let mut s = s0;
    for i in 1u64..(1u64 << k) {
        let bit = i.trailing_zeros() as usize;
        if in_subset[bit] {
            in_subset[bit] = false;
            size -= 1;
            s -= event_hazards[bit];
        } else {
            in_subset[bit] = true;
            size += 1;
            s += event_hazards[bit];
        }
        let term = (f(s.max(0.0))? - f0).exp();
        if size % 2 == 0 {
            even.add(term);
        } else {
            odd.add(term);
        }
    }
    Ok(even.value() - odd.value())
}

/// Discrete laws: the lowest support point contributes the exact product
/// `p1 exp(-z1 s0) prod_j (1 - exp(-z1 Lambda_j))`, and only the remaining
/// mass goes through the alternating sum. This keeps relative accuracy when
/// the lowest atom dominates, e.g. a large cure fraction.
fn split_alternating_sum(
    params: &AddamsParameters,
    s0: f64,
    event_hazards: &[f64],
    z1: f64,
    ln_p1: f64,
) -> Result<ClusterValue, LikelihoodError> {
    let ln_atom = ln_p1 - z1 * s0
        + event_hazards
            .iter()
            .map(|&h| (-(-z1 * h).exp_m1()).ln())
            .sum::<f64>();
    let log_r0 = params.log_laplace_excess(s0)?;
    if log_r0 == f64::NEG_INFINITY {
        return finish(ln_atom, 1.0, f64::NEG_INFINITY);
    }
    let excess = |s: f64| params.log_laplace_excess(s);
    let scaled = alternating_sum(excess, s0, event_hazards, log_r0)?;
    finish(log_r0, scaled, ln_atom)
}

/// `ln(exp(ln_extra) + exp(log_scale) * scaled)` with round-off clamping of
/// a slightly negative `scaled`.
fn finish(log_scale: f64, scaled: f64, ln_extra: f64) -> Result<ClusterValue, LikelihoodError> {
    let (scaled, clamped) = if scaled > 0.0 {
        (scaled, false)
    } else if scaled > -CLAMP_TOLERANCE {
        (0.0, true)
    } else {
        return Err(LikelihoodError::NonPositiveProbability(scaled));
    };
    let main = if scaled > 0.0 { log_scale + scaled.ln() } else { f64::NEG_INFINITY };
    let (hi, lo) = if main >= ln_extra { (main, ln_extra) } else { (ln_extra, main) };
    if hi == f64::NEG_INFINITY {
        return Ok(ClusterValue { loglik: log_scale + CLAMP_FLOOR.ln(), clamped: true });
    }
    Ok(ClusterValue { loglik: hi + (lo - hi).exp().ln_1p(), clamped })
}

#[derive(Debug, Clone)]
struct PreparedRecord {
    unit: usize,
    time: f64,
    event: bool,
    /// Covariates in the unit predictor's order.
    x: Vec<f64>,
    /// Per-interval exposure when the unit's baseline is piecewise constant.
    exposure: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
struct PreparedCluster {
    id: String,
    level: usize,
    weight: f64,
    records: Vec<PreparedRecord>,
}

/// A dataset bound to a model structure: unit names, strata and covariates
/// resolved once so that repeated likelihood evaluations only redo arithmetic.
#[derive(Debug, Clone)]
pub struct PreparedData {
    clusters: Vec<PreparedCluster>,
}

impl PreparedData {
    pub fn new(spec: &ModelSpec, data: &CurrentStatusDataset) -> Result<Self, LikelihoodError> {
        data.validate().map_err(|e| LikelihoodError::Data(e.to_string()))?;
        let mut clusters = Vec::with_capacity(data.clusters.len());
        for c in &data.clusters {
            let wrap = |e: LikelihoodError| LikelihoodError::Cluster {
                id: c.id.clone(),
                source: Box::new(e),
            };
            let level = spec
                .frailty
                .level_index(&c.stratum)
                .map_err(|e| wrap(e.into()))?;
            let mut records = Vec::with_capacity(c.records.len());
            for r in &c.records {
                let unit = spec.unit_index(&r.unit).map_err(|e| wrap(e.into()))?;
                let x = spec.units[unit]
                    .predictor
                    .gather(&r.covariates)
                    .map_err(|e| wrap(e.into()))?;
                let exposure = match spec.baseline(unit, level) {
                    Baseline::PiecewiseConstant(p) => Some(p.exposures(r.time)),
                    Baseline::Parametric(_) => None,
                };
                records.push(PreparedRecord {
                    unit,
                    time: r.time,
                    event: r.event,
                    x,
                    exposure,
                });
            }
            clusters.push(PreparedCluster {
                id: c.id.clone(),
                level,
                weight: c.weight,
                records,
            });
        }
        Ok(Self { clusters })
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }
}

/// Total weighted log-likelihood and the number of clamped clusters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoglikValue {
    pub value: f64,
    pub clamped: usize,
}

fn record_hazard(spec: &ModelSpec, level: usize, r: &PreparedRecord) -> Result<f64, HazardError> {
    let u = &spec.units[r.unit];
    let base = match (&r.exposure, spec.baseline(r.unit, level)) {
        (Some(exp), Baseline::PiecewiseConstant(p)) => {
            p.rates().iter().zip(exp).map(|(a, b)| a * b).sum()
        }
        (_, b) => b.cumulative(r.time)?,
    };
    Ok(u.predictor.eta(&r.x).exp() * base)
}

fn evaluate_cluster(
    spec: &ModelSpec,
    params: &[Result<AddamsParameters, FamilyError>],
    c: &PreparedCluster,
) -> Result<ClusterValue, LikelihoodError> {
    let p = params[c.level].clone()?;
    let mut hazards = Vec::with_capacity(c.records.len());
    let mut events = Vec::with_capacity(c.records.len());
    for r in &c.records {
        hazards.push(record_hazard(spec, c.level, r)?);
        events.push(r.event);
    }
    cluster_loglik(&p, &hazards, &events)
}

/// Weighted marginal log-likelihood of `data` under `spec`.
///
/// Clusters are evaluated in parallel and reduced over a fixed pairwise tree
/// in cluster order, so the value does not depend on the thread count.
pub fn total_loglik(spec: &ModelSpec, data: &PreparedData) -> Result<LoglikValue, LikelihoodError> {
    let params: Vec<_> = (0..spec.frailty.levels.len())
        .map(|i| spec.frailty_params(i))
        .collect();
    let values: Vec<Result<(f64, bool), LikelihoodError>> = data
        .clusters
        .par_iter()
        .map(|c| {
            evaluate_cluster(spec, &params, c)
                .map(|v| (c.weight * v.loglik, v.clamped))
                .map_err(|e| LikelihoodError::Cluster {
                    id: c.id.clone(),
                    source: Box::new(e),
                })
        })
        .collect();
    let mut terms = Vec::with_capacity(values.len());
    let mut clamped = 0;
    for v in values {
        let (ll, c) = v?;
        terms.push(ll);
        clamped += c as usize;
    }
    Ok(LoglikValue {
        value: pairwise_sum(&terms),
        clamped,
    })
}

/// Per-cluster log-likelihood contributions (unweighted), in cluster order.
pub fn cluster_contributions(
    spec: &ModelSpec,
    data: &PreparedData,
) -> Result<Vec<f64>, LikelihoodError> {
    let params: Vec<_> = (0..spec.frailty.levels.len())
        .map(|i| spec.frailty_params(i))
        .collect();
    data.clusters
        .iter()
        .map(|c| evaluate_cluster(spec, &params, c).map(|v| v.loglik))
        .collect()
}
