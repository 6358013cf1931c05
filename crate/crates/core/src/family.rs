//! The Addams family of frailty laws.
//!
//! A member is indexed by `(alpha, gamma, mu)`: `mu` is the frailty mean,
//! `gamma` the relative frailty variance at zero cumulative hazard and `alpha`
//! its log-slope, so that `RFV(L) = gamma * exp(alpha * mu * L)`.
//! Depending on the sign of `alpha` and its position relative to `gamma` the
//! law is a scaled (and possibly shifted) negative binomial, a scaled Poisson,
//! a scaled binomial, or the gamma distribution as the continuous exception
//! at `alpha = 0`.
//!
//! The Laplace transform is evaluated through a single expression that is
//! analytic across `alpha = 0` and `alpha = gamma`:
//!
//! ```text
//! w  = (1 - exp(-alpha mu s)) / alpha          (-> mu s      as alpha -> 0)
//! ln L(s) = -ln(1 + (gamma - alpha) w) / (gamma - alpha)   (-> -w as alpha -> gamma)
//! ```
//!
//! with the removable singularities handled by short series expansions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `1/(alpha - gamma)` being integral in the binomial region.
pub const BINOMIAL_INTEGER_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FamilyError {
    #[error("invalid frailty parameters: {0}")]
    InvalidParameters(String),
    #[error("alpha > gamma requires 1/(alpha - gamma) to be a positive integer, got {0}")]
    InvalidBinomial(f64),
    #[error("operation requires a discrete frailty law, got the gamma limit")]
    ContinuousBranch,
    #[error("numerical domain violation: {0}")]
    NumericalDomain(String),
    #[error("derivative order {0} is not supported (use 1 or 2)")]
    UnsupportedOrder(u8),
}

/// How a stratum's `alpha` is tied to its `gamma`.
///
/// Boundary members of the family are never inferred from floating-point
/// coincidence; they are pinned explicitly by the model owner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchRegime {
    /// `alpha` is a free parameter.
    #[default]
    Free,
    /// `alpha == 0`: gamma frailty.
    Gamma,
    /// `alpha == gamma`: scaled Poisson frailty.
    Poisson,
    /// `alpha == gamma + 1/trials`: scaled binomial frailty with fixed trials.
    Binomial { trials: u32 },
}

impl BranchRegime {
    /// The `alpha` implied by the regime, or `free_alpha` for [`BranchRegime::Free`].
    pub fn alpha(self, free_alpha: f64, gamma: f64) -> f64 {
        match self {
            BranchRegime::Free => free_alpha,
            BranchRegime::Gamma => 0.0,
            BranchRegime::Poisson => gamma,
            BranchRegime::Binomial { trials } => gamma + 1.0 / trials as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AddamsParameters {
    alpha: f64,
    gamma: f64,
    mu: f64,
    regime: BranchRegime,
}

impl AddamsParameters {
    /// Free-regime parameters.
    pub fn new(alpha: f64, gamma: f64, mu: f64) -> Result<Self, FamilyError> {
        Self::with_regime(BranchRegime::Free, alpha, gamma, mu)
    }

    pub fn gamma_limit(gamma: f64, mu: f64) -> Result<Self, FamilyError> {
        Self::with_regime(BranchRegime::Gamma, 0.0, gamma, mu)
    }

    pub fn poisson(gamma: f64, mu: f64) -> Result<Self, FamilyError> {
        Self::with_regime(BranchRegime::Poisson, gamma, gamma, mu)
    }

    pub fn binomial(gamma: f64, trials: u32, mu: f64) -> Result<Self, FamilyError> {
        Self::with_regime(BranchRegime::Binomial { trials }, 0.0, gamma, mu)
    }

    /// Build parameters under `regime`. For pinned regimes `alpha` is derived
    /// from `gamma` and the supplied value is ignored.
    pub fn with_regime(
        regime: BranchRegime,
        alpha: f64,
        gamma: f64,
        mu: f64,
    ) -> Result<Self, FamilyError> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(FamilyError::InvalidParameters(format!(
                "gamma must be positive and finite, got {gamma}"
            )));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(FamilyError::InvalidParameters(format!(
                "mu must be positive and finite, got {mu}"
            )));
        }
        if let BranchRegime::Binomial { trials } = regime {
            if trials == 0 {
                return Err(FamilyError::InvalidParameters(
                    "binomial regime needs at least one trial".into(),
                ));
            }
        }
        let alpha = regime.alpha(alpha, gamma);
        if !alpha.is_finite() {
            return Err(FamilyError::InvalidParameters(format!(
                "alpha must be finite, got {alpha}"
            )));
        }
        if regime == BranchRegime::Free && alpha > gamma {
            binomial_trials(alpha, gamma)?;
        }
        Ok(Self {
            alpha,
            gamma,
            mu,
            regime,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn regime(&self) -> BranchRegime {
        self.regime
    }

    /// Closed-form relative frailty variance `gamma * exp(alpha * mu * L)`.
    pub fn rfv(&self, cumulative_hazard: f64) -> f64 {
        self.gamma * (self.alpha * self.mu * cumulative_hazard).exp()
    }

    /// `ln L(s)`.
    pub fn log_laplace(&self, s: f64) -> Result<f64, FamilyError> {
        check_argument(s)?;
        if s == 0.0 {
            return Ok(0.0);
        }
        let (a, g, m) = (self.alpha, self.gamma, self.mu);
        let x = a * m * s;
        if a < 0.0 {
            // exp(-x) grows without bound here; work with exp(x) instead.
            let v = m * s * expm1_ratio(x);
            let log_bracket = -x + (g * v).ln_1p();
            Ok(log_bracket / (a - g))
        } else {
            let w = exposure_weight(a, m, s, x);
            let y = (g - a) * w;
            if 1.0 + y <= 0.0 {
                return Err(FamilyError::NumericalDomain(format!(
                    "Laplace bracket is non-positive (alpha={a}, gamma={g}, s={s})"
                )));
            }
            Ok(-w * log1p_ratio(y))
        }
    }

    /// `ln L(s)` together with its first two derivatives in `s`.
    ///
    /// The derivatives are `-E(Z | s)` and `Var(Z | s)` of the frailty
    /// exponentially tilted by `s`.
    pub fn log_laplace_derivatives(&self, s: f64) -> Result<(f64, f64, f64), FamilyError> {
        let value = self.log_laplace(s)?;
        let (a, g, m) = (self.alpha, self.gamma, self.mu);
        let x = a * m * s;
        let (d1, d2) = if a < 0.0 {
            let v = m * s * expm1_ratio(x);
            let denom = 1.0 + g * v;
            (-m / denom, g * m * m * x.exp() / (denom * denom))
        } else {
            let e = (-x).exp();
            let w = exposure_weight(a, m, s, x);
            let b = e + g * w;
            (-m * e / b, g * m * m * e / (b * b))
        };
        Ok((value, d1, d2))
    }

    /// Smallest support point `z_(1)` and `ln P(Z = z_(1))`, `None` for the
    /// gamma limit.
    pub fn lowest_atom(&self) -> Option<(f64, f64)> {
        let (a, g, m) = (self.alpha, self.gamma, self.mu);
        if a == 0.0 {
            None
        } else if a < 0.0 {
            let nu = 1.0 / (g - a);
            Some((m * -a * nu, nu * (-a * nu).ln()))
        } else {
            Some((0.0, -log1p_ratio((a - g) / g) / g))
        }
    }

    /// `ln(L(s) - P(Z = z_(1)) exp(-z_(1) s))`, the transform restricted to
    /// frailties above the lowest atom. `-inf` when that part vanishes.
    pub fn log_laplace_excess(&self, s: f64) -> Result<f64, FamilyError> {
        check_argument(s)?;
        let (z1, ln_p1) = self.lowest_atom().ok_or(FamilyError::ContinuousBranch)?;
        let (a, g, m) = (self.alpha, self.gamma, self.mu);
        // q = ln L(s) - ln p1 + z1 s
        let q = if a < 0.0 {
            let nu = 1.0 / (g - a);
            -nu * (-(g * nu) * (m * a * s).exp()).ln_1p()
        } else {
            let e = (-a * m * s).exp() / g;
            e * log1p_ratio((a - g) * e)
        };
        Ok(ln_p1 - z1 * s + q.exp_m1().ln())
    }

    /// `L(s) = E exp(-Z s)`.
    pub fn laplace(&self, s: f64) -> Result<f64, FamilyError> {
        Ok(self.log_laplace(s)?.exp())
    }

    /// First or second derivative of `L` at `s`.
    pub fn laplace_derivative(&self, s: f64, order: u8) -> Result<f64, FamilyError> {
        let (l, d1, d2) = self.log_laplace_derivatives(s)?;
        let value = l.exp();
        match order {
            1 => Ok(value * d1),
            2 => Ok(value * (d2 + d1 * d1)),
            other => Err(FamilyError::UnsupportedOrder(other)),
        }
    }

    /// Moments of the frailty among clusters surviving a total cumulative
    /// hazard `cumulative_hazard`.
    pub fn conditional_moments(
        &self,
        cumulative_hazard: f64,
    ) -> Result<ConditionalMoments, FamilyError> {
        let (_, d1, d2) = self.log_laplace_derivatives(cumulative_hazard)?;
        let mean = -d1;
        let variance = d2;
        Ok(ConditionalMoments {
            mean,
            variance,
            rfv: variance / mean / mean,
        })
    }

    pub fn classify(&self) -> Result<FrailtyBranch, FamilyError> {
        classify_branch(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalMoments {
    pub mean: f64,
    pub variance: f64,
    /// `variance / mean^2`, from the derivative route.
    pub rfv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BranchKind {
    ShiftedScaledNegBinomial,
    GammaLimit,
    ScaledPoisson,
    ScaledNegBinomial,
    ScaledBinomial,
}

/// A classified family member with its distribution parameters.
///
/// `psi` is the scale of the support, `nu` the negative-binomial number of
/// successes, `pi` the success probability of the underlying count law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FrailtyBranch {
    /// `alpha < 0`: `Z = psi * (nu + M)`, `M ~ NB(nu, pi)`.
    ShiftedScaledNegBinomial { psi: f64, nu: f64, pi: f64 },
    /// `alpha = 0`: `Z ~ Gamma(shape, rate)`.
    GammaLimit { shape: f64, rate: f64 },
    /// `alpha = gamma`: `Z = psi * M`, `M ~ Poisson(rate)`.
    ScaledPoisson { psi: f64, rate: f64 },
    /// `0 < alpha < gamma`: `Z = psi * M`, `M ~ NB(nu, pi)`.
    ScaledNegBinomial { psi: f64, nu: f64, pi: f64 },
    /// `alpha > gamma`: `Z = psi * M`, `M ~ Binomial(trials, pi)`.
    ScaledBinomial { psi: f64, trials: u32, pi: f64 },
}

/// Map `(alpha, gamma, mu)` to the family member it indexes.
pub fn classify_branch(p: &AddamsParameters) -> Result<FrailtyBranch, FamilyError> {
    let (a, g, m) = (p.alpha, p.gamma, p.mu);
    let kind = match p.regime {
        BranchRegime::Gamma => BranchKind::GammaLimit,
        BranchRegime::Poisson => BranchKind::ScaledPoisson,
        BranchRegime::Binomial { .. } => BranchKind::ScaledBinomial,
        BranchRegime::Free => {
            if a < 0.0 {
                BranchKind::ShiftedScaledNegBinomial
            } else if a == 0.0 {
                BranchKind::GammaLimit
            } else if a < g {
                BranchKind::ScaledNegBinomial
            } else if a == g {
                BranchKind::ScaledPoisson
            } else {
                BranchKind::ScaledBinomial
            }
        }
    };
    let psi = m * a.abs();
    Ok(match kind {
        BranchKind::ShiftedScaledNegBinomial => FrailtyBranch::ShiftedScaledNegBinomial {
            psi,
            nu: 1.0 / (g - a),
            pi: -a / (g - a),
        },
        BranchKind::GammaLimit => FrailtyBranch::GammaLimit {
            shape: 1.0 / g,
            rate: 1.0 / (m * g),
        },
        BranchKind::ScaledPoisson => FrailtyBranch::ScaledPoisson {
            psi: m * g,
            rate: 1.0 / g,
        },
        BranchKind::ScaledNegBinomial => FrailtyBranch::ScaledNegBinomial {
            psi,
            nu: 1.0 / (g - a),
            pi: a / g,
        },
        BranchKind::ScaledBinomial => {
            let trials = match p.regime {
                BranchRegime::Binomial { trials } => trials,
                _ => binomial_trials(a, g)?,
            };
            FrailtyBranch::ScaledBinomial {
                psi,
                trials,
                pi: (a - g) / a,
            }
        }
    })
}

fn binomial_trials(alpha: f64, gamma: f64) -> Result<u32, FamilyError> {
    let b = 1.0 / (alpha - gamma);
    let rounded = b.round();
    if rounded >= 1.0 && rounded <= u32::MAX as f64 && (b - rounded).abs() <= BINOMIAL_INTEGER_TOLERANCE
    {
        Ok(rounded as u32)
    } else {
        Err(FamilyError::InvalidBinomial(b))
    }
}

/// One atom of a discrete frailty law, ranked by frailty value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportPoint {
    /// 1-based risk category rank.
    pub index: usize,
    pub z: f64,
    pub prob: f64,
    pub cum_prob: f64,
}

impl FrailtyBranch {
    pub fn kind(&self) -> BranchKind {
        match self {
            FrailtyBranch::ShiftedScaledNegBinomial { .. } => BranchKind::ShiftedScaledNegBinomial,
            FrailtyBranch::GammaLimit { .. } => BranchKind::GammaLimit,
            FrailtyBranch::ScaledPoisson { .. } => BranchKind::ScaledPoisson,
            FrailtyBranch::ScaledNegBinomial { .. } => BranchKind::ScaledNegBinomial,
            FrailtyBranch::ScaledBinomial { .. } => BranchKind::ScaledBinomial,
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self, FrailtyBranch::GammaLimit { .. })
    }

    /// Whether `P(Z = 0) > 0`.
    pub fn has_cure_fraction(&self) -> bool {
        matches!(
            self,
            FrailtyBranch::ScaledPoisson { .. }
                | FrailtyBranch::ScaledNegBinomial { .. }
                | FrailtyBranch::ScaledBinomial { .. }
        )
    }

    pub fn psi(&self) -> Option<f64> {
        match *self {
            FrailtyBranch::ShiftedScaledNegBinomial { psi, .. }
            | FrailtyBranch::ScaledPoisson { psi, .. }
            | FrailtyBranch::ScaledNegBinomial { psi, .. }
            | FrailtyBranch::ScaledBinomial { psi, .. } => Some(psi),
            FrailtyBranch::GammaLimit { .. } => None,
        }
    }

    pub fn nu(&self) -> Option<f64> {
        match *self {
            FrailtyBranch::ShiftedScaledNegBinomial { nu, .. }
            | FrailtyBranch::ScaledNegBinomial { nu, .. } => Some(nu),
            _ => None,
        }
    }

    pub fn pi(&self) -> Option<f64> {
        match *self {
            FrailtyBranch::ShiftedScaledNegBinomial { pi, .. }
            | FrailtyBranch::ScaledNegBinomial { pi, .. }
            | FrailtyBranch::ScaledBinomial { pi, .. } => Some(pi),
            _ => None,
        }
    }

    /// Number of support points, `None` when unbounded or continuous.
    pub fn support_size(&self) -> Option<usize> {
        match *self {
            FrailtyBranch::ScaledBinomial { trials, .. } => Some(trials as usize + 1),
            _ => None,
        }
    }

    /// Frailty value of the `k`-th risk category (1-based).
    pub fn support_value(&self, k: usize) -> Result<f64, FamilyError> {
        if k == 0 {
            return Err(FamilyError::InvalidParameters(
                "risk categories are numbered from 1".into(),
            ));
        }
        let m = (k - 1) as f64;
        match *self {
            FrailtyBranch::ShiftedScaledNegBinomial { psi, nu, .. } => Ok(psi * (nu + m)),
            FrailtyBranch::ScaledPoisson { psi, .. } | FrailtyBranch::ScaledNegBinomial { psi, .. } => {
                Ok(psi * m)
            }
            FrailtyBranch::ScaledBinomial { psi, trials, .. } => {
                if k > trials as usize + 1 {
                    Err(FamilyError::InvalidParameters(format!(
                        "risk category {k} exceeds the {} binomial support points",
                        trials + 1
                    )))
                } else {
                    Ok(psi * m)
                }
            }
            FrailtyBranch::GammaLimit { .. } => Err(FamilyError::ContinuousBranch),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            FrailtyBranch::ShiftedScaledNegBinomial { psi, nu, pi } => psi * nu / pi,
            FrailtyBranch::GammaLimit { shape, rate } => shape / rate,
            FrailtyBranch::ScaledPoisson { psi, rate } => psi * rate,
            FrailtyBranch::ScaledNegBinomial { psi, nu, pi } => psi * nu * (1.0 - pi) / pi,
            FrailtyBranch::ScaledBinomial { psi, trials, pi } => psi * trials as f64 * pi,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            FrailtyBranch::ShiftedScaledNegBinomial { psi, nu, pi }
            | FrailtyBranch::ScaledNegBinomial { psi, nu, pi } => psi * psi * nu * (1.0 - pi) / (pi * pi),
            FrailtyBranch::GammaLimit { shape, rate } => shape / (rate * rate),
            FrailtyBranch::ScaledPoisson { psi, rate } => psi * psi * rate,
            FrailtyBranch::ScaledBinomial { psi, trials, pi } => {
                psi * psi * trials as f64 * pi * (1.0 - pi)
            }
        }
    }

    /// Iterator over the ranked support with probabilities.
    pub fn support(&self) -> Result<SupportIter, FamilyError> {
        let count = match *self {
            FrailtyBranch::ShiftedScaledNegBinomial { nu, pi, .. }
            | FrailtyBranch::ScaledNegBinomial { nu, pi, .. } => CountLaw::NegBinomial { nu, pi },
            FrailtyBranch::ScaledPoisson { rate, .. } => CountLaw::Poisson { rate },
            FrailtyBranch::ScaledBinomial { trials, pi, .. } => CountLaw::Binomial { trials, pi },
            FrailtyBranch::GammaLimit { .. } => return Err(FamilyError::ContinuousBranch),
        };
        Ok(SupportIter {
            branch: *self,
            count,
            next_m: 0,
            log_p: count.log_pmf_zero(),
            cum: 0.0,
            cum_comp: 0.0,
        })
    }
}

#[derive(Debug, Clone, Copy)]
enum CountLaw {
    NegBinomial { nu: f64, pi: f64 },
    Poisson { rate: f64 },
    Binomial { trials: u32, pi: f64 },
}

impl CountLaw {
    fn log_pmf_zero(&self) -> f64 {
        match *self {
            // P(M = m) = C(m + nu - 1, m) pi^nu (1 - pi)^m
            CountLaw::NegBinomial { nu, pi } => nu * pi.ln(),
            CountLaw::Poisson { rate } => -rate,
            CountLaw::Binomial { trials, pi } => trials as f64 * (-pi).ln_1p(),
        }
    }

    /// `ln P(M = m + 1) - ln P(M = m)`.
    fn log_ratio(&self, m: u64) -> f64 {
        let mf = m as f64;
        match *self {
            CountLaw::NegBinomial { nu, pi } => ((mf + nu) / (mf + 1.0)).ln() + (-pi).ln_1p(),
            CountLaw::Poisson { rate } => rate.ln() - (mf + 1.0).ln(),
            CountLaw::Binomial { trials, pi } => {
                ((trials as f64 - mf) / (mf + 1.0)).ln() + pi.ln() - (-pi).ln_1p()
            }
        }
    }

    /// Upper bound on `P(M > m)` given `p_next = P(M = m + 1)`.
    fn tail_bound(&self, m: u64, p_next: f64) -> f64 {
        let ratio_after = |i: u64| (self.log_ratio(i)).exp();
        match *self {
            CountLaw::NegBinomial { nu, pi } => {
                let r = if nu <= 1.0 { 1.0 - pi } else { ratio_after(m + 1) };
                if r < 1.0 {
                    p_next / (1.0 - r)
                } else {
                    f64::INFINITY
                }
            }
            CountLaw::Poisson { .. } => {
                let r = ratio_after(m + 1);
                if r < 1.0 {
                    p_next / (1.0 - r)
                } else {
                    f64::INFINITY
                }
            }
            CountLaw::Binomial { trials, .. } => {
                if m >= trials as u64 {
                    0.0
                } else {
                    let r = ratio_after(m + 1);
                    if r < 1.0 {
                        p_next / (1.0 - r)
                    } else {
                        1.0
                    }
                }
            }
        }
    }
}

/// Ranked support points of a discrete branch, with a running bound on the
/// probability mass not yet emitted.
#[derive(Debug, Clone)]
pub struct SupportIter {
    branch: FrailtyBranch,
    count: CountLaw,
    next_m: u64,
    log_p: f64,
    cum: f64,
    cum_comp: f64,
}

impl SupportIter {
    /// Bound on the mass of all points not yet yielded.
    pub fn tail_bound(&self) -> f64 {
        if self.next_m == 0 {
            return 1.0;
        }
        if let CountLaw::Binomial { trials, .. } = self.count {
            if self.next_m > trials as u64 {
                return 0.0;
            }
        }
        self.count.tail_bound(self.next_m - 1, self.log_p.exp())
    }

    /// Collect points until the remaining mass is below `tolerance`.
    pub fn until_tail(mut self, tolerance: f64, max_points: usize) -> Vec<SupportPoint> {
        let mut out = Vec::new();
        while out.len() < max_points {
            match self.next() {
                Some(p) => out.push(p),
                None => break,
            }
            if self.tail_bound() < tolerance {
                break;
            }
        }
        out
    }
}

impl Iterator for SupportIter {
    type Item = SupportPoint;

    fn next(&mut self) -> Option<SupportPoint> {
        if let CountLaw::Binomial { trials, .. } = self.count {
            if self.next_m > trials as u64 {
                return None;
            }
        }
        let m = self.next_m;
        let prob = self.log_p.exp();
        // Neumaier step on the running cumulative probability.
        let t = self.cum + prob;
        if self.cum.abs() >= prob.abs() {
            self.cum_comp += (self.cum - t) + prob;
        } else {
            self.cum_comp += (prob - t) + self.cum;
        }
        self.cum = t;
        let z = self
            .branch
            .support_value(m as usize + 1)
            .expect("discrete branch");
        self.log_p += self.count.log_ratio(m);
        self.next_m += 1;
        Some(SupportPoint {
            index: m as usize + 1,
            z,
            prob,
            cum_prob: (self.cum + self.cum_comp).min(1.0),
        })
    }
}

/// The first `k_max` ranked support points of a discrete branch.
pub fn support_and_pmf(branch: &FrailtyBranch, k_max: usize) -> Result<Vec<SupportPoint>, FamilyError> {
    if k_max == 0 {
        return Err(FamilyError::InvalidParameters("k_max must be at least 1".into()));
    }
    let cap = branch.support_size().map_or(k_max, |n| n.min(k_max));
    Ok(branch.support()?.take(cap).collect())
}

fn check_argument(s: f64) -> Result<(), FamilyError> {
    if s.is_nan() || s < 0.0 {
        Err(FamilyError::NumericalDomain(format!(
            "Laplace argument must be non-negative, got {s}"
        )))
    } else {
        Ok(())
    }
}

/// `(1 - exp(-x)) / x`, equal to 1 at `x = 0`.
fn one_minus_exp_ratio(x: f64) -> f64 {
    if x.abs() < 1e-5 {
        1.0 - x / 2.0 + x * x / 6.0 - x * x * x / 24.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// `(1 - exp(-x)) / alpha` with `x = alpha * mu * s`, monotone in `s`.
fn exposure_weight(alpha: f64, mu: f64, s: f64, x: f64) -> f64 {
    if x > 1.0 {
        -(-x).exp_m1() / alpha
    } else {
        mu * s * one_minus_exp_ratio(x)
    }
}

/// `(exp(x) - 1) / x`, equal to 1 at `x = 0`.
fn expm1_ratio(x: f64) -> f64 {
    if x.abs() < 1e-5 {
        1.0 + x / 2.0 + x * x / 6.0 + x * x * x / 24.0
    } else {
        x.exp_m1() / x
    }
}

/// `ln(1 + y) / y`, equal to 1 at `y = 0`.
fn log1p_ratio(y: f64) -> f64 {
    if y.abs() < 1e-5 {
        1.0 - y / 2.0 + y * y / 3.0 - y * y * y / 4.0
    } else {
        y.ln_1p() / y
    }
}
