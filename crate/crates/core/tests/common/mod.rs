//! Independent numerical oracles shared by the integration tests.
//!
//! Nothing here calls into the library's evaluation code: branch parameters
//! are re-derived from `(alpha, gamma, mu)`, count pmfs come from log-gamma
//! functions, and the gamma limit is integrated numerically.

#![allow(dead_code)]

use quadrature::double_exponential::integrate;
use statrs::function::gamma::ln_gamma;

/// Count law `M` with `Z = scale * (offset + M)`.
#[derive(Debug, Clone, Copy)]
pub enum CountOracle {
    NegBinomial { nu: f64, pi: f64 },
    Poisson { rate: f64 },
    Binomial { trials: u32, pi: f64 },
}

#[derive(Debug, Clone, Copy)]
pub enum LawOracle {
    Discrete { scale: f64, offset: f64, count: CountOracle },
    Gamma { shape: f64, rate: f64 },
}

/// Frailty law of `(alpha, gamma, mu)`; `alpha == 0` and `alpha == gamma`
/// select the boundary members.
pub fn law(alpha: f64, gamma: f64, mu: f64) -> LawOracle {
    let scale = mu * alpha.abs();
    if alpha == 0.0 {
        LawOracle::Gamma { shape: 1.0 / gamma, rate: 1.0 / (mu * gamma) }
    } else if alpha < 0.0 {
        let nu = 1.0 / (gamma - alpha);
        LawOracle::Discrete { scale, offset: nu, count: CountOracle::NegBinomial { nu, pi: -alpha / (gamma - alpha) } }
    } else if alpha < gamma {
        let nu = 1.0 / (gamma - alpha);
        LawOracle::Discrete { scale, offset: 0.0, count: CountOracle::NegBinomial { nu, pi: alpha / gamma } }
    } else if alpha == gamma {
        LawOracle::Discrete { scale, offset: 0.0, count: CountOracle::Poisson { rate: 1.0 / gamma } }
    } else {
        let trials = (1.0 / (alpha - gamma)).round() as u32;
        LawOracle::Discrete { scale, offset: 0.0, count: CountOracle::Binomial { trials, pi: (alpha - gamma) / alpha } }
    }
}

pub fn ln_pmf(count: CountOracle, m: u64) -> f64 {
    let mf = m as f64;
    match count {
        CountOracle::NegBinomial { nu, pi } => {
            ln_gamma(mf + nu) - ln_gamma(nu) - ln_gamma(mf + 1.0) + nu * pi.ln() + mf * (1.0 - pi).ln()
        }
        CountOracle::Poisson { rate } => -rate + mf * rate.ln() - ln_gamma(mf + 1.0),
        CountOracle::Binomial { trials, pi } => {
            if m > trials as u64 {
                return f64::NEG_INFINITY;
            }
            let n = trials as f64;
            let lc = ln_gamma(n + 1.0) - ln_gamma(mf + 1.0) - ln_gamma(n - mf + 1.0);
            let a = if m == 0 { 0.0 } else { mf * pi.ln() };
            let b = if m == trials as u64 { 0.0 } else { (n - mf) * (1.0 - pi).ln() };
            lc + a + b
        }
    }
}

/// Upper bound on `P(M > m)` given `pmf(m)`, or `None` while the pmf may
/// still be increasing.
fn tail_after(count: CountOracle, m: u64, pmf_m: f64) -> Option<f64> {
    let mf = m as f64;
    let r = match count {
        CountOracle::NegBinomial { nu, pi } => {
            let here = (mf + nu) / (mf + 1.0) * (1.0 - pi);
            // Ratios tend to 1 - pi from below when nu < 1 and from above otherwise.
            if nu < 1.0 { 1.0 - pi } else { here }
        }
        CountOracle::Poisson { rate } => rate / (mf + 1.0),
        CountOracle::Binomial { trials, .. } => {
            if m >= trials as u64 {
                return Some(0.0);
            }
            return None;
        }
    };
    (r < 1.0).then(|| pmf_m * r / (1.0 - r))
}

/// `E[prod_j term_j(Z)]` with `term = 1 - exp(-Z L)` for events and
/// `exp(-Z L)` otherwise.
fn ln_terms(z: f64, terms: &[(f64, bool)]) -> f64 {
    terms
        .iter()
        .map(|&(h, d)| if d { (-(-z * h).exp_m1()).ln() } else { -z * h })
        .sum()
}

/// Mixture probability by summing the discrete series until the remaining
/// mass is below `1e-15` times the accumulated value (and `1e-14` absolute).
pub fn discrete_probability(scale: f64, offset: f64, count: CountOracle, terms: &[(f64, bool)]) -> f64 {
    let mut sum = 0.0;
    let mut m = 0u64;
    loop {
        let lp = ln_pmf(count, m);
        let p = lp.exp();
        let z = scale * (offset + m as f64);
        let v = if lp == f64::NEG_INFINITY { 0.0 } else { (lp + ln_terms(z, terms)).exp() };
        sum += v;
        if let Some(tail) = tail_after(count, m, p) {
            if tail < 1e-14 && tail < 1e-15 * sum {
                return sum;
            }
        }
        if let CountOracle::Binomial { trials, .. } = count {
            if m >= trials as u64 {
                return sum;
            }
        }
        m += 1;
        assert!(m < 50_000_000, "series oracle did not terminate");
    }
}

/// Gamma-mixture probability by double-exponential quadrature in `v = ln z`.
pub fn gamma_probability(shape: f64, rate: f64, terms: &[(f64, bool)]) -> f64 {
    let ln_norm = shape * rate.ln() - ln_gamma(shape);
    let f = |v: f64| {
        let z = v.exp();
        (ln_norm + shape * v - rate * z + ln_terms(z, terms)).exp()
    };
    let lo = ((1e-20f64).ln() + ln_gamma(shape + 1.0)) / shape - rate.ln();
    let hi = ((shape + 60.0 + 30.0 * shape.sqrt()) / rate).ln();
    let pieces = 64;
    let width = (hi - lo) / pieces as f64;
    let sum_with = |tol: f64| -> f64 {
        (0..pieces)
            .map(|i| {
                let a = lo + i as f64 * width;
                integrate(f, a, a + width, tol).integral
            })
            .sum()
    };
    let rough = sum_with(1e-10);
    sum_with((rough * 1e-13).max(1e-300))
}

pub fn probability(alpha: f64, gamma: f64, mu: f64, terms: &[(f64, bool)]) -> f64 {
    match law(alpha, gamma, mu) {
        LawOracle::Discrete { scale, offset, count } => discrete_probability(scale, offset, count, terms),
        LawOracle::Gamma { shape, rate } => gamma_probability(shape, rate, terms),
    }
}

pub fn laplace(alpha: f64, gamma: f64, mu: f64, s: f64) -> f64 {
    probability(alpha, gamma, mu, &[(s, false)])
}

/// Kolmogorov-Smirnov p-value of `samples` against `cdf` (asymptotic law
/// with the small-sample correction of the statistic).
pub fn ks_p_value(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        let term = 2.0 * (-2.0 * kf * kf * lambda * lambda).exp();
        p += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    p.clamp(0.0, 1.0)
}
