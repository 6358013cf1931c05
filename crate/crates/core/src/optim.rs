//! BFGS minimization with a strong-Wolfe line search.
//!
//! The objective may return `+inf` (or NaN) outside its domain; the line
//! search then shortens the step until it is back inside.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    /// Converged when `max |g| < grad_tol * max(1, |f|)`.
    pub grad_tol: f64,
    /// Converged when `max |dx| < step_tol * max(1, max |x|)`.
    pub step_tol: f64,
    pub max_iter: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            step_tol: 1e-10,
            max_iter: 500,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    StepTolerance,
    MaxIterations,
    LineSearchFailed,
    GradientUnavailable,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(self, Termination::GradientTolerance | Termination::StepTolerance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

impl BfgsOutcome {
    pub fn converged(&self) -> bool {
        self.termination.converged()
    }

    pub fn gradient_norm(&self) -> f64 {
        max_abs(&self.grad)
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + alpha * b).collect()
}

struct Trial {
    alpha: f64,
    f: f64,
    grad: Vec<f64>,
}

/// Minimize `f` from `x0`. `grad` returns `None` when the gradient cannot be
/// evaluated at the point.
///
/// Panics if `f(x0)` is not finite.
pub fn minimize<F, G>(f: F, grad: G, x0: &[f64], options: &BfgsOptions) -> BfgsOutcome
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    assert!(fx.is_finite(), "objective must be finite at the starting point");
    let mut g = match grad(&x) {
        Some(g) => g,
        None => {
            return BfgsOutcome {
                x,
                f: fx,
                grad: vec![f64::NAN; n],
                iterations: 0,
                termination: Termination::GradientUnavailable,
            }
        }
    };
    let identity = |scale: f64| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| if i == j { scale } else { 0.0 }).collect())
            .collect()
    };
    let mut h_inv = identity(1.0);
    let mut fresh = true;

    for iter in 0..options.max_iter {
        if max_abs(&g) < options.grad_tol * fx.abs().max(1.0) {
            return BfgsOutcome { x, f: fx, grad: g, iterations: iter, termination: Termination::GradientTolerance };
        }
        let mut d: Vec<f64> = h_inv.iter().map(|row| -dot(row, &g)).collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            h_inv = identity(1.0);
            fresh = true;
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let initial = if fresh { (1.0 / max_abs(&d)).min(1.0) } else { 1.0 };
        let trial = match strong_wolfe(&f, &grad, &x, fx, &d, slope, initial, options) {
            Some(t) => t,
            None if !fresh => {
                // Retry along steepest descent with a reset metric.
                h_inv = identity(1.0);
                fresh = true;
                let d: Vec<f64> = g.iter().map(|v| -v).collect();
                let slope = dot(&g, &d);
                match strong_wolfe(&f, &grad, &x, fx, &d, slope, (1.0 / max_abs(&d)).min(1.0), options) {
                    Some(t) => {
                        let step: Vec<f64> = d.iter().map(|v| v * t.alpha).collect();
                        update(&mut x, &mut fx, &mut g, &mut h_inv, &step, t, &mut fresh);
                        continue;
                    }
                    None => {
                        return BfgsOutcome { x, f: fx, grad: g, iterations: iter, termination: Termination::LineSearchFailed }
                    }
                }
            }
            None => {
                return BfgsOutcome { x, f: fx, grad: g, iterations: iter, termination: Termination::LineSearchFailed }
            }
        };
        let step: Vec<f64> = d.iter().map(|v| v * trial.alpha).collect();
        let small_step = max_abs(&step) < options.step_tol * max_abs(&x).max(1.0);
        update(&mut x, &mut fx, &mut g, &mut h_inv, &step, trial, &mut fresh);
        if small_step {
            return BfgsOutcome { x, f: fx, grad: g, iterations: iter + 1, termination: Termination::StepTolerance };
        }
    }
    let termination = if max_abs(&g) < options.grad_tol * fx.abs().max(1.0) {
        Termination::GradientTolerance
    } else {
        Termination::MaxIterations
    };
    BfgsOutcome { x, f: fx, grad: g, iterations: options.max_iter, termination }
}

fn update(
    x: &mut Vec<f64>,
    fx: &mut f64,
    g: &mut Vec<f64>,
    h_inv: &mut [Vec<f64>],
    step: &[f64],
    trial: Trial,
    fresh: &mut bool,
) {
    let n = x.len();
    let y: Vec<f64> = trial.grad.iter().zip(g.iter()).map(|(a, b)| a - b).collect();
    let sy = dot(step, &y);
    if sy > 1e-12 * dot(step, step).sqrt() * dot(&y, &y).sqrt() {
        if *fresh {
            // Scale the initial metric before the first update.
            let scale = sy / dot(&y, &y);
            for (i, row) in h_inv.iter_mut().enumerate() {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = if i == j { scale } else { 0.0 };
                }
            }
            *fresh = false;
        }
        let rho = 1.0 / sy;
        let hy: Vec<f64> = h_inv.iter().map(|row| dot(row, &y)).collect();
        let yhy = dot(&y, &hy);
        for i in 0..n {
            for j in 0..n {
                h_inv[i][j] += -rho * (hy[i] * step[j] + step[i] * hy[j])
                    + (rho * rho * yhy + rho) * step[i] * step[j];
            }
        }
    }
    for (xi, si) in x.iter_mut().zip(step) {
        *xi += si;
    }
    *fx = trial.f;
    *g = trial.grad;
}

#[allow(clippy::too_many_arguments)]
fn strong_wolfe<F, G>(
    f: &F,
    grad: &G,
    x: &[f64],
    f0: f64,
    d: &[f64],
    slope0: f64,
    initial: f64,
    o: &BfgsOptions,
) -> Option<Trial>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Option<Vec<f64>>,
{
    let phi = |a: f64| {
        let v = f(&axpy(x, a, d));
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let dphi = |a: f64| -> Option<(f64, Vec<f64>)> {
        let g = grad(&axpy(x, a, d))?;
        Some((dot(&g, d), g))
    };

    let mut a_prev = 0.0;
    let mut f_prev = f0;
    let mut d_prev = slope0;
    let mut a = initial;
    let mut shrinks = 0;
    let mut i = 0;
    while i < 40 {
        let fa = phi(a);
        if !fa.is_finite() {
            // Outside the domain: pull back towards the last good point.
            shrinks += 1;
            if shrinks > 60 {
                return None;
            }
            a = a_prev + 0.25 * (a - a_prev);
            continue;
        }
        if fa > f0 + o.c1 * a * slope0 || (i > 0 && fa >= f_prev) {
            return zoom(&phi, &dphi, f0, slope0, a_prev, f_prev, d_prev, a, fa, o);
        }
        let (da, ga) = dphi(a)?;
        if da.abs() <= -o.c2 * slope0 {
            return Some(Trial { alpha: a, f: fa, grad: ga });
        }
        if da >= 0.0 {
            return zoom(&phi, &dphi, f0, slope0, a, fa, da, a_prev, f_prev, o);
        }
        a_prev = a;
        f_prev = fa;
        d_prev = da;
        a *= 2.0;
        i += 1;
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn zoom<P, D>(
    phi: &P,
    dphi: &D,
    f0: f64,
    slope0: f64,
    mut lo: f64,
    mut f_lo: f64,
    mut d_lo: f64,
    mut hi: f64,
    mut f_hi: f64,
    o: &BfgsOptions,
) -> Option<Trial>
where
    P: Fn(f64) -> f64,
    D: Fn(f64) -> Option<(f64, Vec<f64>)>,
{
    for _ in 0..60 {
        let width = hi - lo;
        if width.abs() <= 1e-16 * lo.abs().max(hi.abs()).max(1e-300) {
            return None;
        }
        // Safeguarded quadratic interpolation from (lo, f_lo, d_lo) and (hi, f_hi).
        let mut a = if f_hi.is_finite() {
            let denom = 2.0 * (f_hi - f_lo - d_lo * width);
            if denom.abs() > 0.0 {
                lo - d_lo * width * width / denom
            } else {
                lo + 0.5 * width
            }
        } else {
            lo + 0.5 * width
        };
        let (a_min, a_max) = if lo < hi { (lo, hi) } else { (hi, lo) };
        let margin = 0.1 * width.abs();
        if !(a > a_min + margin && a < a_max - margin) {
            a = lo + 0.5 * width;
        }
        let fa = phi(a);
        if !fa.is_finite() || fa > f0 + o.c1 * a * slope0 || fa >= f_lo {
            hi = a;
            f_hi = fa;
            continue;
        }
        let (da, ga) = dphi(a)?;
        if da.abs() <= -o.c2 * slope0 {
            return Some(Trial { alpha: a, f: fa, grad: ga });
        }
        if da * (hi - lo) >= 0.0 {
            hi = lo;
            f_hi = f_lo;
        }
        lo = a;
        f_lo = fa;
        d_lo = da;
    }
    None
}
