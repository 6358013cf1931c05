//! Finite-difference gradients and Richardson-extrapolated Hessians.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("objective is not finite when perturbing coordinate {coordinate}")]
pub struct NonFiniteEvaluation {
    pub coordinate: usize,
}

/// Gradient step for coordinate value `x`.
pub fn gradient_step(x: f64) -> f64 {
    (1e-7 * x.abs()).max(1e-6)
}

/// Base Hessian step for coordinate value `x`, halved once for extrapolation.
pub fn hessian_step(x: f64) -> f64 {
    1e-4 * x.abs().max(1.0)
}

/// Central-difference gradient.
pub fn numeric_gradient<F>(f: F, theta: &[f64]) -> Result<Vec<f64>, NonFiniteEvaluation>
where
    F: Fn(&[f64]) -> f64,
{
    let mut x = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        let h = gradient_step(theta[k]);
        x[k] = theta[k] + h;
        let up = f(&x);
        x[k] = theta[k] - h;
        let down = f(&x);
        x[k] = theta[k];
        if !(up.is_finite() && down.is_finite()) {
            return Err(NonFiniteEvaluation { coordinate: k });
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Central second differences with per-coordinate steps `steps`.
pub fn central_hessian<F>(f: &F, theta: &[f64], steps: &[f64]) -> Result<Vec<Vec<f64>>, NonFiniteEvaluation>
where
    F: Fn(&[f64]) -> f64,
{
    let n = theta.len();
    let f0 = f(theta);
    if !f0.is_finite() {
        return Err(NonFiniteEvaluation { coordinate: 0 });
    }
    let mut x = theta.to_vec();
    let eval = |x: &[f64], k: usize| -> Result<f64, NonFiniteEvaluation> {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(NonFiniteEvaluation { coordinate: k })
        }
    };
    let mut h = vec![vec![0.0; n]; n];
    for i in 0..n {
        let hi = steps[i];
        x[i] = theta[i] + hi;
        let up = eval(&x, i)?;
        x[i] = theta[i] - hi;
        let down = eval(&x, i)?;
        x[i] = theta[i];
        h[i][i] = (up - 2.0 * f0 + down) / (hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let mut corner = |si: f64, sj: f64| -> Result<f64, NonFiniteEvaluation> {
                x[i] = theta[i] + si * hi;
                x[j] = theta[j] + sj * hj;
                let v = eval(&x, i);
                x[i] = theta[i];
                x[j] = theta[j];
                v
            };
            let pp = corner(1.0, 1.0)?;
            let pm = corner(1.0, -1.0)?;
            let mp = corner(-1.0, 1.0)?;
            let mm = corner(-1.0, -1.0)?;
            let v = (pp - pm - mp + mm) / (4.0 * hi * hj);
            h[i][j] = v;
            h[j][i] = v;
        }
    }
    Ok(h)
}

/// Hessian from central differences at steps `h` and `h/2`, combined by one
/// Richardson extrapolation step `(4 H(h/2) - H(h)) / 3` and symmetrized.
pub fn hessian<F>(f: F, theta: &[f64]) -> Result<Vec<Vec<f64>>, NonFiniteEvaluation>
where
    F: Fn(&[f64]) -> f64,
{
    let steps: Vec<f64> = theta.iter().map(|&x| hessian_step(x)).collect();
    let half: Vec<f64> = steps.iter().map(|h| h / 2.0).collect();
    let coarse = central_hessian(&f, theta, &steps)?;
    let fine = central_hessian(&f, theta, &half)?;
    let n = theta.len();
    let mut out = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            out[i][j] = (4.0 * fine[i][j] - coarse[i][j]) / 3.0;
        }
    }
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (out[i][j] + out[j][i]);
            out[i][j] = v;
            out[j][i] = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_of_quadratic_and_linear() {
        let theta = [0.3, -1.7, 2.5];
        let g = numeric_gradient(|x| x.iter().map(|v| v * v).sum(), &theta).unwrap();
        for (gi, ti) in g.iter().zip(&theta) {
            assert!((gi - 2.0 * ti).abs() < 1e-8);
        }
        let g = numeric_gradient(|x| 3.0 * x[0] - 2.0 * x[1] + 0.5 * x[2], &theta).unwrap();
        for (gi, e) in g.iter().zip([3.0, -2.0, 0.5]) {
            assert!((gi - e).abs() < 1e-8);
        }
    }

    #[test]
    fn non_finite_coordinate_is_reported() {
        let r = numeric_gradient(|x| if x[1] > 1.0 { f64::NAN } else { x[0] }, &[0.0, 1.0]);
        assert_eq!(r, Err(NonFiniteEvaluation { coordinate: 1 }));
    }

    #[test]
    fn hessian_of_quadratic_form() {
        let a = [[2.0, 0.5, -0.3], [0.5, 1.0, 0.2], [-0.3, 0.2, 4.0]];
        let f = |x: &[f64]| {
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += x[i] * a[i][j] * x[j];
                }
            }
            s
        };
        let h = hessian(f, &[0.4, -0.5, 0.3]).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((h[i][j] - 2.0 * a[i][j]).abs() < 1e-6, "{i} {j} {}", h[i][j] - 2.0 * a[i][j]);
            }
        }
    }

    #[test]
    fn hessian_of_exponential_sum() {
        let theta = [0.1, -0.2, 0.3];
        let h = hessian(|x| x.iter().map(|v| v.exp()).sum(), &theta).unwrap();
        for i in 0..3 {
            assert!((h[i][i] - theta[i].exp()).abs() < 1e-6 * theta[i].exp());
            for j in 0..3 {
                if i != j {
                    assert!(h[i][j].abs() < 1e-6);
                }
            }
        }
    }
}
