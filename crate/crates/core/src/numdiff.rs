//! Central finite differences.
//!
//! Used as the verification oracle for every analytic derivative in the
//! crate, and as the production path for maps without closed-form
//! derivatives.

use crate::{Matrix, Vector};

/// Default step for Jacobians.
pub const JACOBIAN_STEP: f64 = 1e-6;
/// Default step for gradients and directional derivatives of Jacobians.
pub const GRADIENT_STEP: f64 = 1e-5;
/// Default step for Hessians.
pub const HESSIAN_STEP: f64 = 1e-4;

/// Central-difference Jacobian of `f` at `x`.
pub fn jacobian<F>(f: F, x: &Vector, step: f64) -> Matrix
where
    F: Fn(&Vector) -> Vector,
{
    let m = x.len();
    let n = f(x).len();
    let mut jac = Matrix::zeros(n, m);
    let mut xp = x.clone();
    for j in 0..m {
        let orig = xp[j];
        xp[j] = orig + step;
        let fp = f(&xp);
        xp[j] = orig - step;
        let fm = f(&xp);
        xp[j] = orig;
        jac.set_column(j, &((fp - fm) / (2.0 * step)));
    }
    jac
}

/// Central-difference gradient of a scalar function.
pub fn gradient<F>(f: F, x: &Vector, step: f64) -> Vector
where
    F: Fn(&Vector) -> f64,
{
    let mut g = Vector::zeros(x.len());
    let mut xp = x.clone();
    for j in 0..x.len() {
        let orig = xp[j];
        xp[j] = orig + step;
        let fp = f(&xp);
        xp[j] = orig - step;
        let fm = f(&xp);
        xp[j] = orig;
        g[j] = (fp - fm) / (2.0 * step);
    }
    g
}

/// Hessian of a scalar function by central differences of its values,
/// symmetrized.
pub fn hessian<F>(f: F, x: &Vector, step: f64) -> Matrix
where
    F: Fn(&Vector) -> f64,
{
    let m = x.len();
    let mut h = Matrix::zeros(m, m);
    let f0 = f(x);
    let mut xp = x.clone();
    for i in 0..m {
        for j in i..m {
            let v = if i == j {
                let orig = xp[i];
                xp[i] = orig + step;
                let fp = f(&xp);
                xp[i] = orig - step;
                let fm = f(&xp);
                xp[i] = orig;
                (fp - 2.0 * f0 + fm) / (step * step)
            } else {
                let (oi, oj) = (xp[i], xp[j]);
                let mut eval = |di: f64, dj: f64| {
                    xp[i] = oi + di;
                    xp[j] = oj + dj;
                    let v = f(&xp);
                    xp[i] = oi;
                    xp[j] = oj;
                    v
                };
                let fpp = eval(step, step);
                let fpm = eval(step, -step);
                let fmp = eval(-step, step);
                let fmm = eval(-step, -step);
                (fpp - fpm - fmp + fmm) / (4.0 * step * step)
            };
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

/// Hessian as the central-difference Jacobian of a gradient, symmetrized.
pub fn hessian_from_gradient<G>(grad: G, x: &Vector, step: f64) -> Matrix
where
    G: Fn(&Vector) -> Vector,
{
    let j = jacobian(grad, x, step);
    (&j + j.transpose()) * 0.5
}

/// Directional derivative `(F(x + h v) − F(x − h v)) / 2h` of a
/// matrix-valued function.
pub fn directional_matrix<F>(f: F, x: &Vector, v: &Vector, step: f64) -> Matrix
where
    F: Fn(&Vector) -> Matrix,
{
    let fp = f(&(x + v * step));
    let fm = f(&(x - v * step));
    (fp - fm) / (2.0 * step)
}

/// Directional derivative of a vector-valued function along `v`, with the
/// step taken along the unit direction so that large `v` does not inflate
/// the truncation error.
pub fn directional<F>(f: F, x: &Vector, v: &Vector, step: f64) -> Vector
where
    F: Fn(&Vector) -> Vector,
{
    let norm = v.norm();
    if norm == 0.0 {
        return Vector::zeros(f(x).len());
    }
    let u = v / norm;
    let fp = f(&(x + &u * step));
    let fm = f(&(x - &u * step));
    (fp - fm) * (norm / (2.0 * step))
}
