//! Independent oracles shared by the integration tests. Nothing here calls
//! into the library's own derivative or solver code.
#![allow(dead_code)]

use geopolicy::{Matrix, Vector};
use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    Vector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

pub fn random_unit3(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Central-difference Jacobian.
pub fn fd_jacobian(f: impl Fn(&Vector) -> Vector, x: &Vector, h: f64) -> Matrix {
    let m = f(x).len();
    let mut j = Matrix::zeros(m, x.len());
    for k in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        j.set_column(k, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    j
}

/// Central-difference Hessian of a scalar function.
pub fn fd_hessian(f: impl Fn(&Vector) -> f64, x: &Vector, h: f64) -> Matrix {
    let n = x.len();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let at = |si: f64, sj: f64| {
                let mut p = x.clone();
                p[i] += si * h;
                p[j] += sj * h;
                f(&p)
            };
            out[(i, j)] =
                (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * h * h);
        }
    }
    out
}

/// `d²/dt² f(x + t v)` at `t = 0` by central differences.
pub fn fd_second_directional(
    f: impl Fn(&Vector) -> Vector,
    x: &Vector,
    v: &Vector,
    h: f64,
) -> Vector {
    (f(&(x + v * h)) - f(x) * 2.0 + f(&(x - v * h))) / (h * h)
}

/// Inverse north (sign 1) or south (sign −1) stereographic projection,
/// written from the textbook formula.
pub fn stereo_embed(sign: f64, y: &Vector) -> Vector3<f64> {
    let r2 = y[0] * y[0] + y[1] * y[1];
    Vector3::new(2.0 * y[0], 2.0 * y[1], sign * (r2 - 1.0)) / (1.0 + r2)
}

/// Round metric pulled back through the inverse stereographic projection,
/// assembled as `Jᵀ J` from a finite-difference Jacobian.
pub fn pulled_back_round_metric(sign: f64, y: &Vector) -> Matrix {
    let j = fd_jacobian(
        |p| Vector::from_column_slice(stereo_embed(sign, p).as_slice()),
        y,
        1e-6,
    );
    j.transpose() * j
}

/// Closed-form round metric in stereographic coordinates, `4 / (1 + ‖y‖²)² I`.
pub fn conformal_round_metric(y: &Vector) -> Matrix {
    let s = 1.0 + y.norm_squared();
    Matrix::identity(2, 2) * (4.0 / (s * s))
}

/// Christoffel symbols `Γᵏᵢⱼ` of a metric field from finite differences of
/// the metric, indexed `[k][i][j]`.
pub fn fd_christoffel(g: impl Fn(&Vector) -> Matrix, y: &Vector, h: f64) -> Vec<Vec<Vec<f64>>> {
    let n = y.len();
    let dg: Vec<Matrix> = (0..n)
        .map(|l| {
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[l] += h;
            ym[l] -= h;
            (g(&yp) - g(&ym)) / (2.0 * h)
        })
        .collect();
    let g_inv = g(y).try_inverse().expect("metric is invertible");
    let mut out = vec![vec![vec![0.0; n]; n]; n];
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for l in 0..n {
                    s += 0.5 * g_inv[(k, l)] * (dg[i][(l, j)] + dg[j][(l, i)] - dg[l][(i, j)]);
                }
                out[k][i][j] = s;
            }
        }
    }
    out
}

/// Minimizer of `½ aᵀHa − fᵀa` subject to `C a ≥ d` found by enumerating
/// every active set and keeping the best KKT point. `H` must be positive
/// definite. Returns the minimizer, its objective and its multipliers.
pub fn qp_enumerate(
    h: &Matrix,
    f: &Vector,
    c: &Matrix,
    d: &Vector,
) -> Option<(Vector, f64, Vector)> {
    let n = f.len();
    let m = d.len();
    let mut best: Option<(Vector, f64, Vector)> = None;
    for mask in 0u32..(1 << m) {
        let rows: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let k = rows.len();
        let mut kkt = Matrix::zeros(n + k, n + k);
        let mut rhs = Vector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(h);
        rhs.rows_mut(0, n).copy_from(f);
        for (r, &i) in rows.iter().enumerate() {
            for j in 0..n {
                kkt[(j, n + r)] = -c[(i, j)];
                kkt[(n + r, j)] = c[(i, j)];
            }
            rhs[n + r] = d[i];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        if sol.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let a = sol.rows(0, n).into_owned();
        let lam = sol.rows(n, k).into_owned();
        if lam.iter().any(|&l| l < -1e-9) {
            continue;
        }
        if (0..m).any(|i| c.row(i).dot(&a.transpose()) - d[i] < -1e-9) {
            continue;
        }
        let obj = 0.5 * a.dot(&(h * &a)) - f.dot(&a);
        if best.as_ref().map_or(true, |b| obj < b.1) {
            let mut duals = Vector::zeros(m);
            for (r, &i) in rows.iter().enumerate() {
                duals[i] = lam[r];
            }
            best = Some((a, obj, duals));
        }
    }
    best
}

/// Random positive definite QP with a known feasible point.
pub fn random_feasible_qp(
    rng: &mut ChaCha8Rng,
    n: usize,
    m: usize,
) -> (Matrix, Vector, Matrix, Vector) {
    let a = Matrix::from_fn(n + 1, n, |_, _| rng.random_range(-1.0..1.0));
    let h = a.transpose() * a + Matrix::identity(n, n) * 0.05;
    let f = random_vector(rng, n, 2.0);
    let c = Matrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let x0 = random_vector(rng, n, 1.0);
    let d = &c * &x0 - Vector::from_fn(m, |_, _| rng.random_range(0.0..0.5));
    (h, f, c, d)
}

/// Distance from a point to a segment by dense sampling.
pub fn sampled_segment_distance(
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    p: &Vector3<f64>,
    samples: usize,
) -> f64 {
    (0..=samples)
        .map(|i| {
            let t = i as f64 / samples as f64;
            (a + (b - a) * t - p).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Great circle through `x0` with initial tangent velocity `v`.
pub fn great_circle(x0: &Vector3<f64>, v: &Vector3<f64>, t: f64) -> Vector3<f64> {
    let w = v.norm();
    if w == 0.0 {
        return *x0;
    }
    x0 * (w * t).cos() + v / w * (w * t).sin()
}
