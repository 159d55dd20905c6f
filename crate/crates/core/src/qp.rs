//! Dense convex QP solver for `min ½ aᵀHa − fᵀa  s.t.  C a ≥ d`.
//!
//! Primal active-set method working in the null space of the active rows.
//! Problems are small (tens of variables, about a hundred rows), so every
//! iteration recomputes an SVD of the working rows and an eigendecomposition
//! of the reduced Hessian instead of maintaining factorization updates.
//!
//! Positive-semidefinite `H` is supported: zero-curvature descent directions
//! are followed as rays until a constraint blocks them, and among multiple
//! minimizers the one of smallest norm along the free directions is returned.
//! Infeasible problems are solved in elastic form with one shared slack.

use nalgebra::SymmetricEigen;

use crate::linalg;
use crate::{Error, Matrix, Result, Vector};

/// Penalty on the shared slack of the elastic problem.
pub const SLACK_PENALTY: f64 = 1e6;

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: Matrix,
    pub f: Vector,
    pub c: Matrix,
    pub d: Vector,
    pub warm_start: Option<Vector>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QpStatus {
    Optimal,
    /// Constraints were infeasible; the shared slack reached `max_slack`.
    Relaxed {
        max_slack: f64,
    },
    /// `H` is singular on the active null space; the minimum-norm minimizer
    /// along the free directions was selected.
    RankDeficientFreeDirections,
}

impl QpStatus {
    pub fn label(&self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Relaxed { .. } => "relaxed",
            QpStatus::RankDeficientFreeDirections => "rank_deficient",
        }
    }

    pub fn slack(&self) -> f64 {
        match self {
            QpStatus::Relaxed { max_slack } => *max_slack,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub a: Vector,
    pub duals: Vector,
    pub status: QpStatus,
    pub kkt_residual: f64,
    /// Working-set changes performed.
    pub iterations: usize,
    pub active: Vec<usize>,
}

impl QpProblem {
    pub fn unconstrained(h: Matrix, f: Vector) -> Self {
        let n = f.len();
        QpProblem {
            h,
            f,
            c: Matrix::zeros(0, n),
            d: Vector::zeros(0),
            warm_start: None,
        }
    }

    pub fn objective(&self, a: &Vector) -> f64 {
        0.5 * a.dot(&(&self.h * a)) - self.f.dot(a)
    }

    fn validate(&self) -> Result<()> {
        let n = self.f.len();
        if self.h.nrows() != n || self.h.ncols() != n {
            return Err(Error::dims("QP Hessian", n, self.h.nrows()));
        }
        if self.c.ncols() != n && self.c.nrows() > 0 {
            return Err(Error::dims("QP constraint columns", n, self.c.ncols()));
        }
        if self.c.nrows() != self.d.len() {
            return Err(Error::dims(
                "QP constraint rows",
                self.c.nrows(),
                self.d.len(),
            ));
        }
        if let Some(w) = &self.warm_start {
            if w.len() != n {
                return Err(Error::dims("QP warm start", n, w.len()));
            }
        }
        Ok(())
    }
}

/// `max(stationarity, primal violation, dual negativity, complementarity)`.
///
/// Primal violation is measured against `d − slack` so relaxed solutions are
/// judged on the problem they actually solved.
pub fn kkt_residual(p: &QpProblem, a: &Vector, duals: &Vector, slack: f64) -> f64 {
    let mut stat = &p.h * a - &p.f;
    if p.c.nrows() > 0 {
        stat -= p.c.transpose() * duals;
    }
    let mut r = stat.amax();
    for i in 0..p.c.nrows() {
        let gap = p.c.row(i).dot(&a.transpose()) - p.d[i];
        r = r.max((-(gap + slack)).max(0.0));
        r = r.max((-duals[i]).max(0.0));
        r = r.max((duals[i] * (gap + slack)).abs());
    }
    r
}

/// Active-set solver. Holds tolerances only; instances are cheap to clone
/// and can be moved between threads.
#[derive(Debug, Clone)]
pub struct QpSolver {
    /// Relative feasibility tolerance.
    pub feas_tol: f64,
    /// Relative optimality tolerance.
    pub opt_tol: f64,
}

impl Default for QpSolver {
    fn default() -> Self {
        QpSolver {
            feas_tol: 1e-9,
            opt_tol: 1e-11,
        }
    }
}

struct Core<'a> {
    h: &'a Matrix,
    f: &'a Vector,
    c: &'a Matrix,
    d: &'a Vector,
    curv_tol: f64,
    grad_tol: f64,
    feas_tol: f64,
}

struct CoreResult {
    a: Vector,
    working: Vec<usize>,
    duals: Vector,
    changes: usize,
    moved: bool,
}

enum CoreError {
    Unbounded,
    Stall {
        a: Vector,
        working: Vec<usize>,
        changes: usize,
    },
}

impl QpSolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn solve(&self, p: &QpProblem) -> Result<QpSolution> {
        p.validate()?;
        let n = p.f.len();
        let k = p.c.nrows();
        let h = self.convexify(&p.h)?;
        let scale = 1.0 + p.f.amax() + h.amax() + p.d.amax();
        let hmax = h.amax();
        let core = Core {
            h: &h,
            f: &p.f,
            c: &p.c,
            d: &p.d,
            curv_tol: (1e-10 * hmax).max(1e-14),
            grad_tol: self.opt_tol * scale,
            feas_tol: self.feas_tol * (1.0 + p.d.amax()),
        };

        let start = match &p.warm_start {
            Some(w) => w.clone(),
            None => {
                // The unconstrained minimizer is a good guess when no rows bind.
                let (pinv, _) = linalg::pinv_symmetric(&h, 1e-10);
                pinv * &p.f
            }
        };
        let feasible =
            |a: &Vector| (0..k).all(|i| p.c.row(i).dot(&a.transpose()) - p.d[i] >= -core.feas_tol);

        let result = if feasible(&start) {
            core.run(start, p.warm_start.is_some())?
        } else {
            let (a0, slack) = self.elastic(p, &h, &core, &start)?;
            if slack <= core.feas_tol {
                core.run(a0, true)?
            } else {
                let duals = self.elastic_duals(p, &h, &a0, slack);
                let kkt = kkt_residual(p, &a0, &duals, slack);
                let active = (0..k)
                    .filter(|&i| {
                        (p.c.row(i).dot(&a0.transpose()) + slack - p.d[i]).abs() <= core.feas_tol
                    })
                    .collect();
                return Ok(QpSolution {
                    a: a0,
                    duals,
                    status: QpStatus::Relaxed { max_slack: slack },
                    kkt_residual: kkt,
                    iterations: 0,
                    active,
                });
            }
        };
        let CoreResult {
            mut a,
            working,
            duals,
            changes,
            moved,
        } = result;
        let mut status = QpStatus::Optimal;
        let free = self.free_directions(&h, &p.c, &working, n, core.curv_tol);
        if free.ncols() > 0 {
            status = QpStatus::RankDeficientFreeDirections;
            if moved || p.warm_start.is_none() {
                a = core.min_norm_polish(&a, &free, &working);
            }
        }
        let mut full = Vector::zeros(k);
        for (j, &i) in working.iter().enumerate() {
            full[i] = duals[j];
        }
        let kkt = kkt_residual(p, &a, &full, 0.0);
        Ok(QpSolution {
            a,
            duals: full,
            status,
            kkt_residual: kkt,
            iterations: changes,
            active: working,
        })
    }

    /// Rejects indefinite Hessians and clips round-off negative eigenvalues.
    fn convexify(&self, h: &Matrix) -> Result<Matrix> {
        let sym = linalg::symmetrize(h);
        if sym.nrows() == 0 {
            return Ok(sym);
        }
        let eig = SymmetricEigen::new(sym.clone());
        let lmax = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let lmin = eig
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if lmin >= 0.0 {
            return Ok(sym);
        }
        if lmin < -1e-10 * lmax.max(f64::MIN_POSITIVE) && lmin < -1e-14 {
            return Err(Error::NotConvex { eigenvalue: lmin });
        }
        let clipped = eig.eigenvalues.map(|l| l.max(0.0));
        Ok(&eig.eigenvectors * Matrix::from_diagonal(&clipped) * eig.eigenvectors.transpose())
    }

    /// Directions in the null space of the working rows along which `H`
    /// has no curvature.
    fn free_directions(
        &self,
        h: &Matrix,
        c: &Matrix,
        working: &[usize],
        n: usize,
        curv_tol: f64,
    ) -> Matrix {
        let aw = rows(c, working);
        let z = linalg::null_space(&aw, n, 1e-12);
        if z.ncols() == 0 {
            return z;
        }
        let red = z.transpose() * h * &z;
        let eig = SymmetricEigen::new(linalg::symmetrize(&red));
        let cols: Vec<_> = (0..eig.eigenvalues.len())
            .filter(|&i| eig.eigenvalues[i] <= curv_tol)
            .map(|i| &z * eig.eigenvectors.column(i))
            .collect();
        let mut out = Matrix::zeros(n, cols.len());
        for (j, col) in cols.iter().enumerate() {
            out.set_column(j, col);
        }
        out
    }

    /// Solves the elastic problem and returns its primal point and slack.
    fn elastic(
        &self,
        p: &QpProblem,
        h: &Matrix,
        core: &Core,
        start: &Vector,
    ) -> Result<(Vector, f64)> {
        let n = p.f.len();
        let k = p.c.nrows();
        let mut he = Matrix::zeros(n + 1, n + 1);
        he.view_mut((0, 0), (n, n)).copy_from(h);
        let mut fe = Vector::zeros(n + 1);
        fe.rows_mut(0, n).copy_from(&p.f);
        fe[n] = -SLACK_PENALTY;
        let mut ce = Matrix::zeros(k + 1, n + 1);
        ce.view_mut((0, 0), (k, n)).copy_from(&p.c);
        for i in 0..k {
            ce[(i, n)] = 1.0;
        }
        ce[(k, n)] = 1.0;
        let mut de = Vector::zeros(k + 1);
        de.rows_mut(0, k).copy_from(&p.d);
        let s0 = (0..k)
            .map(|i| p.d[i] - p.c.row(i).dot(&start.transpose()))
            .fold(0.0_f64, f64::max);
        let mut z0 = Vector::zeros(n + 1);
        z0.rows_mut(0, n).copy_from(start);
        z0[n] = s0;
        let ecore = Core {
            h: &he,
            f: &fe,
            c: &ce,
            d: &de,
            curv_tol: core.curv_tol,
            grad_tol: core.grad_tol * (1.0 + SLACK_PENALTY),
            feas_tol: core.feas_tol,
        };
        let res = ecore.run(z0, true)?;
        Ok((res.a.rows(0, n).into_owned(), res.a[n].max(0.0)))
    }

    fn elastic_duals(&self, p: &QpProblem, h: &Matrix, a: &Vector, slack: f64) -> Vector {
        let k = p.c.nrows();
        let tol = self.feas_tol * (1.0 + p.d.amax());
        let act: Vec<usize> = (0..k)
            .filter(|&i| (p.c.row(i).dot(&a.transpose()) + slack - p.d[i]).abs() <= tol.max(1e-9))
            .collect();
        let g = h * a - &p.f;
        let aw = rows(&p.c, &act);
        let lam = linalg::lstsq(&aw.transpose(), &g, 1e-12);
        let mut out = Vector::zeros(k);
        for (j, &i) in act.iter().enumerate() {
            out[i] = lam[j];
        }
        out
    }
}

fn rows(c: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(idx.len(), c.ncols());
    for (r, &i) in idx.iter().enumerate() {
        out.set_row(r, &c.row(i));
    }
    out
}

impl Core<'_> {
    fn slack(&self, i: usize, a: &Vector) -> f64 {
        self.c.row(i).dot(&a.transpose()) - self.d[i]
    }

    /// Initial working set: rows active at `a`, kept only while linearly
    /// independent of those already chosen.
    fn initial_working(&self, a: &Vector) -> Vec<usize> {
        let n = self.f.len();
        let mut w: Vec<usize> = Vec::new();
        for i in 0..self.c.nrows() {
            if self.slack(i, a).abs() > self.feas_tol {
                continue;
            }
            if w.len() >= n {
                break;
            }
            let z = linalg::null_space(&rows(self.c, &w), n, 1e-12);
            let proj = self.c.row(i) * &z;
            if proj.norm() > 1e-10 * self.c.row(i).norm().max(1e-300) {
                w.push(i);
            }
        }
        w
    }

    fn run(&self, start: Vector, use_active: bool) -> Result<CoreResult> {
        match self.iterate(start, use_active) {
            Ok(r) => Ok(r),
            Err(CoreError::Unbounded) => Err(Error::Unbounded),
            Err(CoreError::Stall {
                a,
                working,
                changes,
            }) => {
                let k = self.c.nrows();
                let g = self.h * &a - self.f;
                let lam = linalg::lstsq(&rows(self.c, &working).transpose(), &g, 1e-12);
                let mut duals = Vector::zeros(k);
                for (j, &i) in working.iter().enumerate() {
                    duals[i] = lam[j];
                }
                let p = QpProblem {
                    h: self.h.clone(),
                    f: self.f.clone(),
                    c: self.c.clone(),
                    d: self.d.clone(),
                    warm_start: None,
                };
                let kkt = kkt_residual(&p, &a, &duals, 0.0);
                Err(Error::Stall {
                    iterations: changes,
                    best: Box::new(QpSolution {
                        a,
                        duals,
                        status: QpStatus::Optimal,
                        kkt_residual: kkt,
                        iterations: changes,
                        active: working,
                    }),
                })
            }
        }
    }

    fn iterate(
        &self,
        start: Vector,
        use_active: bool,
    ) -> std::result::Result<CoreResult, CoreError> {
        let n = self.f.len();
        let k = self.c.nrows();
        let cap = 3 * (n + k);
        let mut a = start;
        let mut w = if use_active {
            self.initial_working(&a)
        } else {
            Vec::new()
        };
        let mut changes = 0;
        let mut moved = false;
        let mut guard = 0;
        loop {
            guard += 1;
            if changes > cap || guard > 4 * (cap + 2) {
                return Err(CoreError::Stall {
                    a,
                    working: w,
                    changes,
                });
            }
            let g = self.h * &a - self.f;
            let aw = rows(self.c, &w);
            let z = linalg::null_space(&aw, n, 1e-12);
            let (step, ray) = self.null_space_step(&z, &g);
            match step {
                Some(p) => {
                    // Ratio test against inactive rows.
                    let mut alpha = if ray { f64::INFINITY } else { 1.0 };
                    let mut block = None;
                    for i in 0..k {
                        if w.contains(&i) {
                            continue;
                        }
                        let cp = self.c.row(i).dot(&p.transpose());
                        if cp < -1e-14 * self.c.row(i).norm() * p.norm() {
                            let ai = self.slack(i, &a).max(0.0) / -cp;
                            if ai < alpha {
                                alpha = ai;
                                block = Some(i);
                            }
                        }
                    }
                    if alpha.is_infinite() {
                        return Err(CoreError::Unbounded);
                    }
                    if alpha > 0.0 {
                        a += &p * alpha;
                        moved = true;
                    }
                    if let Some(i) = block {
                        w.push(i);
                        changes += 1;
                    }
                }
                None => {
                    let lam = if w.is_empty() {
                        Vector::zeros(0)
                    } else {
                        linalg::lstsq(&aw.transpose(), &g, 1e-12)
                    };
                    let lam_tol = self.grad_tol;
                    let worst = (0..w.len())
                        .filter(|&j| lam[j] < -lam_tol)
                        .min_by(|&x, &y| lam[x].partial_cmp(&lam[y]).unwrap());
                    match worst {
                        Some(j) => {
                            w.remove(j);
                            changes += 1;
                        }
                        None => {
                            return Ok(CoreResult {
                                a,
                                working: w,
                                duals: lam.map(|l| l.max(0.0)),
                                changes,
                                moved,
                            })
                        }
                    }
                }
            }
        }
    }

    /// Descent step restricted to the null space `Z`. Returns `None` when the
    /// reduced gradient vanishes, otherwise the step and whether it is a
    /// zero-curvature ray.
    fn null_space_step(&self, z: &Matrix, g: &Vector) -> (Option<Vector>, bool) {
        if z.ncols() == 0 {
            return (None, false);
        }
        let rg = z.transpose() * g;
        if rg.amax() <= self.grad_tol {
            return (None, false);
        }
        let red = linalg::symmetrize(&(z.transpose() * self.h * z));
        let eig = SymmetricEigen::new(red);
        let r = z.ncols();
        let mut flat = Vector::zeros(r);
        let mut newton = Vector::zeros(r);
        for i in 0..r {
            let q = eig.eigenvectors.column(i);
            let coef = q.dot(&rg);
            if eig.eigenvalues[i] <= self.curv_tol {
                flat += q * coef;
            } else {
                newton += q * (coef / eig.eigenvalues[i]);
            }
        }
        if flat.amax() > self.grad_tol {
            (Some(-(z * flat)), true)
        } else {
            (Some(-(z * newton)), false)
        }
    }

    /// Moves toward the minimum-norm point along free directions while
    /// keeping inactive rows feasible.
    fn min_norm_polish(&self, a: &Vector, free: &Matrix, working: &[usize]) -> Vector {
        let p = -(free * (free.transpose() * a));
        if p.amax() == 0.0 {
            return a.clone();
        }
        let mut alpha: f64 = 1.0;
        for i in 0..self.c.nrows() {
            if working.contains(&i) {
                continue;
            }
            let cp = self.c.row(i).dot(&p.transpose());
            if cp < 0.0 {
                alpha = alpha.min(self.slack(i, a).max(0.0) / -cp);
            }
        }
        a + p * alpha
    }
}
