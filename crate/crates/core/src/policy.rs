//! The two-stage control step.
//!
//! QP 1 computes the autonomous safe acceleration `ā` from the behavior tasks
//! subject to every safety row. QP 2 adds, for each control task, the residual
//! `½ ‖J_l (a − ā) − u_l♯‖²_{w_l}` and is warm-started at `ā`, so that with all
//! inputs zero it returns `ā` itself.

use crate::geom::MetricSpec;
use crate::linalg;
use crate::pbds::{self, BehaviorTask};
use crate::qp::{QpProblem, QpSolution, QpSolver, QpStatus};
use crate::safety::{SafetyEval, SafetyTask};
use crate::taskmap::TaskMap;
use crate::{Error, Matrix, Result, Vector};

#[derive(Debug, Clone)]
pub struct ControlTask {
    pub name: String,
    pub map: TaskMap,
    pub metric: MetricSpec,
    pub weight: Matrix,
    /// Covector input `u_l`; zero by default.
    pub input: Vector,
}

impl ControlTask {
    pub fn new(name: impl Into<String>, map: TaskMap, metric: MetricSpec, weight: Matrix) -> Self {
        let n = map.output_dim();
        ControlTask {
            name: name.into(),
            map,
            metric,
            weight,
            input: Vector::zeros(n),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QpSummary {
    pub status: QpStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl From<&QpSolution> for QpSummary {
    fn from(s: &QpSolution) -> Self {
        QpSummary {
            status: s.status,
            kkt_residual: s.kkt_residual,
            iterations: s.iterations,
        }
    }
}

/// Outcome of one control step.
#[derive(Debug, Clone)]
pub struct PolicyStep {
    pub a_bar: Vector,
    pub sigma_ddot: Vector,
    pub qp1: QpSummary,
    pub qp2: QpSummary,
    pub safety: Vec<SafetyEval>,
    /// Whether each safety row is active at the steered solution.
    pub active: Vec<bool>,
    pub warnings: Vec<String>,
}

/// Linearized control task: `J`, `w` and `u♯`.
#[derive(Debug, Clone)]
pub struct ControlTerm {
    pub jac: Matrix,
    pub weight: Matrix,
    pub u_sharp: Vector,
}

/// QP 1 together with the data needed to build QP 2.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub qp1: QpProblem,
    pub safety: Vec<SafetyEval>,
    /// Safety task index of each constraint row (`None` for box rows).
    pub row_owner: Vec<Option<usize>>,
    pub controls: Vec<ControlTerm>,
}

impl Assembled {
    /// QP 2 for a given autonomous acceleration, warm-started at it.
    pub fn qp2(&self, a_bar: &Vector) -> QpProblem {
        let mut h = self.qp1.h.clone();
        let mut f = self.qp1.f.clone();
        for c in &self.controls {
            let jtw = c.jac.transpose() * &c.weight;
            h += &jtw * &c.jac;
            f += jtw * (&c.jac * a_bar + &c.u_sharp);
        }
        QpProblem {
            h: linalg::symmetrize(&h),
            f,
            c: self.qp1.c.clone(),
            d: self.qp1.d.clone(),
            warm_start: Some(a_bar.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Policy {
    pub behaviors: Vec<BehaviorTask>,
    pub safeties: Vec<SafetyTask>,
    pub controls: Vec<ControlTask>,
    /// Optional per-coordinate bound `|σ̈ᵢ| ≤ a_max` added as rows.
    pub accel_limit: Option<f64>,
    pub solver: QpSolver,
    dim: usize,
}

impl Policy {
    pub fn new(
        dim: usize,
        behaviors: Vec<BehaviorTask>,
        safeties: Vec<SafetyTask>,
        controls: Vec<ControlTask>,
    ) -> Result<Self> {
        if behaviors.is_empty() {
            return Err(Error::Scenario(
                "a policy needs at least one behavior task".into(),
            ));
        }
        for b in &behaviors {
            b.validate()?;
            if b.map.input_dim() != dim {
                return Err(Error::dims(
                    format!("behavior task `{}`", b.name),
                    dim,
                    b.map.input_dim(),
                ));
            }
        }
        for s in &safeties {
            if s.map().input_dim() != dim {
                return Err(Error::dims(
                    format!("safety task `{}`", s.name()),
                    dim,
                    s.map().input_dim(),
                ));
            }
            if let SafetyTask::Bcbf(t) = s {
                t.validate()?;
            }
        }
        for c in &controls {
            let n = c.map.output_dim();
            if c.map.input_dim() != dim {
                return Err(Error::dims(
                    format!("control task `{}`", c.name),
                    dim,
                    c.map.input_dim(),
                ));
            }
            if c.weight.nrows() != n || c.weight.ncols() != n || c.metric.dim() != n {
                return Err(Error::dims(
                    format!("control task `{}` weight", c.name),
                    n,
                    c.weight.nrows(),
                ));
            }
        }
        Ok(Policy {
            behaviors,
            safeties,
            controls,
            accel_limit: None,
            solver: QpSolver::default(),
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Sets the input of control task `index`.
    pub fn set_action(&mut self, index: usize, u: &Vector) -> Result<()> {
        let task = self
            .controls
            .get_mut(index)
            .ok_or_else(|| Error::Scenario(format!("no control task with index {index}")))?;
        if u.len() != task.input.len() {
            return Err(Error::dims(
                format!("action for `{}`", task.name),
                task.input.len(),
                u.len(),
            ));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Scenario(format!(
                "non-finite action for `{}`",
                task.name
            )));
        }
        task.input.copy_from(u);
        Ok(())
    }

    pub fn clear_actions(&mut self) {
        for c in &mut self.controls {
            c.input.fill(0.0);
        }
    }

    pub fn assemble(&self, sigma: &Vector, sigma_dot: &Vector) -> Result<Assembled> {
        let n = self.dim;
        if sigma.len() != n || sigma_dot.len() != n {
            return Err(Error::dims(
                "policy state",
                n,
                sigma.len().min(sigma_dot.len()),
            ));
        }
        let lin = self
            .behaviors
            .iter()
            .map(|b| b.linearize(sigma, sigma_dot))
            .collect::<Result<Vec<_>>>()?;
        let (h, f) = pbds::normal_equations(&lin, n);

        let safety = self
            .safeties
            .iter()
            .map(|s| s.evaluate(sigma, sigma_dot))
            .collect::<Result<Vec<_>>>()?;
        let box_rows = if self.accel_limit.is_some() { 2 * n } else { 0 };
        let nrows = safety.iter().filter(|e| e.row.is_some()).count() + box_rows;
        let mut c = Matrix::zeros(nrows, n);
        let mut d = Vector::zeros(nrows);
        let mut owner = Vec::with_capacity(nrows);
        let mut r = 0;
        for (i, e) in safety.iter().enumerate() {
            if let Some(row) = &e.row {
                c.set_row(r, &row.coeffs.transpose());
                d[r] = row.rhs;
                owner.push(Some(i));
                r += 1;
            }
        }
        if let Some(amax) = self.accel_limit {
            for j in 0..n {
                c[(r, j)] = 1.0;
                d[r] = -amax;
                c[(r + 1, j)] = -1.0;
                d[r + 1] = -amax;
                owner.push(None);
                owner.push(None);
                r += 2;
            }
        }

        let controls = self
            .controls
            .iter()
            .map(|ct| {
                let st = ct.map.state(sigma, sigma_dot)?;
                let g_inv = ct.metric.eval(&st.x).g_inv;
                Ok(ControlTerm {
                    jac: st.jac,
                    weight: ct.weight.clone(),
                    u_sharp: g_inv * &ct.input,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Assembled {
            qp1: QpProblem {
                h,
                f,
                c,
                d,
                warm_start: None,
            },
            safety,
            row_owner: owner,
            controls,
        })
    }

    pub fn control_step(&mut self, sigma: &Vector, sigma_dot: &Vector) -> Result<PolicyStep> {
        let asm = self.assemble(sigma, sigma_dot)?;
        let mut warnings = Vec::new();
        for (e, s) in asm.safety.iter().zip(&self.safeties) {
            if e.dropped {
                warnings.push(format!(
                    "safety row `{}` dropped: vanishing gradient",
                    s.name()
                ));
            }
            if e.clamped {
                warnings.push(format!("safety task `{}` hit a domain clamp", s.name()));
            }
        }
        let s1 = self.solver.solve(&asm.qp1)?;
        if let QpStatus::Relaxed { max_slack } = s1.status {
            warnings.push(format!(
                "QP 1 infeasible, relaxed with slack {max_slack:.3e}"
            ));
        }
        let s2 = if asm.controls.is_empty() {
            s1.clone()
        } else {
            self.solver.solve(&asm.qp2(&s1.a))?
        };
        if let QpStatus::Relaxed { max_slack } = s2.status {
            warnings.push(format!(
                "QP 2 infeasible, relaxed with slack {max_slack:.3e}"
            ));
        }
        let mut active = vec![false; self.safeties.len()];
        for &row in &s2.active {
            if let Some(Some(i)) = asm.row_owner.get(row) {
                active[*i] = true;
            }
        }
        if s2.a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { t: f64::NAN });
        }
        Ok(PolicyStep {
            qp1: QpSummary::from(&s1),
            qp2: QpSummary::from(&s2),
            a_bar: s1.a,
            sigma_ddot: s2.a,
            safety: asm.safety,
            active,
            warnings,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pbds::{DissipationSpec, PotentialSpec};
    use crate::safety::{BarrierKind, EcbfTask, SafetyFunction};
    use approx::assert_relative_eq;

    fn planar_policy(controls: Vec<ControlTask>, with_wall: bool) -> Policy {
        let behavior = BehaviorTask {
            name: "attract".into(),
            map: TaskMap::Identity { dim: 2 },
            metric: MetricSpec::flat(2),
            potential: PotentialSpec::Quadratic {
                center: vec![2.0, 0.0],
                gain: 1.0,
            },
            dissipation: DissipationSpec::Linear { gain: 1.0 },
            weight: 1.0,
        };
        let mut safeties = Vec::new();
        if with_wall {
            safeties.push(SafetyTask::Ecbf(EcbfTask {
                name: "wall".into(),
                map: TaskMap::CoordinateProjection { dim: 2, index: 0 },
                h0: SafetyFunction::new(BarrierKind::UpperBound { limit: 1.0 }),
                poles: (1.0, 1.0),
            }));
        }
        Policy::new(2, vec![behavior], safeties, controls).unwrap()
    }

    #[test]
    fn unconstrained_step_equals_closed_form() {
        let mut p = planar_policy(vec![], false);
        let s = Vector::from_vec(vec![0.3, -0.2]);
        let v = Vector::from_vec(vec![0.1, 0.4]);
        let step = p.control_step(&s, &v).unwrap();
        let cf = pbds::closed_form_accel(&p.behaviors, &s, &v).unwrap();
        assert_relative_eq!(step.sigma_ddot, cf.accel, epsilon = 1e-9);
        assert_eq!(step.a_bar, step.sigma_ddot);
    }

    #[test]
    fn zero_action_returns_autonomous_solution() {
        let ctl = ControlTask::new(
            "push",
            TaskMap::Identity { dim: 2 },
            MetricSpec::flat(2),
            Matrix::identity(2, 2),
        );
        let mut p = planar_policy(vec![ctl], true);
        // Near the wall moving toward it: the barrier row binds.
        let s = Vector::from_vec(vec![0.9, 0.0]);
        let v = Vector::from_vec(vec![0.5, 0.1]);
        let step = p.control_step(&s, &v).unwrap();
        assert!(step.active[0]);
        assert!((&step.sigma_ddot - &step.a_bar).norm() <= 1e-8 * (1.0 + step.a_bar.norm()));
    }

    #[test]
    fn heavy_control_task_dominates() {
        let ctl = ControlTask::new(
            "push",
            TaskMap::Identity { dim: 2 },
            MetricSpec::flat(2),
            Matrix::identity(2, 2) * 1e6,
        );
        let mut p = planar_policy(vec![ctl], false);
        let u = Vector::from_vec(vec![0.0, 3.0]);
        p.set_action(0, &u).unwrap();
        let step = p
            .control_step(&Vector::zeros(2), &Vector::zeros(2))
            .unwrap();
        let target = &step.a_bar + &u;
        assert!((&step.sigma_ddot - &target).norm() <= 1e-3 * target.norm());
        assert!(p.set_action(0, &Vector::zeros(3)).is_err());
    }

    #[test]
    fn safety_dominates_actions() {
        let ctl = ControlTask::new(
            "push",
            TaskMap::Identity { dim: 2 },
            MetricSpec::flat(2),
            Matrix::identity(2, 2),
        );
        let mut p = planar_policy(vec![ctl], true);
        p.set_action(0, &Vector::from_vec(vec![50.0, 0.0])).unwrap();
        let s = Vector::from_vec(vec![0.95, 0.0]);
        let v = Vector::from_vec(vec![0.2, 0.0]);
        let asm = p.assemble(&s, &v).unwrap();
        let step = p.control_step(&s, &v).unwrap();
        let row = asm.qp1.c.row(0);
        assert_relative_eq!(
            row.dot(&step.sigma_ddot.transpose()),
            asm.qp1.d[0],
            epsilon = 1e-9
        );
        assert!(step.active[0]);
    }
}
