//! Behavior tasks and their weighted least-squares combination.
//!
//! A behavior task on a manifold `N` with metric `g` asks for the task
//! acceleration `γ̈ = g⁻¹(F_D(ẋ) − ∂Φ) − Γ(ẋ, ẋ)`. Pulled back through the
//! map `f`, it becomes the residual `J σ̈ − (γ̈ − J̇ σ̇)` weighted by `w g`.

use serde::{Deserialize, Serialize};

use crate::geom::MetricSpec;
use crate::linalg;
use crate::taskmap::{TaskMap, TaskState};
use crate::{Error, Matrix, Result, Vector};

/// Relative eigenvalue cutoff for the pseudoinverse of the normal matrix.
pub const PINV_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PotentialSpec {
    None,
    /// `Φ(x) = ½ k ‖x − c‖²` in task coordinates.
    Quadratic {
        center: Vec<f64>,
        gain: f64,
    },
    /// `Φ(x) = ½ k x²` on a one-dimensional task.
    QuadraticScalar {
        gain: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DissipationSpec {
    None,
    /// Covector force `−B ẋ` with `B` given as a scalar multiple of identity.
    Linear {
        gain: f64,
    },
}

impl PotentialSpec {
    /// Covector `∂Φ` at `x`.
    pub fn gradient(&self, x: &Vector) -> Vector {
        match self {
            PotentialSpec::None => Vector::zeros(x.len()),
            PotentialSpec::Quadratic { center, gain } => {
                (x - Vector::from_column_slice(center)) * *gain
            }
            PotentialSpec::QuadraticScalar { gain } => x * *gain,
        }
    }

    pub fn value(&self, x: &Vector) -> f64 {
        match self {
            PotentialSpec::None => 0.0,
            PotentialSpec::Quadratic { center, gain } => {
                0.5 * gain * (x - Vector::from_column_slice(center)).norm_squared()
            }
            PotentialSpec::QuadraticScalar { gain } => 0.5 * gain * x.norm_squared(),
        }
    }
}

impl DissipationSpec {
    /// Covector force at task velocity `ẋ`.
    pub fn force(&self, xdot: &Vector) -> Vector {
        match self {
            DissipationSpec::None => Vector::zeros(xdot.len()),
            DissipationSpec::Linear { gain } => xdot * -*gain,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BehaviorTask {
    pub name: String,
    pub map: TaskMap,
    pub metric: MetricSpec,
    pub potential: PotentialSpec,
    pub dissipation: DissipationSpec,
    pub weight: f64,
}

/// A behavior task linearized at the current state.
#[derive(Debug, Clone)]
pub struct LinearizedTask {
    pub jac: Matrix,
    /// `w g(x)`.
    pub weight: Matrix,
    /// `γ̈ − J̇ σ̇`.
    pub target: Vector,
    pub state: TaskState,
}

impl BehaviorTask {
    pub fn validate(&self) -> Result<()> {
        if self.metric.dim() != self.map.output_dim() {
            return Err(Error::dims(
                format!("metric of behavior task `{}`", self.name),
                self.map.output_dim(),
                self.metric.dim(),
            ));
        }
        if let PotentialSpec::Quadratic { center, .. } = &self.potential {
            if center.len() != self.map.output_dim() {
                return Err(Error::dims(
                    format!("potential center of `{}`", self.name),
                    self.map.output_dim(),
                    center.len(),
                ));
            }
        }
        if !(self.weight > 0.0) {
            return Err(Error::Config {
                path: format!("behavior.{}.weight", self.name),
                message: "weight must be positive".into(),
            });
        }
        self.metric.validate()
    }

    /// `γ̈` given the task position and velocity.
    pub fn desired_accel(&self, x: &Vector, xdot: &Vector) -> Vector {
        let ge = self.metric.eval(x);
        let cov = self.dissipation.force(xdot) - self.potential.gradient(x);
        let mut acc = &ge.g_inv * cov;
        if !self.metric.is_constant() {
            acc -= self.metric.contract_christoffel(x, xdot, xdot);
        }
        acc
    }

    pub fn linearize(&self, sigma: &Vector, sigma_dot: &Vector) -> Result<LinearizedTask> {
        let state = self.map.state(sigma, sigma_dot)?;
        let gamma = self.desired_accel(&state.x, &state.xdot);
        let target = gamma - &state.curv;
        let weight = self.metric.metric_matrix(&state.x) * self.weight;
        Ok(LinearizedTask {
            jac: state.jac.clone(),
            weight,
            target,
            state,
        })
    }
}

/// `A = γ̈ − J̇ σ̇` for one task.
pub fn residual_target(task: &BehaviorTask, sigma: &Vector, sigma_dot: &Vector) -> Result<Vector> {
    Ok(task.linearize(sigma, sigma_dot)?.target)
}

/// Normal equations `H = Σ Jᵀ W J`, `f = Σ Jᵀ W A`.
pub fn normal_equations(tasks: &[LinearizedTask], n: usize) -> (Matrix, Vector) {
    let mut h = Matrix::zeros(n, n);
    let mut f = Vector::zeros(n);
    for t in tasks {
        let jtw = t.jac.transpose() * &t.weight;
        h += &jtw * &t.jac;
        f += jtw * &t.target;
    }
    (linalg::symmetrize(&h), f)
}

#[derive(Debug, Clone)]
pub struct ClosedForm {
    pub accel: Vector,
    pub rank: usize,
    /// The normal matrix was numerically zero; the acceleration is zero.
    pub degenerate: bool,
}

/// Minimum-norm minimizer of `Σ ‖J σ̈ − A‖²_{w g}` without constraints.
pub fn closed_form_accel(
    tasks: &[BehaviorTask],
    sigma: &Vector,
    sigma_dot: &Vector,
) -> Result<ClosedForm> {
    let lin = tasks
        .iter()
        .map(|t| t.linearize(sigma, sigma_dot))
        .collect::<Result<Vec<_>>>()?;
    let (h, f) = normal_equations(&lin, sigma.len());
    let (pinv, rank) = linalg::pinv_symmetric(&h, PINV_CUTOFF);
    Ok(ClosedForm {
        accel: pinv * f,
        rank,
        degenerate: rank == 0,
    })
}
