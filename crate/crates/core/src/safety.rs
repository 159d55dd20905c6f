//! Safety functions and their conversion to linear acceleration constraints.
//!
//! Two constructions are provided:
//!
//! * exponential CBFs, `ḧ₀ + κ₂ ḣ₀ + κ₁ h₀ ≥ 0`, which only involve
//!   coordinate partial derivatives of `h₀ ∘ f` and therefore never consult a
//!   task metric;
//! * backstepping CBFs, which lift `h₀` to `h = h₀ − ε/2 ‖ẋ − ξ̃‖²_N` using a
//!   half-Sontag safe velocity field `ξ̃` and enforce `ḣ ≥ −c_α h`. Here the
//!   task metric matters through the gradient, the norm and the connection.
//!
//! Every row has the form `c · σ̈ ≥ rhs`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geom::{self, ChartId, MetricSpec};
use crate::linalg;
use crate::numdiff;
use crate::pbds::PotentialSpec;
use crate::taskmap::TaskMap;
use crate::{Error, Matrix, Result, Vector};

/// Default classification margin for safety violations.
pub const DEFAULT_PADDING: f64 = 1e-3;
/// Rows with a gradient norm below this are dropped.
pub const DEGENERATE_GRADIENT: f64 = 1e-12;
/// Smallest admissible singular value of a BCBF task map.
pub const SUBMERSION_TOLERANCE: f64 = 1e-6;
/// The safe field is differentiated only where `‖grad h₀‖²` exceeds this.
pub const BETA_TOLERANCE: f64 = 1e-10;
const ARCCOS_LIMIT: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BarrierKind {
    /// `arccos(x · c) − r` for `x` on the unit sphere in ℝ³.
    ArcDistS2 { center: [f64; 3], radius: f64 },
    /// The same spherical cap expressed on stereographic chart coordinates.
    ArcDistS2InChart {
        chart: ChartId,
        center: [f64; 3],
        radius: f64,
    },
    /// `x − limit`.
    LowerBound { limit: f64 },
    /// `limit − x`.
    UpperBound { limit: f64 },
    /// `x − margin`.
    SignedDistanceMargin { margin: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyFunction {
    pub kind: BarrierKind,
    /// Classification margin: a state violates safety when `h₀ < −padding`.
    pub padding: f64,
}

/// Value, gradient and Hessian of a scalar function in task coordinates.
#[derive(Debug, Clone)]
pub struct ScalarJet {
    pub value: f64,
    pub grad: Vector,
    pub hess: Matrix,
    pub clamped: bool,
}

impl SafetyFunction {
    pub fn new(kind: BarrierKind) -> Self {
        SafetyFunction {
            kind,
            padding: DEFAULT_PADDING,
        }
    }

    /// Input dimension, if fixed by the kind.
    pub fn dim(&self) -> usize {
        match &self.kind {
            BarrierKind::ArcDistS2 { .. } => 3,
            BarrierKind::ArcDistS2InChart { .. } => 2,
            _ => 1,
        }
    }

    pub fn violated(&self, h0: f64) -> bool {
        h0 + self.padding < 0.0
    }

    pub fn value(&self, x: &Vector) -> Result<f64> {
        Ok(self.jet(x)?.value)
    }

    pub fn jet(&self, x: &Vector) -> Result<ScalarJet> {
        if x.len() != self.dim() {
            return Err(Error::dims("safety function input", self.dim(), x.len()));
        }
        let scalar = |value: f64, slope: f64| ScalarJet {
            value,
            grad: Vector::from_element(1, slope),
            hess: Matrix::zeros(1, 1),
            clamped: false,
        };
        match &self.kind {
            BarrierKind::LowerBound { limit } => Ok(scalar(x[0] - limit, 1.0)),
            BarrierKind::UpperBound { limit } => Ok(scalar(limit - x[0], -1.0)),
            BarrierKind::SignedDistanceMargin { margin } => Ok(scalar(x[0] - margin, 1.0)),
            BarrierKind::ArcDistS2 { center, radius } => {
                let c = Vector::from_column_slice(center);
                let (value, d1, d2, clamped) = arccos_jet(x.dot(&c), *radius);
                Ok(ScalarJet {
                    value,
                    grad: &c * d1,
                    hess: &c * c.transpose() * d2,
                    clamped,
                })
            }
            BarrierKind::ArcDistS2InChart {
                chart,
                center,
                radius,
            } => {
                let c = Vector3::from(*center);
                let p = geom::embed(chart, x)?;
                let jac = geom::embed_jacobian(chart, x)?;
                let (value, d1, d2, clamped) = arccos_jet(p.dot(&c), *radius);
                let cv = Vector::from_column_slice(c.as_slice());
                let js = jac.transpose() * &cv;
                let mut hess = &js * js.transpose() * d2;
                let tensor = TaskMap::StereoEmbedding {
                    chart: chart.clone(),
                }
                .second_derivative(x)?;
                for (g, t) in tensor.iter().enumerate() {
                    hess += t * (d1 * c[g]);
                }
                Ok(ScalarJet {
                    value,
                    grad: js * d1,
                    hess,
                    clamped,
                })
            }
        }
    }
}

/// `arccos(s) − r` with first and second derivatives in `s`.
fn arccos_jet(s: f64, r: f64) -> (f64, f64, f64, bool) {
    let clamped = s.abs() > ARCCOS_LIMIT;
    let s = s.clamp(-ARCCOS_LIMIT, ARCCOS_LIMIT);
    let q = 1.0 - s * s;
    let d1 = -1.0 / q.sqrt();
    let d2 = -s / (q * q.sqrt());
    (s.acos() - r, d1, d2, clamped)
}

/// Gradient and Hessian of `h₀ ∘ f` in configuration coordinates.
pub fn composed_grad_hess(
    map: &TaskMap,
    h0: &SafetyFunction,
    sigma: &Vector,
) -> Result<(Vector, Matrix, bool)> {
    let st = map.state(sigma, &Vector::zeros(sigma.len()))?;
    let jet = h0.jet(&st.x)?;
    let grad = st.jac.transpose() * &jet.grad;
    let mut hess = st.jac.transpose() * &jet.hess * &st.jac;
    for (g, t) in map.second_derivative(sigma)?.iter().enumerate() {
        if jet.grad[g] != 0.0 {
            hess += t * jet.grad[g];
        }
    }
    Ok((
        grad,
        linalg::symmetrize(&hess),
        jet.clamped || st.degenerate,
    ))
}

/// Constraint `coeffs · σ̈ ≥ rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub coeffs: Vector,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct EcbfTask {
    pub name: String,
    pub map: TaskMap,
    pub h0: SafetyFunction,
    pub poles: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NominalField {
    Zero,
    /// `ξ = −grad Φ`.
    NegGradPotential {
        potential: PotentialSpec,
    },
}

#[derive(Debug, Clone)]
pub struct BcbfTask {
    pub name: String,
    pub map: TaskMap,
    pub h0: SafetyFunction,
    pub metric: MetricSpec,
    pub nominal: NominalField,
    pub alpha_gain: f64,
    pub delta: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone)]
pub enum SafetyTask {
    Ecbf(EcbfTask),
    Bcbf(BcbfTask),
}

/// Per-task outcome of row assembly.
#[derive(Debug, Clone)]
pub struct SafetyEval {
    pub row: Option<ConstraintRow>,
    pub h0: f64,
    pub h0_dot: f64,
    /// Lifted barrier value for BCBF tasks.
    pub h: Option<f64>,
    pub e_norm: Option<f64>,
    /// Row dropped because the gradient vanished.
    pub dropped: bool,
    /// A domain clamp or degeneracy guard was hit.
    pub clamped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialCheck {
    Ok,
    /// Start is unsafe, so no pole bound applies.
    Vacuous,
    /// `p₁` is below the bound `−ḣ₀/h₀` needed for the start state.
    Warn {
        required_p1: f64,
    },
}

impl EcbfTask {
    pub fn gains(&self) -> (f64, f64) {
        let (p1, p2) = self.poles;
        (p1 * p2, p1 + p2)
    }

    /// `h₀` and `ḣ₀` at a state.
    pub fn barrier_state(&self, sigma: &Vector, sigma_dot: &Vector) -> Result<(f64, f64)> {
        let st = self.map.state(sigma, sigma_dot)?;
        let jet = self.h0.jet(&st.x)?;
        Ok((jet.value, jet.grad.dot(&st.xdot)))
    }

    pub fn row(&self, sigma: &Vector, sigma_dot: &Vector) -> Result<SafetyEval> {
        let st = self.map.state(sigma, sigma_dot)?;
        let jet = self.h0.jet(&st.x)?;
        let c = st.jac.transpose() * &jet.grad;
        let h0_dot = jet.grad.dot(&st.xdot);
        // σ̇ᵀ ∂²(h₀∘f) σ̇ = ẋᵀ ∂²h₀ ẋ + ∂h₀ · ∂²f(σ̇, σ̇)
        let curv = st.xdot.dot(&(&jet.hess * &st.xdot)) + jet.grad.dot(&st.curv);
        let (k1, k2) = self.gains();
        let rhs = -curv - k2 * h0_dot - k1 * jet.value;
        let dropped = c.norm() < DEGENERATE_GRADIENT;
        Ok(SafetyEval {
            row: (!dropped).then_some(ConstraintRow { coeffs: c, rhs }),
            h0: jet.value,
            h0_dot,
            h: None,
            e_norm: None,
            dropped,
            clamped: jet.clamped || st.degenerate,
        })
    }

    pub fn initial_check(&self, sigma: &Vector, sigma_dot: &Vector) -> Result<InitialCheck> {
        let (h0, h0_dot) = self.barrier_state(sigma, sigma_dot)?;
        Ok(ecbf_initial_check(self.poles.0, h0, h0_dot))
    }
}

pub fn ecbf_initial_check(p1: f64, h0: f64, h0_dot: f64) -> InitialCheck {
    if h0 <= 0.0 {
        return InitialCheck::Vacuous;
    }
    let required = -h0_dot / h0;
    if p1 >= required {
        InitialCheck::Ok
    } else {
        InitialCheck::Warn {
            required_p1: required,
        }
    }
}

/// Solution of `ḧ + κ₂ ḣ + κ₁ h = 0` from `(h₀, ḣ₀)`: the comparison-lemma
/// lower bound on `h₀(t)` along ECBF-constrained trajectories.
pub fn ecbf_envelope(poles: (f64, f64), h0: f64, h0_dot: f64, t: f64) -> f64 {
    let (p1, p2) = poles;
    if (p1 - p2).abs() < 1e-9 * p1.abs().max(1.0) {
        let p = 0.5 * (p1 + p2);
        (h0 + (h0_dot + p * h0) * t) * (-p * t).exp()
    } else {
        let c1 = (h0_dot + p2 * h0) / (p2 - p1);
        let c2 = h0 - c1;
        c1 * (-p1 * t).exp() + c2 * (-p2 * t).exp()
    }
}

/// `λ` of the half-Sontag filter.
pub fn half_sontag_lambda(alpha: f64, beta: f64) -> f64 {
    if beta == 0.0 {
        return 0.0;
    }
    let root = alpha.hypot(beta);
    if alpha > 0.0 {
        // Same value, without cancellation when α ≫ β.
        beta / (2.0 * (alpha + root))
    } else {
        (root - alpha) / (2.0 * beta)
    }
}

/// Safe velocity field and intermediate quantities at a task point.
#[derive(Debug, Clone)]
pub struct SafeField {
    pub field: Vector,
    pub nominal: Vector,
    pub grad_h0: Vector,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub h0: f64,
}

impl BcbfTask {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_gain > 0.0 && self.delta > 0.0 && self.epsilon > 0.0) {
            return Err(Error::Config {
                path: format!("safety.{}", self.name),
                message: "alpha_gain, delta and epsilon must be positive".into(),
            });
        }
        if self.metric.dim() != self.map.output_dim() || self.h0.dim() != self.map.output_dim() {
            return Err(Error::dims(
                format!("BCBF task `{}`", self.name),
                self.map.output_dim(),
                self.metric.dim(),
            ));
        }
        self.metric.validate()
    }

    fn nominal_field(&self, x: &Vector, g_inv: &Matrix) -> Vector {
        match &self.nominal {
            NominalField::Zero => Vector::zeros(x.len()),
            NominalField::NegGradPotential { potential } => -(g_inv * potential.gradient(x)),
        }
    }

    /// Half-Sontag field augmented with `δ grad h₀`.
    pub fn safe_field(&self, x: &Vector) -> Result<SafeField> {
        let jet = self.h0.jet(x)?;
        let ge = self.metric.eval(x);
        let grad = &ge.g_inv * &jet.grad;
        let xi = self.nominal_field(x, &ge.g_inv);
        let alpha = self.alpha_gain * jet.value + jet.grad.dot(&xi);
        let beta = jet.grad.dot(&grad);
        let lambda = half_sontag_lambda(alpha, beta);
        Ok(SafeField {
            field: &xi + &grad * (lambda + self.delta),
            nominal: xi,
            grad_h0: grad,
            alpha,
            beta,
            lambda,
            h0: jet.value,
        })
    }

    /// `h` and `e_x = ẋ − ξ̃` at a configuration state.
    pub fn value(&self, sigma: &Vector, sigma_dot: &Vector) -> Result<(f64, Vector)> {
        let st = self.map.state(sigma, sigma_dot)?;
        let sf = self.safe_field(&st.x)?;
        let e = &st.xdot - &sf.field;
        let g = self.metric.metric_matrix(&st.x);
        Ok((
            sf.h0 - 0.5 * self.epsilon * linalg::weighted_norm_sq(&g, &e),
            e,
        ))
    }

    /// Covariant derivative `∇_ẋ ξ̃` at `x`.
    fn field_derivative(&self, x: &Vector, xdot: &Vector, sf: &SafeField) -> Result<Vector> {
        let directional = if sf.beta > BETA_TOLERANCE {
            let f = |p: &Vector| {
                self.safe_field(p)
                    .map(|s| s.field)
                    .unwrap_or_else(|_| Vector::zeros(p.len()))
            };
            numdiff::directional(f, x, xdot, numdiff::GRADIENT_STEP)
        } else {
            let f = |p: &Vector| {
                let g_inv = self.metric.eval(p).g_inv;
                self.nominal_field(p, &g_inv)
            };
            numdiff::directional(f, x, xdot, numdiff::GRADIENT_STEP)
        };
        Ok(directional + self.metric.contract_christoffel(x, xdot, &sf.field))
    }

    /// Row `c · σ̈ ≥ −c_α h − drift` with a flat configuration metric.
    pub fn row(&self, sigma: &Vector, sigma_dot: &Vector) -> Result<SafetyEval> {
        let (row, eval) = self.assemble(sigma, sigma_dot)?;
        Ok(SafetyEval {
            row: Some(row),
            ..eval
        })
    }

    /// `ḣ` for a given configuration acceleration.
    pub fn h_dot(&self, sigma: &Vector, sigma_dot: &Vector, sigma_ddot: &Vector) -> Result<f64> {
        let (row, eval) = self.assemble(sigma, sigma_dot)?;
        let h = eval.h.unwrap_or(0.0);
        // rhs = −c_α h − drift
        let drift = -row.rhs - self.alpha_gain * h;
        Ok(row.coeffs.dot(sigma_ddot) + drift)
    }

    fn assemble(&self, sigma: &Vector, sigma_dot: &Vector) -> Result<(ConstraintRow, SafetyEval)> {
        let st = self.map.state(sigma, sigma_dot)?;
        let jet = self.h0.jet(&st.x)?;
        let sf = self.safe_field(&st.x)?;
        let g = self.metric.metric_matrix(&st.x);
        let e = &st.xdot - &sf.field;
        let e_norm = e.norm();
        if e_norm > 1e-9 {
            let smin = linalg::min_singular_value(&st.jac);
            if smin < SUBMERSION_TOLERANCE {
                return Err(Error::SubmersionViolation {
                    task: self.name.clone(),
                    sigma_min: smin,
                });
            }
        }
        let h = jet.value - 0.5 * self.epsilon * linalg::weighted_norm_sq(&g, &e);
        let ge = &g * &e;
        let coeffs = st.jac.transpose() * &ge * -self.epsilon;
        let dxi = self.field_derivative(&st.x, &st.xdot, &sf)?;
        let mut accel_bias = st.curv.clone();
        if !self.metric.is_constant() {
            accel_bias += self.metric.contract_christoffel(&st.x, &st.xdot, &st.xdot);
        }
        let h0_dot = jet.grad.dot(&st.xdot);
        let drift = h0_dot + self.epsilon * ge.dot(&dxi) - self.epsilon * ge.dot(&accel_bias);
        let rhs = -self.alpha_gain * h - drift;
        Ok((
            ConstraintRow { coeffs, rhs },
            SafetyEval {
                row: None,
                h0: jet.value,
                h0_dot,
                h: Some(h),
                e_norm: Some(e_norm),
                dropped: false,
                clamped: jet.clamped || st.degenerate,
            },
        ))
    }
}

impl SafetyTask {
    pub fn name(&self) -> &str {
        match self {
            SafetyTask::Ecbf(t) => &t.name,
            SafetyTask::Bcbf(t) => &t.name,
        }
    }

    pub fn map(&self) -> &TaskMap {
        match self {
            SafetyTask::Ecbf(t) => &t.map,
            SafetyTask::Bcbf(t) => &t.map,
        }
    }

    pub fn h0(&self) -> &SafetyFunction {
        match self {
            SafetyTask::Ecbf(t) => &t.h0,
            SafetyTask::Bcbf(t) => &t.h0,
        }
    }

    pub fn evaluate(&self, sigma: &Vector, sigma_dot: &Vector) -> Result<SafetyEval> {
        match self {
            SafetyTask::Ecbf(t) => t.row(sigma, sigma_dot),
            SafetyTask::Bcbf(t) => t.row(sigma, sigma_dot),
        }
    }

    /// `h₀` at a configuration.
    pub fn barrier(&self, sigma: &Vector) -> Result<f64> {
        let x = self.map().eval(sigma)?;
        self.h0().value(&x)
    }
}
