//! Charts, metrics and Christoffel symbols.
//!
//! The unit sphere S² ⊂ ℝ³ is covered by two stereographic charts. The north
//! chart projects from the north pole (0, 0, 1) and so excludes it; the south
//! chart projects from the south pole and excludes that one. Both have
//! coordinates y ∈ ℝ².

use serde::{Deserialize, Serialize};

use crate::{Error, Matrix, Result, Vector};

/// Points closer than this to a chart's excluded pole cannot be unembedded.
pub const POLE_TOLERANCE: f64 = 1e-9;
/// Chart transitions are singular below this coordinate norm.
pub const TRANSITION_TOLERANCE: f64 = 1e-9;

/// Identifies a coordinate chart on a configuration manifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ChartId {
    NorthStereo,
    SouthStereo,
    /// Global chart of ℝⁿ; the bounds are informational (joint limits).
    EuclideanBox {
        dim: usize,
        bounds: Vec<[f64; 2]>,
    },
}

impl ChartId {
    pub fn dim(&self) -> usize {
        match self {
            ChartId::NorthStereo | ChartId::SouthStereo => 2,
            ChartId::EuclideanBox { dim, .. } => *dim,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ChartId::NorthStereo => "north",
            ChartId::SouthStereo => "south",
            ChartId::EuclideanBox { .. } => "box",
        }
    }

    /// The other stereographic chart.
    pub fn opposite(&self) -> Result<ChartId> {
        match self {
            ChartId::NorthStereo => Ok(ChartId::SouthStereo),
            ChartId::SouthStereo => Ok(ChartId::NorthStereo),
            other => Err(Error::InvalidChart(other.name().into())),
        }
    }

    pub fn is_stereo(&self) -> bool {
        matches!(self, ChartId::NorthStereo | ChartId::SouthStereo)
    }

    fn pole_sign(&self) -> Result<f64> {
        match self {
            ChartId::NorthStereo => Ok(1.0),
            ChartId::SouthStereo => Ok(-1.0),
            other => Err(Error::InvalidChart(other.name().into())),
        }
    }
}

/// Inverse chart map φ⁻¹: ℝ² → S² ⊂ ℝ³.
pub fn embed(chart: &ChartId, y: &Vector) -> Result<nalgebra::Vector3<f64>> {
    let sz = chart.pole_sign()?;
    let r2 = y[0] * y[0] + y[1] * y[1];
    let s = 1.0 + r2;
    Ok(nalgebra::Vector3::new(
        2.0 * y[0] / s,
        2.0 * y[1] / s,
        sz * (r2 - 1.0) / s,
    ))
}

/// Chart map φ: S² \ {pole} → ℝ².
pub fn unembed(chart: &ChartId, x: &nalgebra::Vector3<f64>) -> Result<Vector> {
    let sz = chart.pole_sign()?;
    let denom = 1.0 - sz * x[2];
    // Distance to the pole is sqrt(2 (1 - sz x3)) on the unit sphere.
    let distance = (2.0 * denom.max(0.0)).sqrt();
    if distance < POLE_TOLERANCE {
        return Err(Error::NearPole {
            chart: chart.name().into(),
            distance,
        });
    }
    Ok(Vector::from_vec(vec![x[0] / denom, x[1] / denom]))
}

/// Jacobian ∂φ⁻¹/∂y (3 × 2).
pub fn embed_jacobian(chart: &ChartId, y: &Vector) -> Result<Matrix> {
    let sz = chart.pole_sign()?;
    let s = 1.0 + y[0] * y[0] + y[1] * y[1];
    let s2 = s * s;
    let mut j = Matrix::zeros(3, 2);
    for i in 0..2 {
        for k in 0..2 {
            let d = if i == k { 2.0 / s } else { 0.0 };
            j[(i, k)] = d - 4.0 * y[i] * y[k] / s2;
        }
    }
    for k in 0..2 {
        j[(2, k)] = sz * 4.0 * y[k] / s2;
    }
    Ok(j)
}

/// Time derivative of [`embed_jacobian`] along the chart velocity `v`.
pub fn embed_jacobian_dot(chart: &ChartId, y: &Vector, v: &Vector) -> Result<Matrix> {
    let sz = chart.pole_sign()?;
    let s = 1.0 + y[0] * y[0] + y[1] * y[1];
    let s2 = s * s;
    let s3 = s2 * s;
    let yv = y[0] * v[0] + y[1] * v[1];
    let mut jd = Matrix::zeros(3, 2);
    for i in 0..2 {
        for j in 0..2 {
            let d = if i == j { yv } else { 0.0 };
            jd[(i, j)] = -4.0 * (d + v[i] * y[j] + y[i] * v[j]) / s2 + 16.0 * y[i] * y[j] * yv / s3;
        }
    }
    for j in 0..2 {
        jd[(2, j)] = sz * (4.0 * v[j] / s2 - 16.0 * y[j] * yv / s3);
    }
    Ok(jd)
}

/// Coordinates of the same point in the other stereographic chart.
///
/// The transition is the inversion y ↦ y / ‖y‖² in both directions.
pub fn transition(from: &ChartId, to: &ChartId, y: &Vector) -> Result<Vector> {
    from.pole_sign()?;
    to.pole_sign()?;
    if from == to {
        return Ok(y.clone());
    }
    let r2 = y.norm_squared();
    if r2.sqrt() < TRANSITION_TOLERANCE {
        return Err(Error::TransitionSingularity { norm: r2.sqrt() });
    }
    Ok(y / r2)
}

/// Pushes a chart velocity through the transition map.
pub fn transition_velocity(
    from: &ChartId,
    to: &ChartId,
    y: &Vector,
    ydot: &Vector,
) -> Result<Vector> {
    from.pole_sign()?;
    to.pole_sign()?;
    if from == to {
        return Ok(ydot.clone());
    }
    let r2 = y.norm_squared();
    if r2.sqrt() < TRANSITION_TOLERANCE {
        return Err(Error::TransitionSingularity { norm: r2.sqrt() });
    }
    // d/dt (y / r²) = (I r² − 2 y yᵀ) ẏ / r⁴
    let j = (Matrix::identity(2, 2) * r2 - y * y.transpose() * 2.0) / (r2 * r2);
    Ok(j * ydot)
}

/// Christoffel symbols Γᵏᵢⱼ stored densely as `data[k][i][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    dim: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(dim: usize) -> Self {
        Christoffel {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.dim + i) * self.dim + j]
    }

    pub fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        self.data[(k * self.dim + i) * self.dim + j] = v;
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// Γ(u, v)ᵏ = Γᵏᵢⱼ uⁱ vʲ.
    pub fn contract(&self, u: &Vector, v: &Vector) -> Vector {
        let n = self.dim;
        let mut out = Vector::zeros(n);
        for k in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                if u[i] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    acc += self.get(k, i, j) * u[i] * v[j];
                }
            }
            out[k] = acc;
        }
        out
    }
}

/// Riemannian metric families available on task manifolds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MetricSpec {
    /// Euclidean metric on ℝⁿ.
    Flat { dim: usize },
    /// Round metric of S² in stereographic coordinates, g = 4 / (1 + ‖y‖²)² I.
    RoundStereographic,
    /// Constant diagonal metric with the given positive weights.
    ScalarDiagonal { weights: Vec<f64> },
}

/// Metric tensor, inverse and Christoffel symbols at a point.
#[derive(Debug, Clone)]
pub struct MetricEval {
    pub g: Matrix,
    pub g_inv: Matrix,
    pub christoffel: Christoffel,
}

impl MetricSpec {
    pub fn flat(dim: usize) -> Self {
        MetricSpec::Flat { dim }
    }

    pub fn dim(&self) -> usize {
        match self {
            MetricSpec::Flat { dim } => *dim,
            MetricSpec::RoundStereographic => 2,
            MetricSpec::ScalarDiagonal { weights } => weights.len(),
        }
    }

    /// True when the Christoffel symbols vanish identically.
    pub fn is_constant(&self) -> bool {
        !matches!(self, MetricSpec::RoundStereographic)
    }

    pub fn validate(&self) -> Result<()> {
        if let MetricSpec::ScalarDiagonal { weights } = self {
            if weights.is_empty() || weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
                return Err(Error::Config {
                    path: "metric.weights".into(),
                    message: "weights must be positive and finite".into(),
                });
            }
        }
        Ok(())
    }

    pub fn eval(&self, y: &Vector) -> MetricEval {
        let n = self.dim();
        match self {
            MetricSpec::Flat { .. } => MetricEval {
                g: Matrix::identity(n, n),
                g_inv: Matrix::identity(n, n),
                christoffel: Christoffel::zeros(n),
            },
            MetricSpec::ScalarDiagonal { weights } => MetricEval {
                g: Matrix::from_diagonal(&Vector::from_column_slice(weights)),
                g_inv: Matrix::from_diagonal(&Vector::from_iterator(
                    n,
                    weights.iter().map(|w| 1.0 / w),
                )),
                christoffel: Christoffel::zeros(n),
            },
            MetricSpec::RoundStereographic => {
                let s = 1.0 + y[0] * y[0] + y[1] * y[1];
                let c = 4.0 / (s * s);
                MetricEval {
                    g: Matrix::identity(2, 2) * c,
                    g_inv: Matrix::identity(2, 2) / c,
                    christoffel: round_christoffel(y),
                }
            }
        }
    }

    /// Γ(u, v) at `y` without materializing the full tensor.
    pub fn contract_christoffel(&self, y: &Vector, u: &Vector, v: &Vector) -> Vector {
        match self {
            MetricSpec::RoundStereographic => {
                // Γᵏᵢⱼ uⁱ vʲ = −2/s (yᵀu vₖ + yᵀv uₖ − uᵀv yₖ)
                let s = 1.0 + y[0] * y[0] + y[1] * y[1];
                let yu = y.dot(u);
                let yv = y.dot(v);
                let uv = u.dot(v);
                (v * yu + u * yv - y * uv) * (-2.0 / s)
            }
            _ => Vector::zeros(self.dim()),
        }
    }

    /// g(y) without inverse or Christoffels.
    pub fn metric_matrix(&self, y: &Vector) -> Matrix {
        match self {
            MetricSpec::RoundStereographic => {
                let s = 1.0 + y[0] * y[0] + y[1] * y[1];
                Matrix::identity(2, 2) * (4.0 / (s * s))
            }
            _ => self.eval(y).g,
        }
    }
}

/// Christoffel symbols of the round metric in stereographic coordinates
/// (identical in both charts).
pub fn round_christoffel(y: &Vector) -> Christoffel {
    let s = 1.0 + y[0] * y[0] + y[1] * y[1];
    let c = -2.0 / s;
    let mut gam = Christoffel::zeros(2);
    for k in 0..2 {
        for i in 0..2 {
            for j in 0..2 {
                let dij = if i == j { 1.0 } else { 0.0 };
                let djk = if j == k { 1.0 } else { 0.0 };
                let dik = if i == k { 1.0 } else { 0.0 };
                gam.set(k, i, j, c * (y[i] * djk + y[j] * dik - y[k] * dij));
            }
        }
    }
    gam
}

/// Raises a covector with the inverse metric.
pub fn sharp(g_inv: &Matrix, covector: &Vector) -> Vector {
    g_inv * covector
}

/// Riemannian Hessian quadratic form ∇²h(v, v) = vᵀ(∂²h)v − ∂ₖh Γᵏᵢⱼ vⁱ vʲ.
pub fn riemannian_hessian_correction(
    quadform: f64,
    grad: &Vector,
    christoffel: &Christoffel,
    v: &Vector,
) -> f64 {
    quadform - grad.dot(&christoffel.contract(v, v))
}

/// Great-circle distance between two unit vectors, with the cosine clamped
/// to `[-1 + 1e-12, 1 - 1e-12]`. Returns the distance and whether clamping
/// occurred.
pub fn arc_distance(a: &nalgebra::Vector3<f64>, b: &nalgebra::Vector3<f64>) -> (f64, bool) {
    let c = a.dot(b);
    let lim = 1.0 - 1e-12;
    let clamped = c.abs() > lim;
    (c.clamp(-lim, lim).acos(), clamped)
}
