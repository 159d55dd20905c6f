//! Smooth maps from configuration coordinates to task manifolds.
//!
//! Every map provides its value, Jacobian `J`, task velocity `ẋ = J σ̇` and
//! the curvature term `J̇ σ̇ = ∂²f(σ̇, σ̇)` in one call ([`TaskMap::state`]).
//! The full second-derivative tensor is recovered from the curvature term by
//! polarization, so no map needs a separate Hessian implementation.

use std::sync::Arc;

use nalgebra::{Vector3, Vector4};

use crate::geom::{self, ChartId};
use crate::kinematics::{closest_segment_parameter, FrameRef, KinematicChain};
use crate::{Error, Matrix, Result, Vector};

/// Below this distance the chord-distance gradient is undefined and set to zero.
pub const CHORD_DEGENERATE: f64 = 1e-9;

#[derive(Debug, Clone)]
pub enum TaskMap {
    /// `f(σ) = σ`.
    Identity { dim: usize },
    /// `f(σ) = σᵢ`.
    CoordinateProjection { dim: usize, index: usize },
    /// `f(σ) = scale · σᵢ + offset`.
    AffineScalar {
        dim: usize,
        index: usize,
        scale: f64,
        offset: f64,
    },
    /// Stereographic chart coordinates to the unit sphere in ℝ³.
    StereoEmbedding { chart: ChartId },
    /// World position of a chain frame.
    ChainPosition {
        chain: Arc<KinematicChain>,
        frame: FrameRef,
    },
    /// Orientation quaternion `[w, x, y, z]` of a chain frame, sign chosen to
    /// lie in the hemisphere of `reference`.
    ChainQuaternion {
        chain: Arc<KinematicChain>,
        frame: FrameRef,
        reference: Vector4<f64>,
    },
    /// Chord distance `‖q̃ − g‖` between the sign-resolved frame quaternion
    /// and a goal quaternion.
    ChainQuatChordDistance {
        chain: Arc<KinematicChain>,
        frame: FrameRef,
        goal: Vector4<f64>,
    },
    /// Signed distance between a link capsule and a sphere.
    CapsuleSphereDistance {
        chain: Arc<KinematicChain>,
        link: usize,
        center: Vector3<f64>,
        radius: f64,
    },
}

/// Value and first/second order kinematics of a task map at `(σ, σ̇)`.
#[derive(Debug, Clone)]
pub struct TaskState {
    pub x: Vector,
    pub jac: Matrix,
    pub xdot: Vector,
    /// `J̇ σ̇`.
    pub curv: Vector,
    /// A clamp or degeneracy guard was hit while evaluating.
    pub degenerate: bool,
}

impl TaskMap {
    pub fn input_dim(&self) -> usize {
        match self {
            TaskMap::Identity { dim }
            | TaskMap::CoordinateProjection { dim, .. }
            | TaskMap::AffineScalar { dim, .. } => *dim,
            TaskMap::StereoEmbedding { .. } => 2,
            TaskMap::ChainPosition { chain, .. }
            | TaskMap::ChainQuaternion { chain, .. }
            | TaskMap::ChainQuatChordDistance { chain, .. }
            | TaskMap::CapsuleSphereDistance { chain, .. } => chain.dof(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            TaskMap::Identity { dim } => *dim,
            TaskMap::CoordinateProjection { .. }
            | TaskMap::AffineScalar { .. }
            | TaskMap::ChainQuatChordDistance { .. }
            | TaskMap::CapsuleSphereDistance { .. } => 1,
            TaskMap::StereoEmbedding { .. } | TaskMap::ChainPosition { .. } => 3,
            TaskMap::ChainQuaternion { .. } => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            TaskMap::Identity { .. } => "identity",
            TaskMap::CoordinateProjection { .. } => "coordinate_projection",
            TaskMap::AffineScalar { .. } => "affine_scalar",
            TaskMap::StereoEmbedding { .. } => "stereo_embedding",
            TaskMap::ChainPosition { .. } => "chain_position",
            TaskMap::ChainQuaternion { .. } => "chain_quaternion",
            TaskMap::ChainQuatChordDistance { .. } => "chain_quat_chord_distance",
            TaskMap::CapsuleSphereDistance { .. } => "capsule_sphere_distance",
        }
    }

    fn check(&self, sigma: &Vector, sigma_dot: &Vector) -> Result<()> {
        let n = self.input_dim();
        if sigma.len() != n {
            return Err(Error::dims(
                format!("{} input", self.kind()),
                n,
                sigma.len(),
            ));
        }
        if sigma_dot.len() != n {
            return Err(Error::dims(
                format!("{} velocity", self.kind()),
                n,
                sigma_dot.len(),
            ));
        }
        Ok(())
    }

    pub fn eval(&self, sigma: &Vector) -> Result<Vector> {
        Ok(self.state(sigma, &Vector::zeros(sigma.len()))?.x)
    }

    pub fn jacobian(&self, sigma: &Vector) -> Result<Matrix> {
        Ok(self.state(sigma, &Vector::zeros(sigma.len()))?.jac)
    }

    /// `J̇` along `σ̇`, column `j` being `∂²f(σ̇, eⱼ)`.
    pub fn jdot(&self, sigma: &Vector, sigma_dot: &Vector) -> Result<Matrix> {
        let n = self.input_dim();
        let c_v = self.state(sigma, sigma_dot)?.curv;
        let mut out = Matrix::zeros(self.output_dim(), n);
        let mut e = Vector::zeros(n);
        for j in 0..n {
            e[j] = 1.0;
            let c_e = self.state(sigma, &e)?.curv;
            let c_ve = self.state(sigma, &(sigma_dot + &e))?.curv;
            out.set_column(j, &((c_ve - &c_v - c_e) * 0.5));
            e[j] = 0.0;
        }
        Ok(out)
    }

    /// Second-derivative tensor: entry `[γ][(i, j)] = ∂²f^γ / ∂σᵢ∂σⱼ`.
    pub fn second_derivative(&self, sigma: &Vector) -> Result<Vec<Matrix>> {
        let n = self.input_dim();
        let m = self.output_dim();
        let mut diag = Vec::with_capacity(n);
        let mut e = Vector::zeros(n);
        for i in 0..n {
            e[i] = 1.0;
            diag.push(self.state(sigma, &e)?.curv);
            e[i] = 0.0;
        }
        let mut out = vec![Matrix::zeros(n, n); m];
        for i in 0..n {
            for j in i..n {
                let vals = if i == j {
                    diag[i].clone()
                } else {
                    e[i] = 1.0;
                    e[j] = 1.0;
                    let c = self.state(sigma, &e)?.curv;
                    e[i] = 0.0;
                    e[j] = 0.0;
                    (c - &diag[i] - &diag[j]) * 0.5
                };
                for g in 0..m {
                    out[g][(i, j)] = vals[g];
                    out[g][(j, i)] = vals[g];
                }
            }
        }
        Ok(out)
    }

    pub fn state(&self, sigma: &Vector, sigma_dot: &Vector) -> Result<TaskState> {
        self.check(sigma, sigma_dot)?;
        let n = self.input_dim();
        match self {
            TaskMap::Identity { dim } => Ok(TaskState {
                x: sigma.clone(),
                jac: Matrix::identity(*dim, *dim),
                xdot: sigma_dot.clone(),
                curv: Vector::zeros(*dim),
                degenerate: false,
            }),
            TaskMap::CoordinateProjection { index, .. } => {
                self.affine_state(*index, 1.0, 0.0, sigma, sigma_dot)
            }
            TaskMap::AffineScalar {
                index,
                scale,
                offset,
                ..
            } => self.affine_state(*index, *scale, *offset, sigma, sigma_dot),
            TaskMap::StereoEmbedding { chart } => {
                let x = geom::embed(chart, sigma)?;
                let jac = geom::embed_jacobian(chart, sigma)?;
                let jd = geom::embed_jacobian_dot(chart, sigma, sigma_dot)?;
                Ok(TaskState {
                    x: Vector::from_column_slice(x.as_slice()),
                    xdot: &jac * sigma_dot,
                    curv: jd * sigma_dot,
                    jac,
                    degenerate: false,
                })
            }
            TaskMap::ChainPosition { chain, frame } => {
                let pose = chain.pose(sigma);
                let m = chain.frame_point_motion(&pose, frame, sigma_dot);
                Ok(TaskState {
                    x: Vector::from_column_slice(m.p.as_slice()),
                    jac: m.jac,
                    xdot: Vector::from_column_slice(m.vel.as_slice()),
                    curv: Vector::from_column_slice(m.bias.as_slice()),
                    degenerate: false,
                })
            }
            TaskMap::ChainQuaternion {
                chain,
                frame,
                reference,
            } => {
                let pose = chain.pose(sigma);
                let m = chain.orientation_motion(&pose, frame, sigma_dot);
                let s = if m.q.dot(reference) < 0.0 { -1.0 } else { 1.0 };
                Ok(TaskState {
                    x: Vector::from_column_slice((m.q * s).as_slice()),
                    jac: m.jac * s,
                    xdot: Vector::from_column_slice((m.rate * s).as_slice()),
                    curv: Vector::from_column_slice((m.bias * s).as_slice()),
                    degenerate: false,
                })
            }
            TaskMap::ChainQuatChordDistance { chain, frame, goal } => {
                let pose = chain.pose(sigma);
                let m = chain.orientation_motion(&pose, frame, sigma_dot);
                let s = if m.q.dot(goal) < 0.0 { -1.0 } else { 1.0 };
                let e = m.q * s - goal;
                let d = e.norm();
                if d < CHORD_DEGENERATE {
                    return Ok(TaskState {
                        x: Vector::from_element(1, d),
                        jac: Matrix::zeros(1, n),
                        xdot: Vector::zeros(1),
                        curv: Vector::zeros(1),
                        degenerate: true,
                    });
                }
                let edot = m.rate * s;
                let eddot = m.bias * s;
                let grad = m.jac.transpose() * Vector::from_column_slice(e.as_slice()) * (s / d);
                let ed = e.dot(&edot);
                let curv = (edot.dot(&edot) + e.dot(&eddot)) / d - ed * ed / (d * d * d);
                Ok(TaskState {
                    x: Vector::from_element(1, d),
                    jac: Matrix::from_row_slice(1, n, grad.as_slice()),
                    xdot: Vector::from_element(1, ed / d),
                    curv: Vector::from_element(1, curv),
                    degenerate: false,
                })
            }
            TaskMap::CapsuleSphereDistance {
                chain,
                link,
                center,
                radius,
            } => {
                let pose = chain.pose(sigma);
                let cap = &chain.capsules()[*link];
                let (a, b) = chain.capsule_world(&pose, *link);
                let t = closest_segment_parameter(&a, &b, center);
                let ma = chain.point_motion(&pose, cap.joint, &a, sigma_dot);
                let mb = chain.point_motion(&pose, cap.joint, &b, sigma_dot);
                let p = a + (b - a) * t;
                let r = p - center;
                let rho = r.norm();
                let d = rho - cap.radius - radius;
                if rho < CHORD_DEGENERATE {
                    return Ok(TaskState {
                        x: Vector::from_element(1, d),
                        jac: Matrix::zeros(1, n),
                        xdot: Vector::zeros(1),
                        curv: Vector::zeros(1),
                        degenerate: true,
                    });
                }
                let nh = r / rho;
                let jp = &ma.jac * (1.0 - t) + &mb.jac * t;
                let pdot = ma.vel * (1.0 - t) + mb.vel * t;
                let pbias = ma.bias * (1.0 - t) + mb.bias * t;
                let grad = jp.transpose() * Vector::from_column_slice(nh.as_slice());
                let rd = r.dot(&pdot);
                // Second derivative with the closest-point parameter frozen.
                let mut curv =
                    (pdot.dot(&pdot) + r.dot(&pbias)) / rho - rd * rd / (rho * rho * rho);
                let seg = b - a;
                let l2 = seg.norm_squared();
                if t > 0.0 && t < 1.0 && l2 > 1e-24 {
                    // Interior minimum: subtract the coupling through the moving
                    // closest point, D_σt² / D_tt.
                    let seg_dot = mb.vel - ma.vel;
                    let d_st = (pdot.dot(&seg) + r.dot(&seg_dot)) / rho;
                    let d_tt = (l2 - nh.dot(&seg).powi(2)) / rho;
                    if d_tt > 0.0 {
                        curv -= d_st * d_st / d_tt;
                    }
                }
                Ok(TaskState {
                    x: Vector::from_element(1, d),
                    jac: Matrix::from_row_slice(1, n, grad.as_slice()),
                    xdot: Vector::from_element(1, nh.dot(&pdot)),
                    curv: Vector::from_element(1, curv),
                    degenerate: false,
                })
            }
        }
    }

    fn affine_state(
        &self,
        index: usize,
        scale: f64,
        offset: f64,
        sigma: &Vector,
        sigma_dot: &Vector,
    ) -> Result<TaskState> {
        let n = sigma.len();
        if index >= n {
            return Err(Error::dims("coordinate index", n, index));
        }
        let mut jac = Matrix::zeros(1, n);
        jac[(0, index)] = scale;
        Ok(TaskState {
            x: Vector::from_element(1, scale * sigma[index] + offset),
            jac,
            xdot: Vector::from_element(1, scale * sigma_dot[index]),
            curv: Vector::zeros(1),
            degenerate: false,
        })
    }
}

/// Second fundamental form of `f` between configuration metric `m` and task
/// metric `n`, evaluated along `v`: `∂²f(v, v) + ᴺΓ(ẋ, ẋ) − J ᴹΓ(v, v)`.
pub fn second_fundamental_form(
    map: &TaskMap,
    m_metric: &geom::MetricSpec,
    n_metric: &geom::MetricSpec,
    sigma: &Vector,
    v: &Vector,
) -> Result<Vector> {
    let st = map.state(sigma, v)?;
    let mut out = st.curv.clone();
    if !n_metric.is_constant() {
        out += n_metric.contract_christoffel(&st.x, &st.xdot, &st.xdot);
    }
    if !m_metric.is_constant() {
        out -= &st.jac * m_metric.contract_christoffel(sigma, v, v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::quat_to_wxyz;
    use crate::numdiff;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;

    fn arm_maps() -> Vec<TaskMap> {
        let chain = Arc::new(KinematicChain::panda_like());
        let ee = chain.end_effector().clone();
        let goal = quat_to_wxyz(
            &(UnitQuaternion::from_euler_angles(0.4, -0.2, 0.9) * chain.ee_pose(&chain.home()).1),
        );
        vec![
            TaskMap::ChainPosition {
                chain: chain.clone(),
                frame: ee.clone(),
            },
            TaskMap::ChainQuaternion {
                chain: chain.clone(),
                frame: ee.clone(),
                reference: goal,
            },
            TaskMap::ChainQuatChordDistance {
                chain: chain.clone(),
                frame: ee,
                goal,
            },
            TaskMap::CapsuleSphereDistance {
                chain: chain.clone(),
                link: 2,
                center: Vector3::new(0.45, 0.1, 0.45),
                radius: 0.1,
            },
            TaskMap::CapsuleSphereDistance {
                chain,
                link: 5,
                center: Vector3::new(0.3, -0.2, 0.6),
                radius: 0.08,
            },
        ]
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let q = Vector::from_vec(vec![0.2, -0.6, 0.3, -2.1, 0.4, 1.7, 0.5]);
        let v = Vector::from_vec(vec![0.5, -0.3, 0.8, 0.2, -0.6, 0.4, 0.9]);
        for map in arm_maps() {
            let st = map.state(&q, &v).unwrap();
            let f = |p: &Vector| map.eval(p).unwrap();
            let jfd = numdiff::jacobian(f, &q, 1e-6);
            assert_relative_eq!(st.jac, jfd, epsilon = 1e-7);
            assert_relative_eq!(st.xdot, &st.jac * &v, epsilon = 1e-12);
            let jac_at = |p: &Vector| map.jacobian(p).unwrap();
            let curv_fd = numdiff::directional_matrix(jac_at, &q, &v, 1e-5) * &v;
            assert_relative_eq!(st.curv, curv_fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn polarized_second_derivative_matches_finite_difference() {
        let map = TaskMap::StereoEmbedding {
            chart: ChartId::SouthStereo,
        };
        let y = Vector::from_vec(vec![0.4, -0.9]);
        let tensor = map.second_derivative(&y).unwrap();
        for (g, h) in tensor.iter().enumerate() {
            let f = |p: &Vector| map.eval(p).unwrap()[g];
            assert_relative_eq!(*h, numdiff::hessian(f, &y, 1e-4), epsilon = 1e-6);
        }
        let v = Vector::from_vec(vec![1.0, 0.0]);
        let jd = TaskMap::StereoEmbedding {
            chart: ChartId::NorthStereo,
        }
        .jdot(&Vector::zeros(2), &v)
        .unwrap();
        assert_relative_eq!(
            jd,
            Matrix::from_row_slice(3, 2, &[0.0, 0.0, 0.0, 0.0, 4.0, 0.0]),
            epsilon = 1e-12
        );
    }

    #[test]
    fn projection_and_affine() {
        let map = TaskMap::AffineScalar {
            dim: 3,
            index: 1,
            scale: -1.0,
            offset: 2.0,
        };
        let st = map
            .state(
                &Vector::from_vec(vec![0.0, 0.5, 0.0]),
                &Vector::from_vec(vec![1.0, 2.0, 3.0]),
            )
            .unwrap();
        assert_eq!(st.x[0], 1.5);
        assert_eq!(st.xdot[0], -2.0);
        assert!(map.eval(&Vector::zeros(2)).is_err());
    }

    #[test]
    fn second_fundamental_form_of_chart_identity_is_christoffel() {
        use geom::MetricSpec;
        let map = TaskMap::Identity { dim: 2 };
        let y = Vector::from_vec(vec![0.3, 0.2]);
        let v = Vector::from_vec(vec![1.0, -0.5]);
        let ii = second_fundamental_form(
            &map,
            &MetricSpec::flat(2),
            &MetricSpec::RoundStereographic,
            &y,
            &v,
        )
        .unwrap();
        assert_relative_eq!(
            ii,
            MetricSpec::RoundStereographic.contract_christoffel(&y, &v, &v)
        );
        let zero = second_fundamental_form(
            &map,
            &MetricSpec::RoundStereographic,
            &MetricSpec::RoundStereographic,
            &y,
            &v,
        )
        .unwrap();
        assert!(zero.amax() < 1e-15);
    }
}
