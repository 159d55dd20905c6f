//! Serial arm with joint-limit and obstacle barriers.

use std::sync::Arc;

use nalgebra::{Unit, UnitQuaternion, Vector3, Vector4};

use super::config::{ArmConfig, OrientationGoal};
use crate::geom::{ChartId, MetricSpec};
use crate::kinematics::{self, KinematicChain};
use crate::pbds::{BehaviorTask, DissipationSpec, PotentialSpec};
use crate::policy::{ControlTask, Policy, PolicyStep};
use crate::safety::{BarrierKind, EcbfTask, SafetyFunction, SafetyTask};
use crate::sim::{ClosedLoop, Observation, SimState};
use crate::taskmap::TaskMap;
use crate::{Error, Matrix, Result, Vector};

pub fn load_chain(cfg: &ArmConfig) -> Result<Arc<KinematicChain>> {
    match &cfg.chain {
        None => Ok(Arc::new(KinematicChain::panda_like())),
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            Ok(Arc::new(KinematicChain::from_json(&text)?))
        }
    }
}

/// Goal quaternion `[w, x, y, z]` for an orientation goal relative to `start`.
pub fn goal_quaternion(start: &UnitQuaternion<f64>, goal: &OrientationGoal) -> Vector4<f64> {
    let q = match goal {
        OrientationGoal::RelativeEulerXyz { degrees } => {
            let [a, b, c] = degrees.map(f64::to_radians);
            let rx = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), a);
            let ry = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), b);
            let rz = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), c);
            start * rx * ry * rz
        }
        OrientationGoal::RelativeAxisAngle { axis, degrees } => {
            let axis = Unit::new_normalize(Vector3::from(*axis));
            start * UnitQuaternion::from_axis_angle(&axis, degrees.to_radians())
        }
        OrientationGoal::Absolute { quaternion } => kinematics::quat_from_wxyz(*quaternion),
    };
    kinematics::quat_to_wxyz(&q)
}

/// Chord distance between sign-resolved unit quaternions.
pub fn chord_distance(q: &Vector4<f64>, goal: &Vector4<f64>) -> f64 {
    let s = if q.dot(goal) < 0.0 { -1.0 } else { 1.0 };
    (q * s - goal).norm()
}

/// Signed distance from every link capsule to a sphere at configuration `q`.
pub fn link_distances(
    chain: &KinematicChain,
    q: &Vector,
    center: &Vector3<f64>,
    radius: f64,
) -> Vec<f64> {
    let pose = chain.pose(q);
    (0..chain.capsules().len())
        .map(|i| {
            let (a, b) = chain.capsule_world(&pose, i);
            let t = kinematics::closest_segment_parameter(&a, &b, center);
            let p = a + (b - a) * t;
            (p - center).norm() - chain.capsules()[i].radius - radius
        })
        .collect()
}

pub struct ArmSystem {
    chain: Arc<KinematicChain>,
    cfg: ArmConfig,
    policy: Policy,
    goal_position: Vector3<f64>,
    goal_orientation: Option<Vector4<f64>>,
    start_position: Vector3<f64>,
    names: Vec<String>,
    last: Option<PolicyStep>,
}

impl ArmSystem {
    pub fn new(cfg: &ArmConfig) -> Result<(Self, SimState)> {
        let chain = load_chain(cfg)?;
        let n = chain.dof();
        let start = match &cfg.start {
            Some(q) if q.len() != n => {
                return Err(Error::dims("arm start configuration", n, q.len()))
            }
            Some(q) => Vector::from_column_slice(q),
            None => chain.home(),
        };
        let ee = chain.end_effector().clone();
        let (p0, r0) = chain.ee_pose(&start);
        let goal_position = cfg.goal_position.map(Vector3::from).unwrap_or(p0);
        let goal_orientation = cfg
            .goal_orientation
            .as_ref()
            .map(|g| goal_quaternion(&r0, g));
        let gains = cfg.gains;

        let mut behaviors = Vec::new();
        if let Some(gq) = goal_orientation {
            behaviors.push(BehaviorTask {
                name: "orientation".into(),
                map: TaskMap::ChainQuatChordDistance {
                    chain: chain.clone(),
                    frame: ee.clone(),
                    goal: gq,
                },
                metric: MetricSpec::flat(1),
                potential: PotentialSpec::QuadraticScalar {
                    gain: gains.orientation,
                },
                dissipation: DissipationSpec::None,
                weight: 1.0,
            });
            behaviors.push(BehaviorTask {
                name: "orientation_damping".into(),
                map: TaskMap::ChainQuaternion {
                    chain: chain.clone(),
                    frame: ee.clone(),
                    reference: gq,
                },
                metric: MetricSpec::flat(4),
                potential: PotentialSpec::None,
                dissipation: DissipationSpec::Linear {
                    gain: gains.orientation_damping,
                },
                weight: 1.0,
            });
        }
        let position_map = TaskMap::ChainPosition {
            chain: chain.clone(),
            frame: ee.clone(),
        };
        behaviors.push(BehaviorTask {
            name: "position".into(),
            map: position_map.clone(),
            metric: MetricSpec::flat(3),
            potential: PotentialSpec::Quadratic {
                center: goal_position.iter().copied().collect(),
                gain: gains.position,
            },
            dissipation: DissipationSpec::None,
            weight: 1.0,
        });
        behaviors.push(BehaviorTask {
            name: "position_damping".into(),
            map: position_map,
            metric: MetricSpec::flat(3),
            potential: PotentialSpec::None,
            dissipation: DissipationSpec::Linear {
                gain: gains.position_damping,
            },
            weight: 1.0,
        });
        behaviors.push(BehaviorTask {
            name: "joint_damping".into(),
            map: TaskMap::Identity { dim: n },
            metric: MetricSpec::flat(n),
            potential: PotentialSpec::None,
            dissipation: DissipationSpec::Linear {
                gain: gains.joint_damping,
            },
            weight: gains.joint_weight,
        });

        let mut names = Vec::new();
        let mut safeties = Vec::new();
        let barrier = |kind| SafetyFunction {
            kind,
            padding: cfg.padding,
        };
        for (k, [lo, hi]) in chain.limits().into_iter().enumerate() {
            let map = TaskMap::CoordinateProjection { dim: n, index: k };
            for (side, kind) in [
                ("lower", BarrierKind::LowerBound { limit: lo }),
                ("upper", BarrierKind::UpperBound { limit: hi }),
            ] {
                let name = format!("q{}_{side}", k + 1);
                names.push(name.clone());
                safeties.push(SafetyTask::Ecbf(EcbfTask {
                    name,
                    map: map.clone(),
                    h0: barrier(kind),
                    poles: cfg.joint_limit_poles,
                }));
            }
        }
        if let Some(obs) = &cfg.obstacle {
            for (i, cap) in chain.capsules().iter().enumerate() {
                names.push(format!("obs_{}", cap.name));
                if cfg.obstacle_cbf {
                    safeties.push(SafetyTask::Ecbf(EcbfTask {
                        name: format!("obs_{}", cap.name),
                        map: TaskMap::CapsuleSphereDistance {
                            chain: chain.clone(),
                            link: i,
                            center: Vector3::from(obs.center),
                            radius: obs.radius,
                        },
                        h0: barrier(BarrierKind::SignedDistanceMargin {
                            margin: cfg.obstacle_margin,
                        }),
                        poles: cfg.obstacle_poles,
                    }));
                }
            }
        }

        let mut controls = Vec::new();
        if let Some(a) = &cfg.action {
            if a.joint >= n {
                return Err(Error::Config {
                    path: "system.arm.action.joint".into(),
                    message: format!("joint index {} out of range for {n} joints", a.joint),
                });
            }
            controls.push(ControlTask::new(
                format!("joint{}", a.joint + 1),
                TaskMap::CoordinateProjection {
                    dim: n,
                    index: a.joint,
                },
                MetricSpec::flat(1),
                Matrix::identity(1, 1) * cfg.control_weight,
            ));
        }

        let mut policy = Policy::new(n, behaviors, safeties, controls)?;
        policy.accel_limit = cfg.accel_limit;
        let initial = SimState {
            chart: ChartId::EuclideanBox {
                dim: n,
                bounds: chain.limits(),
            },
            y: start,
            ydot: Vector::zeros(n),
            t: 0.0,
        };
        Ok((
            ArmSystem {
                chain,
                cfg: cfg.clone(),
                policy,
                goal_position,
                goal_orientation,
                start_position: p0,
                names,
                last: None,
            },
            initial,
        ))
    }

    pub fn chain(&self) -> &Arc<KinematicChain> {
        &self.chain
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn goal_orientation(&self) -> Option<Vector4<f64>> {
        self.goal_orientation
    }

    /// Start end-effector position, goal position and obstacle center.
    pub fn side_reference(&self) -> Option<[[f64; 3]; 3]> {
        let o = self.cfg.obstacle.as_ref()?;
        Some([
            self.start_position.into(),
            self.goal_position.into(),
            o.center,
        ])
    }

    /// Orientation chord distance and position error at `q`.
    pub fn errors(&self, q: &Vector) -> (Option<f64>, f64) {
        let (p, r) = self.chain.ee_pose(q);
        let chord = self
            .goal_orientation
            .map(|g| chord_distance(&kinematics::quat_to_wxyz(&r), &g));
        (chord, (p - self.goal_position).norm())
    }
}

impl ClosedLoop for ArmSystem {
    fn begin_step(&mut self, state: &SimState) -> Result<()> {
        if let Some(a) = &self.cfg.action {
            let u = if state.t < a.until { a.magnitude } else { 0.0 };
            self.policy.set_action(0, &Vector::from_element(1, u))?;
        }
        Ok(())
    }

    fn acceleration(&mut self, state: &SimState) -> Result<Vector> {
        let step = self.policy.control_step(&state.y, &state.ydot)?;
        let a = step.sigma_ddot.clone();
        self.last = Some(step);
        Ok(a)
    }

    fn observe(&mut self, state: &SimState) -> Result<Observation> {
        let q = &state.y;
        let (p, _) = self.chain.ee_pose(q);
        let (chord, pos_err) = self.errors(q);
        let mut h0 = Vec::with_capacity(self.names.len());
        for [lo, hi] in self
            .chain
            .limits()
            .into_iter()
            .enumerate()
            .map(|(k, l)| [q[k] - l[0], l[1] - q[k]])
        {
            h0.push(lo);
            h0.push(hi);
        }
        if let Some(o) = &self.cfg.obstacle {
            h0.extend(link_distances(
                &self.chain,
                q,
                &Vector3::from(o.center),
                o.radius,
            ));
        }
        let n_h = h0.len();
        let mut obs = Observation {
            x: Some([p[0], p[1], p[2]]),
            h0,
            h: vec![None; n_h],
            goal_error: chord.unwrap_or(0.0).max(pos_err),
            speed: state.ydot.norm(),
            action: self
                .policy
                .controls
                .iter()
                .flat_map(|c| c.input.iter().copied())
                .collect(),
            qp1_status: "none".into(),
            qp2_status: "none".into(),
            ..Default::default()
        };
        if let Some(step) = &self.last {
            obs.qp1_status = step.qp1.status.label().into();
            obs.qp2_status = step.qp2.status.label().into();
            obs.slack_max = step.qp1.status.slack().max(step.qp2.status.slack());
            obs.warnings = step.warnings.clone();
        }
        Ok(obs)
    }

    fn safety_names(&self) -> Vec<String> {
        self.names.clone()
    }
}
