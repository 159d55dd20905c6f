//! Serial revolute chains: forward kinematics, Jacobians and bias
//! accelerations, plus capsule link geometry.
//!
//! Every joint frame `k` is obtained from its parent by a fixed transform
//! (`origin_xyz`, `origin_quat`) followed by a rotation of `σₖ` about the
//! joint axis expressed in the post-offset frame. The base frame is the
//! world frame. Quaternions are stored `[w, x, y, z]`.

use nalgebra::{Quaternion, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::{Error, Matrix, Result, Vector};

const PANDA_LIKE: &str = include_str!("../data/panda_like.json");

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    pub axis: [f64; 3],
    pub origin_xyz: [f64; 3],
    pub origin_quat: [f64; 4],
    pub limits: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapsuleSpec {
    pub name: String,
    /// Index of the joint frame that carries the capsule.
    pub joint: usize,
    pub p1: [f64; 3],
    pub p2: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndEffectorSpec {
    pub joint: usize,
    pub offset_xyz: [f64; 3],
    pub offset_quat: [f64; 4],
}

/// On-disk description of a chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub name: String,
    pub joints: Vec<JointSpec>,
    pub links: Vec<CapsuleSpec>,
    pub end_effector: EndEffectorSpec,
    pub home: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Joint {
    axis: Vector3<f64>,
    offset: Vector3<f64>,
    rot: UnitQuaternion<f64>,
}

/// Capsule attached to a joint frame, endpoints in that frame.
#[derive(Debug, Clone)]
pub struct Capsule {
    pub name: String,
    pub joint: usize,
    pub p1: Vector3<f64>,
    pub p2: Vector3<f64>,
    pub radius: f64,
}

/// A frame of interest on the chain: a joint frame plus a fixed offset.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRef {
    pub joint: usize,
    pub offset: Vector3<f64>,
    pub rot: UnitQuaternion<f64>,
}

#[derive(Debug, Clone)]
pub struct KinematicChain {
    spec: ChainSpec,
    joints: Vec<Joint>,
    capsules: Vec<Capsule>,
    ee: FrameRef,
}

/// World poses of every joint frame at one configuration.
#[derive(Debug, Clone)]
pub struct ChainPose {
    /// Joint origins in world coordinates.
    pub origins: Vec<Vector3<f64>>,
    /// Joint axes in world coordinates.
    pub axes: Vec<Vector3<f64>>,
    /// World orientation of each frame after its joint rotation.
    pub rots: Vec<UnitQuaternion<f64>>,
}

/// Position, Jacobian, velocity and bias acceleration (σ̈ = 0) of a point.
#[derive(Debug, Clone)]
pub struct PointMotion {
    pub p: Vector3<f64>,
    pub jac: Matrix,
    pub vel: Vector3<f64>,
    pub bias: Vector3<f64>,
}

/// Quaternion `[w, x, y, z]` of a frame with its Jacobian, rate and bias.
#[derive(Debug, Clone)]
pub struct OrientationMotion {
    pub q: Vector4<f64>,
    pub jac: Matrix,
    pub rate: Vector4<f64>,
    pub bias: Vector4<f64>,
}

pub fn quat_from_wxyz(q: [f64; 4]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]))
}

pub fn quat_to_wxyz(q: &UnitQuaternion<f64>) -> Vector4<f64> {
    Vector4::new(q.w, q.i, q.j, q.k)
}

fn quat_mul(a: &Vector4<f64>, b: &Vector4<f64>) -> Vector4<f64> {
    Vector4::new(
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    )
}

/// `½ [0, ω] ⊗ q`.
fn half_omega_times(w: &Vector3<f64>, q: &Vector4<f64>) -> Vector4<f64> {
    quat_mul(&Vector4::new(0.0, w[0], w[1], w[2]), q) * 0.5
}

impl KinematicChain {
    pub fn from_spec(spec: ChainSpec) -> Result<Self> {
        if spec.joints.is_empty() {
            return Err(Error::Chain("chain has no joints".into()));
        }
        let n = spec.joints.len();
        let mut joints = Vec::with_capacity(n);
        for j in &spec.joints {
            let axis = Vector3::from(j.axis);
            if axis.norm() < 1e-12 {
                return Err(Error::Chain(format!("joint `{}` has a zero axis", j.name)));
            }
            if !(j.limits[0] < j.limits[1]) {
                return Err(Error::Chain(format!("joint `{}` has empty limits", j.name)));
            }
            joints.push(Joint {
                axis: axis.normalize(),
                offset: Vector3::from(j.origin_xyz),
                rot: quat_from_wxyz(j.origin_quat),
            });
        }
        let mut capsules = Vec::with_capacity(spec.links.len());
        for l in &spec.links {
            if l.joint >= n {
                return Err(Error::Chain(format!(
                    "link `{}` refers to joint {}",
                    l.name, l.joint
                )));
            }
            if !(l.radius >= 0.0) {
                return Err(Error::Chain(format!(
                    "link `{}` has a negative radius",
                    l.name
                )));
            }
            capsules.push(Capsule {
                name: l.name.clone(),
                joint: l.joint,
                p1: Vector3::from(l.p1),
                p2: Vector3::from(l.p2),
                radius: l.radius,
            });
        }
        if spec.end_effector.joint >= n {
            return Err(Error::Chain(
                "end effector refers to a missing joint".into(),
            ));
        }
        if spec.home.len() != n {
            return Err(Error::dims("chain home configuration", n, spec.home.len()));
        }
        let ee = FrameRef {
            joint: spec.end_effector.joint,
            offset: Vector3::from(spec.end_effector.offset_xyz),
            rot: quat_from_wxyz(spec.end_effector.offset_quat),
        };
        Ok(KinematicChain {
            spec,
            joints,
            capsules,
            ee,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: ChainSpec = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        Self::from_spec(spec)
    }

    /// The bundled 7-DOF Panda-like arm.
    pub fn panda_like() -> Self {
        Self::from_json(PANDA_LIKE).expect("bundled chain is valid")
    }

    pub fn spec(&self) -> &ChainSpec {
        &self.spec
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn home(&self) -> Vector {
        Vector::from_column_slice(&self.spec.home)
    }

    pub fn limits(&self) -> Vec<[f64; 2]> {
        self.spec.joints.iter().map(|j| j.limits).collect()
    }

    pub fn capsules(&self) -> &[Capsule] {
        &self.capsules
    }

    pub fn end_effector(&self) -> &FrameRef {
        &self.ee
    }

    pub fn pose(&self, q: &Vector) -> ChainPose {
        let n = self.dof();
        let mut origins = Vec::with_capacity(n);
        let mut axes = Vec::with_capacity(n);
        let mut rots = Vec::with_capacity(n);
        let mut p = Vector3::zeros();
        let mut r = UnitQuaternion::identity();
        for (k, j) in self.joints.iter().enumerate() {
            p += r * j.offset;
            r *= j.rot;
            axes.push(r * j.axis);
            r *= UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_unchecked(j.axis), q[k]);
            origins.push(p);
            rots.push(r);
        }
        ChainPose {
            origins,
            axes,
            rots,
        }
    }

    /// World position and orientation of a frame.
    pub fn frame_pose(
        &self,
        pose: &ChainPose,
        frame: &FrameRef,
    ) -> (Vector3<f64>, UnitQuaternion<f64>) {
        let r = pose.rots[frame.joint];
        (pose.origins[frame.joint] + r * frame.offset, r * frame.rot)
    }

    pub fn ee_pose(&self, q: &Vector) -> (Vector3<f64>, UnitQuaternion<f64>) {
        let pose = self.pose(q);
        self.frame_pose(&pose, &self.ee)
    }

    /// Angular velocities ω₋₁ … of the frames *before* each joint rotation,
    /// i.e. `pre[j] = Σ_{i<j} σ̇ᵢ aᵢ`, and the origin velocities.
    fn rates(
        &self,
        pose: &ChainPose,
        v: &Vector,
        upto: usize,
    ) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
        let mut pre = Vec::with_capacity(upto + 1);
        let mut odot = Vec::with_capacity(upto + 1);
        let mut w = Vector3::zeros();
        for j in 0..=upto {
            pre.push(w);
            let mut od = Vector3::zeros();
            for i in 0..j {
                od += (pose.axes[i] * v[i]).cross(&(pose.origins[j] - pose.origins[i]));
            }
            odot.push(od);
            w += pose.axes[j] * v[j];
        }
        (pre, odot)
    }

    /// Kinematics of a world point rigidly attached to joint frame `joint`.
    pub fn point_motion(
        &self,
        pose: &ChainPose,
        joint: usize,
        p: &Vector3<f64>,
        v: &Vector,
    ) -> PointMotion {
        let n = self.dof();
        let mut jac = Matrix::zeros(3, n);
        let mut vel = Vector3::zeros();
        for j in 0..=joint {
            let col = pose.axes[j].cross(&(p - pose.origins[j]));
            jac.fixed_view_mut::<3, 1>(0, j).copy_from(&col);
            vel += col * v[j];
        }
        let (pre, odot) = self.rates(pose, v, joint);
        let mut bias = Vector3::zeros();
        for j in 0..=joint {
            if v[j] == 0.0 {
                continue;
            }
            let adot = pre[j].cross(&pose.axes[j]);
            bias +=
                (adot.cross(&(p - pose.origins[j])) + pose.axes[j].cross(&(vel - odot[j]))) * v[j];
        }
        PointMotion {
            p: *p,
            jac,
            vel,
            bias,
        }
    }

    /// Orientation kinematics of a frame as a quaternion in ℝ⁴.
    pub fn orientation_motion(
        &self,
        pose: &ChainPose,
        frame: &FrameRef,
        v: &Vector,
    ) -> OrientationMotion {
        let n = self.dof();
        let (_, rot) = self.frame_pose(pose, frame);
        let q = quat_to_wxyz(&rot);
        let mut jac = Matrix::zeros(4, n);
        let mut w = Vector3::zeros();
        let mut wdot = Vector3::zeros();
        for j in 0..=frame.joint {
            jac.fixed_view_mut::<4, 1>(0, j)
                .copy_from(&half_omega_times(&pose.axes[j], &q));
            // ȧⱼ = ω_{j−1} × aⱼ with ω_{j−1} the angular velocity accumulated so far.
            wdot += w.cross(&pose.axes[j]) * v[j];
            w += pose.axes[j] * v[j];
        }
        let rate = half_omega_times(&w, &q);
        let bias = half_omega_times(&wdot, &q) + half_omega_times(&w, &rate);
        OrientationMotion { q, jac, rate, bias }
    }

    /// Kinematics of the origin of `frame` (including its offset).
    pub fn frame_point_motion(
        &self,
        pose: &ChainPose,
        frame: &FrameRef,
        v: &Vector,
    ) -> PointMotion {
        let (p, _) = self.frame_pose(pose, frame);
        self.point_motion(pose, frame.joint, &p, v)
    }

    /// Capsule endpoints in world coordinates.
    pub fn capsule_world(&self, pose: &ChainPose, link: usize) -> (Vector3<f64>, Vector3<f64>) {
        let c = &self.capsules[link];
        let r = pose.rots[c.joint];
        let o = pose.origins[c.joint];
        (o + r * c.p1, o + r * c.p2)
    }
}

/// Closest point parameter t ∈ [0, 1] on segment a→b to point c.
pub fn closest_segment_parameter(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    let d = b - a;
    let l2 = d.norm_squared();
    if l2 < 1e-24 {
        return 0.0;
    }
    ((c - a).dot(&d) / l2).clamp(0.0, 1.0)
}
