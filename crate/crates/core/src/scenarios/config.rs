//! JSON scenario schema.
//!
//! Large enums are externally tagged (`{"sphere": {...}}`) so that error
//! paths reported by [`parse_config`] point into the offending variant.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::safety::DEFAULT_PADDING;
use crate::sim::{ConvergenceSpec, StepMode};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub system: SystemConfig,
    pub dt: f64,
    /// Maximum simulated duration in seconds.
    pub horizon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub step_mode: StepMode,
    /// Stop early once the goal error and speed stay below tolerance.
    #[serde(default)]
    pub convergence: Option<ConvergenceSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemConfig {
    Sphere(SphereConfig),
    Arm(ArmConfig),
    ArmBatch(BatchConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartChoice {
    North,
    South,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricChoice {
    Round,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SphereDynamics {
    /// Attractor and damping on the embedding, solved through the policy.
    Pbds,
    /// Embedding task with zero potential and zero dissipation.
    TrivialPbds,
    /// Free geodesic motion integrated with the round Christoffel symbols.
    GeometricFree,
    /// Free motion ignoring the metric (`ÿ = 0` in chart coordinates).
    FlatFree,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cap {
    pub center: [f64; 3],
    /// Arc radius in radians.
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SphereSafety {
    Ecbf(EcbfConfig),
    Bcbf(BcbfConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EcbfConfig {
    pub poles: (f64, f64),
    /// Recorded for comparison runs; ECBF rows do not depend on it.
    #[serde(default = "round")]
    pub task_metric: MetricChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BcbfConfig {
    pub metric: MetricChoice,
    pub alpha_gain: f64,
    pub delta: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum SphereAction {
    #[default]
    Zero,
    /// Tangent push along `±n`, the normal of the start/goal plane, applied
    /// while `t < until`.
    Perpendicular {
        sign: f64,
        magnitude: f64,
        until: f64,
    },
    /// Tangent push toward the obstacle center for the whole run.
    TowardObstacle { magnitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereConfig {
    pub chart: ChartChoice,
    /// Enables chart switching when `‖y‖` exceeds this value.
    #[serde(default)]
    pub switch_threshold: Option<f64>,
    pub dynamics: SphereDynamics,
    /// Initial point in ℝ³; normalized onto the sphere.
    pub start: [f64; 3],
    /// Initial embedded velocity; projected onto the tangent plane.
    #[serde(default)]
    pub start_velocity: [f64; 3],
    pub goal: [f64; 3],
    #[serde(default = "four")]
    pub attractor_gain: f64,
    #[serde(default = "four")]
    pub damping_gain: f64,
    #[serde(default)]
    pub obstacle: Option<Cap>,
    #[serde(default)]
    pub safety: Option<SphereSafety>,
    #[serde(default)]
    pub action: SphereAction,
    #[serde(default = "one")]
    pub control_weight: f64,
    #[serde(default = "default_padding")]
    pub padding: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmGains {
    pub orientation: f64,
    pub orientation_damping: f64,
    pub position: f64,
    pub position_damping: f64,
    pub joint_damping: f64,
    /// Weight of the joint damping task relative to the workspace tasks.
    pub joint_weight: f64,
}

impl Default for ArmGains {
    fn default() -> Self {
        ArmGains {
            orientation: 4.0,
            orientation_damping: 4.0,
            position: 10.0,
            position_damping: 6.0,
            joint_damping: 2.0,
            joint_weight: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum OrientationGoal {
    /// Start orientation composed with intrinsic X-Y-Z rotations (degrees).
    RelativeEulerXyz { degrees: [f64; 3] },
    /// Start orientation composed with a rotation about an end-effector axis.
    RelativeAxisAngle { axis: [f64; 3], degrees: f64 },
    /// Absolute quaternion `[w, x, y, z]`.
    Absolute { quaternion: [f64; 4] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointAction {
    /// Zero-based joint index.
    pub joint: usize,
    pub magnitude: f64,
    /// The action is applied while `t < until`.
    pub until: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    /// Chain definition file; the bundled Panda-like arm when absent.
    #[serde(default)]
    pub chain: Option<PathBuf>,
    /// Initial joint configuration; the chain's home when absent.
    #[serde(default)]
    pub start: Option<Vec<f64>>,
    /// End-effector position goal; holds the start position when absent.
    #[serde(default)]
    pub goal_position: Option<[f64; 3]>,
    /// Orientation goal; no orientation task when absent.
    #[serde(default)]
    pub goal_orientation: Option<OrientationGoal>,
    #[serde(default)]
    pub gains: ArmGains,
    #[serde(default = "default_poles")]
    pub joint_limit_poles: (f64, f64),
    #[serde(default = "default_poles")]
    pub obstacle_poles: (f64, f64),
    #[serde(default)]
    pub obstacle: Option<Obstacle>,
    /// Adds one distance ECBF per link capsule.
    #[serde(default = "yes")]
    pub obstacle_cbf: bool,
    /// Distance kept by the obstacle ECBFs, in meters.
    #[serde(default = "default_margin")]
    pub obstacle_margin: f64,
    #[serde(default)]
    pub action: Option<JointAction>,
    #[serde(default = "one")]
    pub control_weight: f64,
    #[serde(default)]
    pub accel_limit: Option<f64>,
    #[serde(default = "default_padding")]
    pub padding: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    pub count: usize,
    /// Removes the obstacle ECBFs while keeping the joint-limit ECBFs.
    #[serde(default)]
    pub ablate_obstacle_cbf: bool,
    /// Range of goal rotation angles in degrees.
    pub rotation_degrees: [f64; 2],
    pub obstacle_radius: f64,
    /// Obstacle centers are drawn uniformly in a ball of this radius around
    /// the start end-effector position shifted by `placement_offset`.
    pub placement_radius: f64,
    #[serde(default)]
    pub placement_offset: [f64; 3],
    /// Samples whose start clearance is below this are redrawn.
    pub min_clearance: f64,
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
    /// Chord distance below which a run counts as converged.
    pub chord_tolerance: f64,
    /// Template for every run; its goal orientation and obstacle are replaced.
    pub arm: ArmConfig,
}

fn round() -> MetricChoice {
    MetricChoice::Round
}

fn four() -> f64 {
    4.0
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn default_padding() -> f64 {
    DEFAULT_PADDING
}

fn default_poles() -> (f64, f64) {
    (4.0, 8.0)
}

fn default_margin() -> f64 {
    0.01
}

fn default_attempts() -> usize {
    1000
}

/// Parses a scenario from JSON, reporting the field path of schema errors.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn bad(path: &str, message: &str) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl ScenarioConfig {
    /// Checks value ranges that the schema cannot express.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(bad("dt", "must be in (0, 0.1]"));
        }
        if !(self.horizon > 0.0) {
            return Err(bad("horizon", "must be positive"));
        }
        match &self.system {
            SystemConfig::Sphere(s) => s.validate("system.sphere"),
            SystemConfig::Arm(a) => {
                if a.goal_orientation.is_none() && a.action.is_none() && a.goal_position.is_none() {
                    return Err(bad(
                        "system.arm",
                        "needs a position goal, an orientation goal or an action",
                    ));
                }
                a.validate("system.arm")
            }
            SystemConfig::ArmBatch(b) => {
                if b.count == 0 {
                    return Err(bad("system.arm_batch.count", "must be positive"));
                }
                let [lo, hi] = b.rotation_degrees;
                if !(0.0 <= lo && lo <= hi && hi <= 180.0) {
                    return Err(bad(
                        "system.arm_batch.rotation_degrees",
                        "expected 0 <= lo <= hi <= 180",
                    ));
                }
                if !(b.obstacle_radius > 0.0 && b.placement_radius > 0.0) {
                    return Err(bad("system.arm_batch", "radii must be positive"));
                }
                b.arm.validate("system.arm_batch.arm")
            }
        }
    }
}

fn unit(v: [f64; 3], path: &str) -> Result<()> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if !(n > 1e-9) || !n.is_finite() {
        return Err(bad(path, "must be a nonzero finite vector"));
    }
    Ok(())
}

impl SphereConfig {
    fn validate(&self, at: &str) -> Result<()> {
        unit(self.start, &format!("{at}.start"))?;
        unit(self.goal, &format!("{at}.goal"))?;
        if let Some(t) = self.switch_threshold {
            if !(t > 1.0) {
                return Err(bad(&format!("{at}.switch_threshold"), "must exceed 1"));
            }
        }
        if let Some(c) = &self.obstacle {
            unit(c.center, &format!("{at}.obstacle.center"))?;
            if !(c.radius > 0.0 && c.radius < std::f64::consts::PI) {
                return Err(bad(&format!("{at}.obstacle.radius"), "must be in (0, π)"));
            }
        }
        if self.safety.is_some() && self.obstacle.is_none() {
            return Err(bad(
                &format!("{at}.safety"),
                "a safety task needs an obstacle",
            ));
        }
        match &self.safety {
            Some(SphereSafety::Ecbf(e)) if !(e.poles.0 > 0.0 && e.poles.1 > 0.0) => {
                return Err(bad(
                    &format!("{at}.safety.ecbf.poles"),
                    "poles must be positive",
                ));
            }
            Some(SphereSafety::Bcbf(b))
                if !(b.alpha_gain > 0.0 && b.delta > 0.0 && b.epsilon > 0.0) =>
            {
                return Err(bad(
                    &format!("{at}.safety.bcbf"),
                    "alpha_gain, delta and epsilon must be positive",
                ));
            }
            _ => {}
        }
        if matches!(self.action, SphereAction::TowardObstacle { .. }) && self.obstacle.is_none() {
            return Err(bad(
                &format!("{at}.action"),
                "toward_obstacle needs an obstacle",
            ));
        }
        if !(self.control_weight > 0.0) {
            return Err(bad(&format!("{at}.control_weight"), "must be positive"));
        }
        Ok(())
    }
}

impl ArmConfig {
    fn validate(&self, at: &str) -> Result<()> {
        for (name, p) in [
            ("joint_limit_poles", self.joint_limit_poles),
            ("obstacle_poles", self.obstacle_poles),
        ] {
            if !(p.0 > 0.0 && p.1 > 0.0) {
                return Err(bad(&format!("{at}.{name}"), "poles must be positive"));
            }
        }
        if let Some(o) = &self.obstacle {
            if !(o.radius > 0.0) {
                return Err(bad(&format!("{at}.obstacle.radius"), "must be positive"));
            }
        }
        if !(self.control_weight > 0.0) {
            return Err(bad(&format!("{at}.control_weight"), "must be positive"));
        }
        Ok(())
    }
}
