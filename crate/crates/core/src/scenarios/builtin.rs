//! The built-in scenario table.

use std::f64::consts::FRAC_1_SQRT_2;

use super::config::*;
use crate::safety::DEFAULT_PADDING;
use crate::sim::{ConvergenceSpec, StepMode};
use crate::{Error, Result};

const SPHERE_IDS: [&str; 12] = [
    "s2_i", "s2_ii", "s2_iii", "s2_iv", "s2_v", "s2_vi", "s2_vii", "s2_viii", "s2_ix", "s2_x",
    "s2_xi", "s2_xii",
];
const APPENDIX_IDS: [&str; 6] = [
    "s2_app_a", "s2_app_b", "s2_app_c", "s2_app_d", "s2_app_e", "s2_app_f",
];
const ARM_IDS: [&str; 5] = [
    "arm_pose",
    "arm_so3_batch",
    "arm_so3_batch_ablation",
    "arm_homotopy_plus",
    "arm_homotopy_minus",
];

/// Every built-in id, in table order.
pub fn builtin_ids() -> Vec<&'static str> {
    SPHERE_IDS
        .iter()
        .chain(&APPENDIX_IDS)
        .chain(&ARM_IDS)
        .copied()
        .collect()
}

/// Ids of a suite group: `s2`, `s2-appendix`, `arm` or `all`.
pub fn group_ids(group: &str) -> Option<Vec<&'static str>> {
    match group {
        "s2" => Some(SPHERE_IDS.to_vec()),
        "s2-appendix" => Some(APPENDIX_IDS.to_vec()),
        "arm" => Some(ARM_IDS.to_vec()),
        "all" => Some(builtin_ids()),
        _ => None,
    }
}

/// Chart-switch threshold of the switching runs. The default of 2 is never
/// reached on this scene, so switches would not be exercised.
pub const SPHERE_SWITCH_THRESHOLD: f64 = 1.25;

/// Small northward tilt of the start that breaks the left/right symmetry of
/// the obstacle scene.
pub const SPHERE_START_TILT: f64 = 0.02;

pub fn sphere_start() -> [f64; 3] {
    [SPHERE_START_TILT.cos(), 0.0, SPHERE_START_TILT.sin()]
}

pub const SPHERE_GOAL: [f64; 3] = [0.0, 1.0, 0.0];
pub const SPHERE_OBSTACLE: Cap = Cap {
    center: [FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0],
    radius: 0.5,
};

/// Start inside the obstacle for the recovery runs.
pub fn sphere_unsafe_start() -> [f64; 3] {
    let lon = std::f64::consts::FRAC_PI_4 + 0.25;
    let lat: f64 = 0.15;
    [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
}

pub const ECBF_POLES: (f64, f64) = (2.0, 4.0);

pub fn ecbf(task_metric: MetricChoice) -> SphereSafety {
    SphereSafety::Ecbf(EcbfConfig {
        poles: ECBF_POLES,
        task_metric,
    })
}

pub fn bcbf(metric: MetricChoice) -> SphereSafety {
    SphereSafety::Bcbf(BcbfConfig {
        metric,
        alpha_gain: 1.0,
        delta: 0.1,
        epsilon: 0.5,
    })
}

/// The shared obstacle scene on the north chart with ECBF safety.
pub fn sphere_base() -> SphereConfig {
    SphereConfig {
        chart: ChartChoice::North,
        switch_threshold: None,
        dynamics: SphereDynamics::Pbds,
        start: sphere_start(),
        start_velocity: [0.0; 3],
        goal: SPHERE_GOAL,
        attractor_gain: 4.0,
        damping_gain: 4.0,
        obstacle: Some(SPHERE_OBSTACLE),
        safety: Some(ecbf(MetricChoice::Round)),
        action: SphereAction::Zero,
        control_weight: 1.0,
        padding: DEFAULT_PADDING,
    }
}

/// Unit push perpendicular to the start/goal plane for the first 1.5 s.
pub fn perpendicular(sign: f64) -> SphereAction {
    SphereAction::Perpendicular {
        sign,
        magnitude: 1.0,
        until: 1.5,
    }
}

fn sphere_scenario(id: &str, description: &str, s: SphereConfig) -> ScenarioConfig {
    ScenarioConfig {
        id: id.into(),
        description: description.into(),
        system: SystemConfig::Sphere(s),
        dt: 5e-3,
        horizon: 25.0,
        seed: 0,
        step_mode: StepMode::PerStage,
        convergence: Some(ConvergenceSpec::default()),
    }
}

fn appendix(
    id: &str,
    description: &str,
    chart: ChartChoice,
    dynamics: SphereDynamics,
) -> ScenarioConfig {
    let s = SphereConfig {
        chart,
        dynamics,
        start: [1.0, 0.0, 0.0],
        start_velocity: [0.0, 0.6, 0.8],
        obstacle: None,
        safety: None,
        ..sphere_base()
    };
    ScenarioConfig {
        horizon: 3.0,
        convergence: None,
        ..sphere_scenario(id, description, s)
    }
}

/// Goal rotation of the single pose run, relative to the start orientation.
pub const ARM_POSE_EULER_DEG: [f64; 3] = [45.0, 60.0, 90.0];

pub fn arm_base() -> ArmConfig {
    ArmConfig {
        chain: None,
        start: None,
        goal_position: None,
        goal_orientation: None,
        gains: ArmGains::default(),
        joint_limit_poles: (4.0, 8.0),
        obstacle_poles: (4.0, 8.0),
        obstacle: None,
        obstacle_cbf: true,
        obstacle_margin: 0.01,
        action: None,
        control_weight: 1.0,
        accel_limit: None,
        padding: DEFAULT_PADDING,
    }
}

fn arm_scenario(id: &str, description: &str, system: SystemConfig, horizon: f64) -> ScenarioConfig {
    ScenarioConfig {
        id: id.into(),
        description: description.into(),
        system,
        dt: 1e-3,
        horizon,
        seed: 0,
        step_mode: StepMode::PerStage,
        convergence: Some(ConvergenceSpec::default()),
    }
}

pub const HOMOTOPY_GOAL: [f64; 3] = [0.6, 0.0, 0.3];
pub const HOMOTOPY_OBSTACLE: Obstacle = Obstacle {
    center: [0.45, 0.0, 0.42],
    radius: 0.06,
};

fn homotopy(id: &str, sign: f64) -> ScenarioConfig {
    let arm = ArmConfig {
        goal_position: Some(HOMOTOPY_GOAL),
        obstacle: Some(HOMOTOPY_OBSTACLE),
        action: Some(JointAction {
            joint: 0,
            magnitude: 2.0 * sign,
            until: 1.0,
        }),
        ..arm_base()
    };
    let description = if sign > 0.0 {
        "position reaching past an obstacle, joint 1 pushed positive for 1 s"
    } else {
        "position reaching past an obstacle, joint 1 pushed negative for 1 s"
    };
    arm_scenario(id, description, SystemConfig::Arm(arm), 20.0)
}

pub const POSE_OBSTACLE: Obstacle = Obstacle {
    center: [0.12, -0.16, 0.66],
    radius: 0.08,
};

fn so3_batch(id: &str, ablate: bool) -> ScenarioConfig {
    let batch = BatchConfig {
        count: 50,
        ablate_obstacle_cbf: ablate,
        rotation_degrees: [30.0, 150.0],
        obstacle_radius: 0.08,
        placement_radius: 0.35,
        placement_offset: [0.0, 0.0, 0.0],
        min_clearance: 0.05,
        max_attempts: 1000,
        chord_tolerance: 0.05,
        arm: arm_base(),
    };
    let description = if ablate {
        "50 random orientation goals with an obstacle, obstacle barriers removed"
    } else {
        "50 random orientation goals with an obstacle"
    };
    arm_scenario(id, description, SystemConfig::ArmBatch(batch), 15.0)
}

/// Configuration of a built-in scenario.
pub fn builtin(id: &str) -> Result<ScenarioConfig> {
    use MetricChoice::{Flat, Round};
    let base = sphere_base;
    let cfg = match id {
        "s2_i" => sphere_scenario(id, "north chart, ECBF", base()),
        "s2_ii" => sphere_scenario(
            id,
            "north chart, BCBF with the round metric",
            SphereConfig {
                safety: Some(bcbf(Round)),
                ..base()
            },
        ),
        "s2_iii" => sphere_scenario(
            id,
            "north chart, BCBF with the flat chart metric",
            SphereConfig {
                safety: Some(bcbf(Flat)),
                ..base()
            },
        ),
        "s2_iv" => sphere_scenario(
            id,
            "chart switching, ECBF",
            SphereConfig {
                switch_threshold: Some(SPHERE_SWITCH_THRESHOLD),
                ..base()
            },
        ),
        "s2_v" => sphere_scenario(
            id,
            "chart switching, BCBF with the round metric",
            SphereConfig {
                switch_threshold: Some(SPHERE_SWITCH_THRESHOLD),
                safety: Some(bcbf(Round)),
                ..base()
            },
        ),
        "s2_vi" => sphere_scenario(
            id,
            "recovery from inside the obstacle, ECBF",
            SphereConfig {
                start: sphere_unsafe_start(),
                ..base()
            },
        ),
        "s2_vii" => sphere_scenario(
            id,
            "recovery from inside the obstacle, BCBF with the round metric",
            SphereConfig {
                start: sphere_unsafe_start(),
                safety: Some(bcbf(Round)),
                ..base()
            },
        ),
        "s2_viii" => sphere_scenario(id, "zero action through a live control task", base()),
        "s2_ix" => sphere_scenario(
            id,
            "positive perpendicular action",
            SphereConfig {
                action: perpendicular(1.0),
                ..base()
            },
        ),
        "s2_x" => sphere_scenario(
            id,
            "negative perpendicular action",
            SphereConfig {
                action: perpendicular(-1.0),
                ..base()
            },
        ),
        "s2_xi" => sphere_scenario(
            id,
            "adversarial action of magnitude 10 toward the obstacle center",
            SphereConfig {
                action: SphereAction::TowardObstacle { magnitude: 10.0 },
                ..base()
            },
        ),
        "s2_xii" => sphere_scenario(
            id,
            "negative perpendicular action on the south chart",
            SphereConfig {
                chart: ChartChoice::South,
                action: perpendicular(-1.0),
                ..base()
            },
        ),
        "s2_app_a" => appendix(
            id,
            "geodesic motion, north chart",
            ChartChoice::North,
            SphereDynamics::GeometricFree,
        ),
        "s2_app_b" => appendix(
            id,
            "flat free motion, north chart",
            ChartChoice::North,
            SphereDynamics::FlatFree,
        ),
        "s2_app_c" => appendix(
            id,
            "geodesic motion, south chart",
            ChartChoice::South,
            SphereDynamics::GeometricFree,
        ),
        "s2_app_d" => appendix(
            id,
            "flat free motion, south chart",
            ChartChoice::South,
            SphereDynamics::FlatFree,
        ),
        "s2_app_e" => appendix(
            id,
            "trivial embedding task, north chart",
            ChartChoice::North,
            SphereDynamics::TrivialPbds,
        ),
        "s2_app_f" => appendix(
            id,
            "trivial embedding task, south chart",
            ChartChoice::South,
            SphereDynamics::TrivialPbds,
        ),
        "arm_pose" => arm_scenario(
            id,
            "orientation goal with an obstacle in the wrist sweep",
            SystemConfig::Arm(ArmConfig {
                goal_orientation: Some(OrientationGoal::RelativeEulerXyz {
                    degrees: ARM_POSE_EULER_DEG,
                }),
                obstacle: Some(POSE_OBSTACLE),
                ..arm_base()
            }),
            15.0,
        ),
        "arm_so3_batch" => so3_batch(id, false),
        "arm_so3_batch_ablation" => so3_batch(id, true),
        "arm_homotopy_plus" => homotopy(id, 1.0),
        "arm_homotopy_minus" => homotopy(id, -1.0),
        _ => return Err(Error::UnknownScenario(id.to_string())),
    };
    Ok(cfg)
}
