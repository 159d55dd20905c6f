//! Point robot on the unit sphere with stereographic charts.

use nalgebra::Vector3;

use super::config::{
    ChartChoice, MetricChoice, SphereAction, SphereConfig, SphereDynamics, SphereSafety,
};
use crate::geom::{self, ChartId, MetricSpec};
use crate::linalg;
use crate::pbds::{BehaviorTask, DissipationSpec, PotentialSpec};
use crate::policy::{ControlTask, Policy, PolicyStep};
use crate::safety::{
    BarrierKind, BcbfTask, EcbfTask, InitialCheck, NominalField, SafetyFunction, SafetyTask,
};
use crate::sim::{ClosedLoop, Integrator, Observation, SimState};
use crate::taskmap::TaskMap;
use crate::{Matrix, Result, Vector};

pub fn chart_id(choice: ChartChoice) -> ChartId {
    match choice {
        ChartChoice::North => ChartId::NorthStereo,
        ChartChoice::South => ChartId::SouthStereo,
    }
}

fn unit3(v: [f64; 3]) -> Vector3<f64> {
    Vector3::from(v).normalize()
}

/// Projection of `v` onto the tangent plane at `x`.
fn tangent(x: &Vector3<f64>, v: &Vector3<f64>) -> Vector3<f64> {
    v - x * x.dot(v)
}

fn normalize_or_zero(v: Vector3<f64>) -> Vector3<f64> {
    let n = v.norm();
    if n > 1e-12 {
        v / n
    } else {
        Vector3::zeros()
    }
}

/// Closed-loop sphere system: one policy per chart so that chart switches
/// keep the same task definitions.
pub struct SphereSystem {
    cfg: SphereConfig,
    /// Policies for the north and south charts (empty for free motion).
    policies: Vec<Policy>,
    goal: Vector3<f64>,
    obstacle: Option<(Vector3<f64>, f64)>,
    /// Unit normal of the plane through the origin, start and goal.
    normal: Vector3<f64>,
    /// Embedded action held over the current step.
    action: Vector3<f64>,
    last: Option<PolicyStep>,
    pub(crate) build_warnings: Vec<String>,
}

impl SphereSystem {
    pub fn new(cfg: &SphereConfig) -> Result<(Self, SimState)> {
        let start = unit3(cfg.start);
        let goal = unit3(cfg.goal);
        let obstacle = cfg.obstacle.map(|c| (unit3(c.center), c.radius));
        let mut normal = start.cross(&goal);
        if normal.norm() < 1e-9 {
            // Start and goal antipodal or equal: any normal to the start works.
            normal = start.cross(&Vector3::z());
            if normal.norm() < 1e-9 {
                normal = start.cross(&Vector3::x());
            }
        }
        let normal = normal.normalize();

        let policies = match cfg.dynamics {
            SphereDynamics::Pbds | SphereDynamics::TrivialPbds => {
                [ChartChoice::North, ChartChoice::South]
                    .into_iter()
                    .map(|c| build_policy(cfg, &chart_id(c), &goal, obstacle))
                    .collect::<Result<Vec<_>>>()?
            }
            SphereDynamics::GeometricFree | SphereDynamics::FlatFree => Vec::new(),
        };

        let chart = chart_id(cfg.chart);
        let y = geom::unembed(&chart, &start)?;
        let jac = geom::embed_jacobian(&chart, &y)?;
        let v = tangent(&start, &Vector3::from(cfg.start_velocity));
        let ydot = linalg::lstsq(&jac, &Vector::from_column_slice(v.as_slice()), 1e-12);
        let initial = SimState {
            chart,
            y,
            ydot,
            t: 0.0,
        };

        let mut system = SphereSystem {
            cfg: cfg.clone(),
            policies,
            goal,
            obstacle,
            normal,
            action: Vector3::zeros(),
            last: None,
            build_warnings: Vec::new(),
        };
        system.check_initial(&initial)?;
        Ok((system, initial))
    }

    fn check_initial(&mut self, s: &SimState) -> Result<()> {
        let Some(policy) = self.policies.get(chart_index(&s.chart)) else {
            return Ok(());
        };
        for task in &policy.safeties {
            if let SafetyTask::Ecbf(e) = task {
                if let InitialCheck::Warn { required_p1 } = e.initial_check(&s.y, &s.ydot)? {
                    self.build_warnings.push(format!(
                        "ECBF `{}`: first pole {} below the required {required_p1:.3}",
                        e.name, e.poles.0
                    ));
                }
            }
        }
        Ok(())
    }

    /// Start, goal and obstacle center; the plane through them defines the
    /// side of a trajectory.
    pub fn side_reference(&self) -> Option<[[f64; 3]; 3]> {
        let (c, _) = self.obstacle?;
        let s = unit3(self.cfg.start);
        Some([s.into(), self.goal.into(), c.into()])
    }

    fn action_at(&self, x: &Vector3<f64>, t: f64) -> Vector3<f64> {
        match self.cfg.action {
            SphereAction::Zero => Vector3::zeros(),
            SphereAction::Perpendicular {
                sign,
                magnitude,
                until,
            } => {
                if t < until {
                    normalize_or_zero(tangent(x, &self.normal)) * (sign.signum() * magnitude)
                } else {
                    Vector3::zeros()
                }
            }
            SphereAction::TowardObstacle { magnitude } => match &self.obstacle {
                Some((c, _)) => normalize_or_zero(tangent(x, c)) * magnitude,
                None => Vector3::zeros(),
            },
        }
    }

    fn has_controls(&self) -> bool {
        self.policies
            .first()
            .is_some_and(|p| !p.controls.is_empty())
    }
}

fn chart_index(chart: &ChartId) -> usize {
    match chart {
        ChartId::SouthStereo => 1,
        _ => 0,
    }
}

fn build_policy(
    cfg: &SphereConfig,
    chart: &ChartId,
    goal: &Vector3<f64>,
    obstacle: Option<(Vector3<f64>, f64)>,
) -> Result<Policy> {
    let embedding = TaskMap::StereoEmbedding {
        chart: chart.clone(),
    };
    let behavior = match cfg.dynamics {
        SphereDynamics::TrivialPbds => BehaviorTask {
            name: "embedding".into(),
            map: embedding.clone(),
            metric: MetricSpec::flat(3),
            potential: PotentialSpec::None,
            dissipation: DissipationSpec::None,
            weight: 1.0,
        },
        _ => BehaviorTask {
            name: "attractor".into(),
            map: embedding.clone(),
            metric: MetricSpec::flat(3),
            potential: PotentialSpec::Quadratic {
                center: goal.iter().copied().collect(),
                gain: cfg.attractor_gain,
            },
            dissipation: DissipationSpec::Linear {
                gain: cfg.damping_gain,
            },
            weight: 1.0,
        },
    };
    let mut safeties = Vec::new();
    if let (Some(kind), Some((c, r))) = (&cfg.safety, obstacle) {
        let center = [c[0], c[1], c[2]];
        match kind {
            SphereSafety::Ecbf(e) => safeties.push(SafetyTask::Ecbf(EcbfTask {
                name: "obstacle".into(),
                map: embedding.clone(),
                h0: SafetyFunction {
                    kind: BarrierKind::ArcDistS2 { center, radius: r },
                    padding: cfg.padding,
                },
                poles: e.poles,
            })),
            SphereSafety::Bcbf(b) => safeties.push(SafetyTask::Bcbf(BcbfTask {
                name: "obstacle".into(),
                map: TaskMap::Identity { dim: 2 },
                h0: SafetyFunction {
                    kind: BarrierKind::ArcDistS2InChart {
                        chart: chart.clone(),
                        center,
                        radius: r,
                    },
                    padding: cfg.padding,
                },
                metric: match b.metric {
                    MetricChoice::Round => MetricSpec::RoundStereographic,
                    MetricChoice::Flat => MetricSpec::flat(2),
                },
                nominal: NominalField::Zero,
                alpha_gain: b.alpha_gain,
                delta: b.delta,
                epsilon: b.epsilon,
            })),
        }
    }
    let controls = match cfg.dynamics {
        SphereDynamics::Pbds => vec![ControlTask::new(
            "steer",
            embedding,
            MetricSpec::flat(3),
            Matrix::identity(3, 3) * cfg.control_weight,
        )],
        _ => Vec::new(),
    };
    Policy::new(2, vec![behavior], safeties, controls)
}

impl ClosedLoop for SphereSystem {
    fn begin_step(&mut self, state: &SimState) -> Result<()> {
        let x = geom::embed(&state.chart, &state.y)?;
        self.action = self.action_at(&x, state.t);
        Ok(())
    }

    fn acceleration(&mut self, state: &SimState) -> Result<Vector> {
        if self.policies.is_empty() {
            self.last = None;
            return Ok(Vector::zeros(2));
        }
        let has_controls = self.has_controls();
        let action = Vector::from_column_slice(self.action.as_slice());
        let policy = &mut self.policies[chart_index(&state.chart)];
        if has_controls {
            policy.set_action(0, &action)?;
        }
        let step = policy.control_step(&state.y, &state.ydot)?;
        let a = step.sigma_ddot.clone();
        self.last = Some(step);
        Ok(a)
    }

    fn observe(&mut self, state: &SimState) -> Result<Observation> {
        let x = geom::embed(&state.chart, &state.y)?;
        let xdot = geom::embed_jacobian(&state.chart, &state.y)? * &state.ydot;
        let mut obs = Observation {
            x: Some([x[0], x[1], x[2]]),
            goal_error: geom::arc_distance(&x, &self.goal).0,
            speed: xdot.norm(),
            action: self.action.iter().copied().collect(),
            qp1_status: "none".into(),
            qp2_status: "none".into(),
            ..Default::default()
        };
        if let Some((c, r)) = &self.obstacle {
            obs.h0.push(geom::arc_distance(&x, c).0 - r);
            obs.h.push(None);
        }
        if let Some(step) = &self.last {
            obs.qp1_status = step.qp1.status.label().into();
            obs.qp2_status = step.qp2.status.label().into();
            obs.slack_max = step.qp1.status.slack().max(step.qp2.status.slack());
            if let (Some(h), Some(e)) = (obs.h.first_mut(), step.safety.first()) {
                *h = e.h;
            }
            obs.warnings = step.warnings.clone();
        }
        Ok(obs)
    }

    fn integrator(&self) -> Integrator {
        match self.cfg.dynamics {
            SphereDynamics::GeometricFree => Integrator::Geometric(MetricSpec::RoundStereographic),
            _ => Integrator::Flat,
        }
    }

    fn switch_threshold(&self) -> Option<f64> {
        self.cfg.switch_threshold
    }

    fn safety_names(&self) -> Vec<String> {
        if self.obstacle.is_some() {
            vec!["obstacle".into()]
        } else {
            Vec::new()
        }
    }
}

impl SphereSystem {
    /// Policy of the chart a state is expressed in.
    pub fn policy_mut(&mut self, chart: &ChartId) -> Option<&mut Policy> {
        self.policies.get_mut(chart_index(chart))
    }
}
