//! Closed-loop integration, chart switching and trace recording.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geom::{self, ChartId, MetricSpec};
use crate::{Error, Result, Vector};

/// Default chart-switch threshold on `‖y‖`.
pub const DEFAULT_SWITCH_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub chart: ChartId,
    pub y: Vector,
    pub ydot: Vector,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// Re-evaluate the closed loop at every RK4 stage.
    #[default]
    PerStage,
    /// Evaluate once per step and hold the acceleration.
    HoldPerStep,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Integrator {
    /// `ÿ = a(y, ẏ)` in chart coordinates.
    Flat,
    /// `ÿ = F − Γ(ẏ, ẏ)` with the force held over the step.
    Geometric(MetricSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSpec {
    pub error_tolerance: f64,
    pub speed_tolerance: f64,
    pub hold_steps: usize,
}

impl Default for ConvergenceSpec {
    fn default() -> Self {
        ConvergenceSpec {
            error_tolerance: 1e-2,
            speed_tolerance: 1e-2,
            hold_steps: 50,
        }
    }
}

/// Per-row diagnostics supplied by a closed-loop system.
#[derive(Debug, Clone, Default)]
pub struct Observation {
    /// Embedded point (sphere) or end-effector position (arm).
    pub x: Option<[f64; 3]>,
    pub h0: Vec<f64>,
    /// Lifted barrier value of BCBF tasks.
    pub h: Vec<Option<f64>>,
    pub goal_error: f64,
    pub speed: f64,
    pub action: Vec<f64>,
    pub qp1_status: String,
    pub qp2_status: String,
    pub slack_max: f64,
    pub warnings: Vec<String>,
}

/// A closed-loop system the integrator can drive.
pub trait ClosedLoop {
    /// Called once per accepted step before any stage is evaluated; actions
    /// are latched here.
    fn begin_step(&mut self, state: &SimState) -> Result<()>;
    /// Configuration acceleration (or force, for geometric integration).
    fn acceleration(&mut self, state: &SimState) -> Result<Vector>;
    /// Diagnostics at a state; called right after [`ClosedLoop::acceleration`]
    /// at the same state.
    fn observe(&mut self, state: &SimState) -> Result<Observation>;
    fn integrator(&self) -> Integrator {
        Integrator::Flat
    }
    fn switch_threshold(&self) -> Option<f64> {
        None
    }
    fn safety_names(&self) -> Vec<String>;
}

fn check_finite(v: &Vector, t: f64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { t })
    }
}

fn stage(state: &SimState, y: Vector, ydot: Vector, dt: f64) -> SimState {
    SimState {
        chart: state.chart.clone(),
        y,
        ydot,
        t: state.t + dt,
    }
}

/// Classical RK4 on `(y, ẏ)` with `ÿ = accel(state)`.
///
/// `first` is the acceleration at `state` if already known.
pub fn rk4_step_flat<F>(
    mut accel: F,
    state: &SimState,
    dt: f64,
    mode: StepMode,
    first: Option<Vector>,
) -> Result<SimState>
where
    F: FnMut(&SimState) -> Result<Vector>,
{
    let a0 = match first {
        Some(a) => a,
        None => accel(state)?,
    };
    check_finite(&a0, state.t)?;
    let (y0, v0) = (&state.y, &state.ydot);
    let (y, ydot) = match mode {
        StepMode::HoldPerStep => (y0 + v0 * dt + &a0 * (0.5 * dt * dt), v0 + &a0 * dt),
        StepMode::PerStage => {
            let h = 0.5 * dt;
            let v1 = v0 + &a0 * h;
            let s1 = stage(state, y0 + v0 * h, v1.clone(), h);
            let a1 = accel(&s1)?;
            check_finite(&a1, s1.t)?;
            let v2 = v0 + &a1 * h;
            let s2 = stage(state, y0 + &v1 * h, v2.clone(), h);
            let a2 = accel(&s2)?;
            check_finite(&a2, s2.t)?;
            let v3 = v0 + &a2 * dt;
            let s3 = stage(state, y0 + &v2 * dt, v3.clone(), dt);
            let a3 = accel(&s3)?;
            check_finite(&a3, s3.t)?;
            let y = y0 + (v0 + &v1 * 2.0 + &v2 * 2.0 + &v3) * (dt / 6.0);
            let ydot = v0 + (&a0 + &a1 * 2.0 + &a2 * 2.0 + &a3) * (dt / 6.0);
            (y, ydot)
        }
    };
    Ok(stage(state, y, ydot, dt))
}

/// RK4 on `ÿ + Γ(ẏ, ẏ) = F` with constant force.
pub fn rk4_step_geometric(
    metric: &MetricSpec,
    state: &SimState,
    force: &Vector,
    dt: f64,
) -> Result<SimState> {
    check_finite(force, state.t)?;
    let accel = |s: &SimState| Ok(force - metric.contract_christoffel(&s.y, &s.ydot, &s.ydot));
    rk4_step_flat(accel, state, dt, StepMode::PerStage, None)
}

/// Re-expresses a stereographic state in the opposite chart when `‖y‖`
/// exceeds the threshold.
pub fn maybe_switch_chart(state: &SimState, threshold: Option<f64>) -> Result<(SimState, bool)> {
    let Some(limit) = threshold else {
        return Ok((state.clone(), false));
    };
    if !state.chart.is_stereo() || state.y.norm() <= limit {
        return Ok((state.clone(), false));
    }
    let to = state.chart.opposite()?;
    let y = geom::transition(&state.chart, &to, &state.y)?;
    let ydot = geom::transition_velocity(&state.chart, &to, &state.y, &state.ydot)?;
    Ok((
        SimState {
            chart: to,
            y,
            ydot,
            t: state.t,
        },
        true,
    ))
}

#[derive(Debug, Clone)]
pub struct TraceRow {
    pub t: f64,
    pub chart: String,
    pub y: Vec<f64>,
    pub ydot: Vec<f64>,
    pub obs: Observation,
}

#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub safety_names: Vec<String>,
    pub rows: Vec<TraceRow>,
    /// Time at which the convergence criterion was met.
    pub converged_at: Option<f64>,
    pub switches: usize,
    /// Distinct warnings, in order of first occurrence.
    pub warnings: Vec<String>,
}

/// A rollout that stopped early, with the rows recorded so far.
#[derive(Debug, thiserror::Error)]
#[error("rollout aborted at t = {t}: {source}")]
pub struct RolloutError {
    pub t: f64,
    #[source]
    pub source: Error,
    pub partial: Box<Trace>,
}

impl Trace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Minimum of `h₀` over time for safety task `i`.
    pub fn min_h0(&self, i: usize) -> f64 {
        self.rows
            .iter()
            .map(|r| r.obs.h0[i])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn embedded(&self) -> Vec<[f64; 3]> {
        self.rows.iter().filter_map(|r| r.obs.x).collect()
    }

    fn push_warning(&mut self, w: &str) {
        if !self.warnings.iter().any(|x| x == w) {
            self.warnings.push(w.to_string());
        }
    }

    pub fn csv_header(&self) -> Vec<String> {
        let Some(first) = self.rows.first() else {
            return vec!["t".into(), "chart".into()];
        };
        let mut h = vec!["t".to_string(), "chart".to_string()];
        h.extend((0..first.y.len()).map(|i| format!("y{i}")));
        h.extend((0..first.ydot.len()).map(|i| format!("yd{i}")));
        if first.obs.x.is_some() {
            h.extend(["x0", "x1", "x2"].map(String::from));
        }
        h.extend(self.safety_names.iter().map(|n| format!("h0_{n}")));
        h.extend(["qp1_status", "qp2_status", "slack_max"].map(String::from));
        h
    }

    /// CSV with floats printed to 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header().join(",");
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:.16e},{}", r.t, r.chart);
            for v in r.y.iter().chain(&r.ydot) {
                let _ = write!(out, ",{v:.16e}");
            }
            if let Some(x) = r.obs.x {
                for v in x {
                    let _ = write!(out, ",{v:.16e}");
                }
            }
            for v in &r.obs.h0 {
                let _ = write!(out, ",{v:.16e}");
            }
            let _ = writeln!(
                out,
                ",{},{},{:.16e}",
                r.obs.qp1_status, r.obs.qp2_status, r.obs.slack_max
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Integrates `system` from `initial` until `t_end` or convergence.
pub fn rollout(
    system: &mut dyn ClosedLoop,
    initial: SimState,
    dt: f64,
    t_end: f64,
    mode: StepMode,
    stop: Option<ConvergenceSpec>,
) -> std::result::Result<Trace, RolloutError> {
    let mut trace = Trace {
        safety_names: system.safety_names(),
        ..Default::default()
    };
    let fail = |trace: Trace, t: f64, source: Error| RolloutError {
        t,
        source,
        partial: Box::new(trace),
    };
    if !(dt > 0.0 && dt <= 0.1) || !(t_end > 0.0) {
        return Err(fail(
            trace,
            initial.t,
            Error::Config {
                path: "dt".into(),
                message: "dt must be in (0, 0.1] and the horizon positive".into(),
            },
        ));
    }
    let steps = (t_end / dt).round() as usize;
    let mut state = initial;
    let mut streak = 0usize;
    let integrator = system.integrator();
    let threshold = system.switch_threshold();
    for k in 0..=steps {
        if let Err(e) = system.begin_step(&state) {
            return Err(fail(trace, state.t, e));
        }
        let a0 = match system.acceleration(&state) {
            Ok(a) => a,
            Err(e) => return Err(fail(trace, state.t, e)),
        };
        let obs = match system.observe(&state) {
            Ok(o) => o,
            Err(e) => return Err(fail(trace, state.t, e)),
        };
        for w in &obs.warnings {
            trace.push_warning(w);
        }
        let done = if let Some(spec) = &stop {
            if obs.goal_error < spec.error_tolerance && obs.speed < spec.speed_tolerance {
                streak += 1;
            } else {
                streak = 0;
            }
            streak >= spec.hold_steps
        } else {
            false
        };
        trace.rows.push(TraceRow {
            t: state.t,
            chart: state.chart.name().to_string(),
            y: state.y.iter().cloned().collect(),
            ydot: state.ydot.iter().cloned().collect(),
            obs,
        });
        if done {
            trace.converged_at = Some(state.t);
            break;
        }
        if k == steps {
            break;
        }
        let next = match &integrator {
            Integrator::Flat => {
                rk4_step_flat(|s| system.acceleration(s), &state, dt, mode, Some(a0))
            }
            Integrator::Geometric(metric) => rk4_step_geometric(metric, &state, &a0, dt),
        };
        let mut next = match next {
            Ok(s) => s,
            Err(e) => return Err(fail(trace, state.t, e)),
        };
        // Keep the time grid exact.
        next.t = (k + 1) as f64 * dt + trace.rows[0].t;
        match maybe_switch_chart(&next, threshold) {
            Ok((s, switched)) => {
                if switched {
                    trace.switches += 1;
                }
                state = s;
            }
            Err(e) => return Err(fail(trace, next.t, e)),
        }
    }
    Ok(trace)
}
