//! Built-in experiments, the JSON scenario schema and trace output.
//!
//! A scenario is either a single rollout (sphere or arm) or a seeded batch of
//! arm rollouts. [`run`] executes one and [`write_outputs`] stores
//! `<id>.csv` and a `<id>.json` sidecar holding the configuration echo and a
//! summary.

pub mod arm;
pub mod batch;
pub mod builtin;
pub mod config;
pub mod sphere;

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::Serialize;

pub use arm::ArmSystem;
pub use batch::{BatchReport, BatchRun, BatchSample};
pub use builtin::{builtin, builtin_ids, group_ids};
pub use config::{parse_config, ScenarioConfig, SystemConfig};
pub use sphere::SphereSystem;

use crate::sim::{self, ClosedLoop, SimState, Trace};
use crate::{Error, Result};

/// Environment variable overriding the default output directory.
pub const OUTPUT_ENV: &str = "GEOPOLICY_OUT";

/// A single-rollout system built from a configuration.
pub enum Scene {
    Sphere(SphereSystem),
    Arm(ArmSystem),
}

impl Scene {
    pub fn closed_loop(&mut self) -> &mut dyn ClosedLoop {
        match self {
            Scene::Sphere(s) => s,
            Scene::Arm(a) => a,
        }
    }

    fn side_reference(&self) -> Option<[[f64; 3]; 3]> {
        match self {
            Scene::Sphere(s) => s.side_reference(),
            Scene::Arm(a) => a.side_reference(),
        }
    }

    fn build_warnings(&self) -> Vec<String> {
        match self {
            Scene::Sphere(s) => s.build_warnings.clone(),
            Scene::Arm(_) => Vec::new(),
        }
    }
}

/// Builds the closed-loop system and initial state of a single-rollout
/// scenario.
pub fn build(cfg: &ScenarioConfig) -> Result<(Scene, SimState)> {
    match &cfg.system {
        SystemConfig::Sphere(s) => {
            let (sys, init) = SphereSystem::new(s)?;
            Ok((Scene::Sphere(sys), init))
        }
        SystemConfig::Arm(a) => {
            let (sys, init) = ArmSystem::new(a)?;
            Ok((Scene::Arm(sys), init))
        }
        SystemConfig::ArmBatch(_) => Err(Error::Scenario(format!(
            "`{}` is a batch scenario and has no single rollout",
            cfg.id
        ))),
    }
}

/// Point of minimum obstacle distance along a rollout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosestApproach {
    pub t: f64,
    pub h0: f64,
    /// Signed distance of the tracked point from the plane through the start,
    /// the goal and the obstacle center.
    pub side: Option<f64>,
    /// Configuration change since the start, at the closest approach.
    pub displacement: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyMinimum {
    pub name: String,
    pub min_h0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub id: String,
    pub steps: usize,
    pub t_final: f64,
    pub converged_at: Option<f64>,
    pub final_goal_error: f64,
    pub final_speed: f64,
    pub safety: Vec<SafetyMinimum>,
    /// Minimum over the obstacle distance columns.
    pub min_h_obs: Option<f64>,
    pub closest_approach: Option<ClosestApproach>,
    pub switches: usize,
    pub relaxed_steps: usize,
    pub warnings: Vec<String>,
    /// Set when the rollout aborted; the trace holds the rows recorded so far.
    pub aborted: Option<String>,
}

/// Result of executing a scenario.
#[derive(Debug, Clone)]
pub enum Outcome {
    Rollout { trace: Trace, summary: RunSummary },
    Batch(BatchReport),
}

fn is_obstacle(name: &str) -> bool {
    name.starts_with("obs")
}

/// Signed distance of `p` from the plane through `a`, `b` and `c`.
pub fn side_of_plane(reference: &[[f64; 3]; 3], p: &[f64; 3]) -> Option<f64> {
    let [a, b, c] = reference.map(Vector3::from);
    let n = (b - a).cross(&(c - a));
    let len = n.norm();
    (len > 1e-12).then(|| n.dot(&(Vector3::from(*p) - a)) / len)
}

/// Summarizes a trace; `reference` defines the side classifier plane.
pub fn summarize(id: &str, trace: &Trace, reference: Option<[[f64; 3]; 3]>) -> RunSummary {
    let last = trace.last();
    let safety = trace
        .safety_names
        .iter()
        .enumerate()
        .map(|(i, n)| SafetyMinimum {
            name: n.clone(),
            min_h0: trace.min_h0(i),
        })
        .collect::<Vec<_>>();
    let obstacle_cols: Vec<usize> = (0..trace.safety_names.len())
        .filter(|&i| is_obstacle(&trace.safety_names[i]))
        .collect();
    let mut min_h_obs = None;
    let mut closest = None;
    if !obstacle_cols.is_empty() {
        let mut best = (f64::INFINITY, 0usize);
        for (k, r) in trace.rows.iter().enumerate() {
            for &i in &obstacle_cols {
                if r.obs.h0[i] < best.0 {
                    best = (r.obs.h0[i], k);
                }
            }
        }
        if best.0.is_finite() {
            min_h_obs = Some(best.0);
            let row = &trace.rows[best.1];
            let first = &trace.rows[0];
            closest = Some(ClosestApproach {
                t: row.t,
                h0: best.0,
                side: match (reference, row.obs.x) {
                    (Some(r), Some(x)) => side_of_plane(&r, &x),
                    _ => None,
                },
                displacement: row.y.iter().zip(&first.y).map(|(a, b)| a - b).collect(),
            });
        }
    }
    RunSummary {
        id: id.to_string(),
        steps: trace.rows.len(),
        t_final: last.map_or(0.0, |r| r.t),
        converged_at: trace.converged_at,
        final_goal_error: last.map_or(f64::NAN, |r| r.obs.goal_error),
        final_speed: last.map_or(f64::NAN, |r| r.obs.speed),
        safety,
        min_h_obs,
        closest_approach: closest,
        switches: trace.switches,
        relaxed_steps: trace
            .rows
            .iter()
            .filter(|r| r.obs.qp1_status == "relaxed" || r.obs.qp2_status == "relaxed")
            .count(),
        warnings: trace.warnings.clone(),
        aborted: None,
    }
}

/// Runs a single-rollout scenario. An aborted rollout is reported through
/// [`RunSummary::aborted`] together with its partial trace.
pub fn run_rollout(cfg: &ScenarioConfig) -> Result<(Trace, RunSummary)> {
    let (mut scene, initial) = build(cfg)?;
    let result = sim::rollout(
        scene.closed_loop(),
        initial,
        cfg.dt,
        cfg.horizon,
        cfg.step_mode,
        cfg.convergence,
    );
    let (mut trace, aborted) = match result {
        Ok(t) => (t, None),
        Err(e) => {
            let msg = e.to_string();
            (*e.partial, Some(msg))
        }
    };
    for w in scene.build_warnings().into_iter().rev() {
        if !trace.warnings.contains(&w) {
            trace.warnings.insert(0, w);
        }
    }
    let mut summary = summarize(&cfg.id, &trace, scene.side_reference());
    summary.aborted = aborted;
    Ok((trace, summary))
}

pub fn run(cfg: &ScenarioConfig) -> Result<Outcome> {
    cfg.validate()?;
    match &cfg.system {
        SystemConfig::ArmBatch(b) => Ok(Outcome::Batch(batch::run_batch(cfg, b)?)),
        _ => {
            let (trace, summary) = run_rollout(cfg)?;
            Ok(Outcome::Rollout { trace, summary })
        }
    }
}

/// Resolves a built-in id or reads a configuration file.
pub fn load(id_or_path: &str) -> Result<ScenarioConfig> {
    match builtin(id_or_path) {
        Ok(cfg) => Ok(cfg),
        Err(Error::UnknownScenario(_)) if Path::new(id_or_path).is_file() => {
            parse_config(&std::fs::read_to_string(id_or_path)?)
        }
        Err(e) => Err(e),
    }
}

#[derive(Serialize)]
struct Sidecar<'a, S: Serialize> {
    config: &'a ScenarioConfig,
    summary: &'a S,
}

/// Writes `<id>.csv` and `<id>.json` into `dir`, creating it if needed.
pub fn write_outputs(cfg: &ScenarioConfig, outcome: &Outcome, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let csv = dir.join(format!("{}.csv", cfg.id));
    let json = dir.join(format!("{}.json", cfg.id));
    match outcome {
        Outcome::Rollout { trace, summary } => {
            trace.write_csv(&csv)?;
            let text = serde_json::to_string_pretty(&Sidecar {
                config: cfg,
                summary,
            })?;
            std::fs::write(&json, text + "\n")?;
        }
        Outcome::Batch(report) => {
            std::fs::write(&csv, report.to_csv())?;
            let text = serde_json::to_string_pretty(&Sidecar {
                config: cfg,
                summary: report,
            })?;
            std::fs::write(&json, text + "\n")?;
        }
    }
    Ok(vec![csv, json])
}
