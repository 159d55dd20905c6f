//! Seeded batches of random orientation-reaching runs around an obstacle.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::arm::{self, ArmSystem};
use super::config::{BatchConfig, Obstacle, OrientationGoal, ScenarioConfig};
use crate::sim::{self, Trace};
use crate::{Error, Result};

/// One accepted random scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSample {
    pub axis: [f64; 3],
    pub degrees: f64,
    pub obstacle_center: [f64; 3],
    /// Minimum link-to-obstacle distance at the start configuration.
    pub start_clearance: f64,
    /// Draws needed to accept this sample.
    pub attempts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRun {
    pub index: usize,
    pub sample: BatchSample,
    pub min_h_obs: f64,
    pub final_chord: f64,
    pub converged: bool,
    pub violated: bool,
    pub t_final: f64,
    pub steps: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub id: String,
    pub seed: u64,
    pub count: usize,
    pub ablate_obstacle_cbf: bool,
    pub violations: usize,
    pub converged: usize,
    pub min_h_obs: f64,
    pub runs: Vec<BatchRun>,
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn in_ball(rng: &mut ChaCha8Rng, radius: f64) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm() <= 1.0 {
            return v * radius;
        }
    }
}

/// Draws `count` scenarios, redrawing any whose start clearance is too small.
pub fn sample_batch(batch: &BatchConfig, seed: u64) -> Result<Vec<BatchSample>> {
    let chain = arm::load_chain(&batch.arm)?;
    let start = match &batch.arm.start {
        Some(q) => crate::Vector::from_column_slice(q),
        None => chain.home(),
    };
    let (p0, _) = chain.ee_pose(&start);
    let base = p0 + Vector3::from(batch.placement_offset);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lo, hi] = batch.rotation_degrees;
    let mut out = Vec::with_capacity(batch.count);
    for i in 0..batch.count {
        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > batch.max_attempts {
                return Err(Error::Config {
                    path: "system.arm_batch.max_attempts".into(),
                    message: format!(
                        "no admissible obstacle for sample {i} after {} draws",
                        batch.max_attempts
                    ),
                });
            }
            let axis = unit_vector(&mut rng);
            let degrees = if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            };
            let center = base + in_ball(&mut rng, batch.placement_radius);
            let clearance = arm::link_distances(&chain, &start, &center, batch.obstacle_radius)
                .into_iter()
                .fold(f64::INFINITY, f64::min);
            if clearance >= batch.min_clearance {
                out.push(BatchSample {
                    axis: axis.into(),
                    degrees,
                    obstacle_center: center.into(),
                    start_clearance: clearance,
                    attempts,
                });
                break;
            }
        }
    }
    Ok(out)
}

fn obstacle_minimum(trace: &Trace) -> f64 {
    let cols: Vec<usize> = trace
        .safety_names
        .iter()
        .enumerate()
        .filter(|(_, n)| n.starts_with("obs_"))
        .map(|(i, _)| i)
        .collect();
    trace
        .rows
        .iter()
        .flat_map(|r| cols.iter().map(move |&i| r.obs.h0[i]))
        .fold(f64::INFINITY, f64::min)
}

fn run_one(
    scenario: &ScenarioConfig,
    batch: &BatchConfig,
    index: usize,
    sample: &BatchSample,
) -> BatchRun {
    let mut cfg = batch.arm.clone();
    cfg.goal_orientation = Some(OrientationGoal::RelativeAxisAngle {
        axis: sample.axis,
        degrees: sample.degrees,
    });
    cfg.obstacle = Some(Obstacle {
        center: sample.obstacle_center,
        radius: batch.obstacle_radius,
    });
    cfg.obstacle_cbf = !batch.ablate_obstacle_cbf;
    let mut run = BatchRun {
        index,
        sample: sample.clone(),
        min_h_obs: f64::NAN,
        final_chord: f64::NAN,
        converged: false,
        violated: false,
        t_final: 0.0,
        steps: 0,
        error: None,
    };
    let (mut system, initial) = match ArmSystem::new(&cfg) {
        Ok(s) => s,
        Err(e) => {
            run.error = Some(e.to_string());
            return run;
        }
    };
    let result = sim::rollout(
        &mut system,
        initial,
        scenario.dt,
        scenario.horizon,
        scenario.step_mode,
        scenario.convergence,
    );
    let trace = match result {
        Ok(t) => t,
        Err(e) => {
            run.error = Some(e.to_string());
            *e.partial
        }
    };
    if let Some(last) = trace.last() {
        let q = crate::Vector::from_column_slice(&last.y);
        run.final_chord = system.errors(&q).0.unwrap_or(f64::NAN);
        run.t_final = last.t;
    }
    run.steps = trace.rows.len();
    run.min_h_obs = obstacle_minimum(&trace);
    run.converged = run.error.is_none() && run.final_chord < batch.chord_tolerance;
    run.violated = run.min_h_obs < 0.0;
    run
}

/// Samples and runs a batch; runs execute in parallel and are reported in
/// sample order.
pub fn run_batch(scenario: &ScenarioConfig, batch: &BatchConfig) -> Result<BatchReport> {
    let samples = sample_batch(batch, scenario.seed)?;
    let runs: Vec<BatchRun> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| run_one(scenario, batch, i, s))
        .collect();
    Ok(BatchReport {
        id: scenario.id.clone(),
        seed: scenario.seed,
        count: batch.count,
        ablate_obstacle_cbf: batch.ablate_obstacle_cbf,
        violations: runs.iter().filter(|r| r.violated).count(),
        converged: runs.iter().filter(|r| r.converged).count(),
        min_h_obs: runs
            .iter()
            .map(|r| r.min_h_obs)
            .fold(f64::INFINITY, f64::min),
        runs,
    })
}

impl BatchReport {
    /// One line per run.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,degrees,axis0,axis1,axis2,obs0,obs1,obs2,start_clearance,min_h_obs,final_chord,converged,violated,t_final\n");
        for r in &self.runs {
            let s = &r.sample;
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{:.16e}\n",
                r.index,
                s.degrees,
                s.axis[0],
                s.axis[1],
                s.axis[2],
                s.obstacle_center[0],
                s.obstacle_center[1],
                s.obstacle_center[2],
                s.start_clearance,
                r.min_h_obs,
                r.final_chord,
                r.converged,
                r.violated,
                r.t_final
            ));
        }
        out
    }
}
