//! Pass/fail checks over built-in scenario outcomes, and fast numerical
//! self-checks.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::geom::{self, ChartId, MetricSpec};
use crate::kinematics::KinematicChain;
use crate::pbds::{self, BehaviorTask, DissipationSpec, PotentialSpec};
use crate::qp::{QpProblem, QpSolver};
use crate::scenarios::{self, Outcome, ScenarioConfig};
use crate::sim::Trace;
use crate::taskmap::TaskMap;
use crate::{numdiff, Matrix, Result, Vector};

/// Safety tolerance on `h₀` for classification.
pub const SAFETY_TOLERANCE: f64 = 1e-3;
/// Pointwise tolerance for trajectories that should coincide.
pub const OVERLAY_TOLERANCE: f64 = 1e-6;
/// Geodesic goal distance counted as converged on the sphere.
pub const SPHERE_GOAL_TOLERANCE: f64 = 1e-2;
/// Minimum separation of trajectories that should differ.
pub const DIVERGENCE_THRESHOLD: f64 = 1e-2;
/// End-effector position error counted as converged for the arm.
pub const ARM_POSITION_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

/// Executed built-ins keyed by id.
pub type Runs = BTreeMap<String, (ScenarioConfig, Outcome)>;

/// Runs built-in scenarios on up to `jobs` threads.
pub fn run_ids(ids: &[&str], jobs: usize) -> Result<Runs> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| crate::Error::Scenario(e.to_string()))?;
    let results: Vec<Result<(String, (ScenarioConfig, Outcome))>> = pool.install(|| {
        ids.par_iter()
            .map(|id| {
                let cfg = scenarios::builtin(id)?;
                let out = scenarios::run(&cfg)?;
                Ok((id.to_string(), (cfg, out)))
            })
            .collect()
    });
    results.into_iter().collect()
}

/// Runs a suite group, optionally writes its traces, and checks it.
pub fn run_group(group: &str, out: Option<&Path>, jobs: usize) -> Result<Vec<CheckResult>> {
    let ids = scenarios::group_ids(group).ok_or_else(|| crate::Error::Config {
        path: "group".into(),
        message: format!("unknown suite group `{group}`"),
    })?;
    let runs = run_ids(&ids, jobs)?;
    if let Some(dir) = out {
        for (cfg, outcome) in runs.values() {
            scenarios::write_outputs(cfg, outcome, dir)?;
        }
    }
    let mut results = aborted_runs(&runs);
    match group {
        "s2" => results.extend(sphere_checks(&runs)),
        "s2-appendix" => results.extend(appendix_checks(&runs)),
        "arm" => results.extend(arm_checks(&runs)),
        _ => {
            results.extend(sphere_checks(&runs));
            results.extend(appendix_checks(&runs));
            results.extend(arm_checks(&runs));
        }
    }
    Ok(results)
}

fn aborted_runs(runs: &Runs) -> Vec<CheckResult> {
    runs.iter()
        .filter_map(|(id, (_, o))| match o {
            Outcome::Rollout { summary, .. } => summary
                .aborted
                .as_ref()
                .map(|m| CheckResult::new(format!("{id} completes"), false, m.clone())),
            Outcome::Batch(_) => None,
        })
        .collect()
}

fn trace<'a>(runs: &'a Runs, id: &str) -> Option<&'a Trace> {
    match runs.get(id) {
        Some((_, Outcome::Rollout { trace, .. })) => Some(trace),
        _ => None,
    }
}

fn dist3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (Vector3::from(*a) - Vector3::from(*b)).norm()
}

/// Largest embedded distance between rows with equal index, and whether the
/// traces have the same length.
pub fn max_pointwise_distance(a: &Trace, b: &Trace) -> (f64, bool) {
    let d = a
        .rows
        .iter()
        .zip(&b.rows)
        .filter_map(|(r, s)| Some(dist3(&r.obs.x?, &s.obs.x?)))
        .fold(0.0, f64::max);
    (d, a.rows.len() == b.rows.len())
}

pub fn min_h0(t: &Trace) -> f64 {
    (0..t.safety_names.len())
        .map(|i| t.min_h0(i))
        .fold(f64::INFINITY, f64::min)
}

fn final_goal_error(t: &Trace) -> f64 {
    t.last().map_or(f64::INFINITY, |r| r.obs.goal_error)
}

/// Time of the first row with `h₀ ≥ 0` and the minimum of `h₀` from then on.
pub fn recovery(t: &Trace) -> Option<(f64, f64)> {
    let k = t
        .rows
        .iter()
        .position(|r| r.obs.h0.iter().all(|&h| h >= 0.0))?;
    let after = t.rows[k..]
        .iter()
        .flat_map(|r| r.obs.h0.iter().copied())
        .fold(f64::INFINITY, f64::min);
    Some((t.rows[k].t, after))
}

/// Largest deviation of embedded points from the plane through the origin
/// spanned by the initial position and velocity.
pub fn great_circle_deviation(t: &Trace) -> f64 {
    let Some(first) = t.rows.first() else {
        return f64::NAN;
    };
    let Some(x0) = first.obs.x else {
        return f64::NAN;
    };
    let chart = chart_from_name(&first.chart);
    let y = Vector::from_column_slice(&first.y);
    let yd = Vector::from_column_slice(&first.ydot);
    let v = match geom::embed_jacobian(&chart, &y) {
        Ok(j) => j * yd,
        Err(_) => return f64::NAN,
    };
    let n = Vector3::from(x0)
        .cross(&Vector3::new(v[0], v[1], v[2]))
        .normalize();
    t.rows
        .iter()
        .filter_map(|r| r.obs.x)
        .map(|x| n.dot(&Vector3::from(x)).abs())
        .fold(0.0, f64::max)
}

fn chart_from_name(name: &str) -> ChartId {
    if name == "south" {
        ChartId::SouthStereo
    } else {
        ChartId::NorthStereo
    }
}

/// Largest change of the embedded speed, divided by the simulated duration.
pub fn speed_drift_rate(t: &Trace) -> f64 {
    let (Some(first), Some(last)) = (t.rows.first(), t.rows.last()) else {
        return f64::NAN;
    };
    let duration = (last.t - first.t).max(f64::MIN_POSITIVE);
    t.rows
        .iter()
        .map(|r| (r.obs.speed - first.obs.speed).abs())
        .fold(0.0, f64::max)
        / duration
}

fn side(runs: &Runs, id: &str) -> Option<f64> {
    match runs.get(id) {
        Some((_, Outcome::Rollout { summary, .. })) => summary.closest_approach.as_ref()?.side,
        _ => None,
    }
}

fn missing(name: &str, ids: &str) -> CheckResult {
    CheckResult::new(name, false, format!("missing run(s) {ids}"))
}

/// Checks on the obstacle scene runs `s2_i` to `s2_xii`.
pub fn sphere_checks(runs: &Runs) -> Vec<CheckResult> {
    let mut out = Vec::new();

    let name = "BCBF metric dependence (ii vs iii)";
    match (trace(runs, "s2_ii"), trace(runs, "s2_iii")) {
        (Some(a), Some(b)) => {
            let (d, _) = max_pointwise_distance(a, b);
            let (ha, hb) = (min_h0(a), min_h0(b));
            let (ga, gb) = (final_goal_error(a), final_goal_error(b));
            out.push(CheckResult::new(
                name,
                d > DIVERGENCE_THRESHOLD
                    && ha >= -SAFETY_TOLERANCE
                    && hb >= -SAFETY_TOLERANCE
                    && ga < SPHERE_GOAL_TOLERANCE
                    && gb < SPHERE_GOAL_TOLERANCE,
                format!("max distance {d:.3e}; min h0 {ha:.3e} / {hb:.3e}; goal error {ga:.3e} / {gb:.3e}"),
            ));
        }
        _ => out.push(missing(name, "s2_ii, s2_iii")),
    }

    for (a, b) in [("s2_iv", "s2_i"), ("s2_v", "s2_ii"), ("s2_xii", "s2_x")] {
        let name = format!("chart invariance ({a} vs {b})");
        match (trace(runs, a), trace(runs, b)) {
            (Some(ta), Some(tb)) => {
                let (d, same_len) = max_pointwise_distance(ta, tb);
                let switches = ta.switches;
                out.push(CheckResult::new(
                    name,
                    d < OVERLAY_TOLERANCE && same_len,
                    format!(
                        "max distance {d:.3e}, {} vs {} rows, {switches} chart switches",
                        ta.rows.len(),
                        tb.rows.len()
                    ),
                ));
            }
            _ => out.push(missing(&name, &format!("{a}, {b}"))),
        }
    }

    let safe = [
        "s2_i", "s2_ii", "s2_iii", "s2_iv", "s2_v", "s2_viii", "s2_ix", "s2_x", "s2_xi", "s2_xii",
    ];
    let mut worst = (f64::INFINITY, "");
    let mut present = 0;
    for id in safe {
        if let Some(t) = trace(runs, id) {
            present += 1;
            let h = min_h0(t);
            if h < worst.0 {
                worst = (h, id);
            }
        }
    }
    out.push(CheckResult::new(
        "safe-start runs keep h0 >= -1e-3",
        present == safe.len() && worst.0 >= -SAFETY_TOLERANCE,
        format!(
            "{present}/{} runs, worst min h0 {:.3e} ({})",
            safe.len(),
            worst.0,
            worst.1
        ),
    ));

    for id in ["s2_vi", "s2_vii"] {
        let name = format!("recovery ({id})");
        match trace(runs, id) {
            Some(t) => {
                let h_start = t.rows.first().map_or(f64::NAN, |r| r.obs.h0[0]);
                let rec = recovery(t);
                let g = final_goal_error(t);
                let passed = h_start < 0.0
                    && rec.is_some_and(|(_, after)| after >= -SAFETY_TOLERANCE)
                    && g < SPHERE_GOAL_TOLERANCE;
                let detail = match rec {
                    Some((tc, after)) => format!(
                        "h0(0) = {h_start:.3e}, crosses h0 = 0 at t = {tc:.3} s, min h0 afterwards {after:.3e}, goal error {g:.3e}"
                    ),
                    None => format!("h0(0) = {h_start:.3e}, never crosses h0 = 0"),
                };
                out.push(CheckResult::new(name, passed, detail));
            }
            None => out.push(missing(&name, id)),
        }
    }

    let name = "opposite actions select opposite sides (ix vs x)";
    match (trace(runs, "s2_ix"), trace(runs, "s2_x")) {
        (Some(a), Some(b)) => {
            let (sa, sb) = (side(runs, "s2_ix"), side(runs, "s2_x"));
            let (ga, gb) = (final_goal_error(a), final_goal_error(b));
            let opposite = matches!((sa, sb), (Some(p), Some(q)) if p * q < 0.0);
            out.push(CheckResult::new(
                name,
                opposite && ga < SPHERE_GOAL_TOLERANCE && gb < SPHERE_GOAL_TOLERANCE,
                format!("sides {sa:?} / {sb:?}; goal error {ga:.3e} / {gb:.3e}"),
            ));
        }
        _ => out.push(missing(name, "s2_ix, s2_x")),
    }
    out
}

/// Checks on the free-motion runs `s2_app_a` to `s2_app_f`.
pub fn appendix_checks(runs: &Runs) -> Vec<CheckResult> {
    let mut out = Vec::new();
    for (a, b) in [
        ("s2_app_a", "s2_app_c"),
        ("s2_app_e", "s2_app_f"),
        ("s2_app_a", "s2_app_e"),
        ("s2_app_c", "s2_app_f"),
    ] {
        let name = format!("overlay ({a} vs {b})");
        match (trace(runs, a), trace(runs, b)) {
            (Some(ta), Some(tb)) => {
                let (d, same_len) = max_pointwise_distance(ta, tb);
                out.push(CheckResult::new(
                    name,
                    d < OVERLAY_TOLERANCE && same_len,
                    format!("max distance {d:.3e}"),
                ));
            }
            _ => out.push(missing(&name, &format!("{a}, {b}"))),
        }
    }
    for id in ["s2_app_b", "s2_app_d"] {
        let name = format!("flat run leaves the great circle ({id})");
        match trace(runs, id) {
            Some(t) => {
                let d = great_circle_deviation(t);
                out.push(CheckResult::new(
                    name,
                    d > DIVERGENCE_THRESHOLD,
                    format!("max deviation {d:.3e}"),
                ));
            }
            None => out.push(missing(&name, id)),
        }
    }
    for id in ["s2_app_a", "s2_app_c", "s2_app_e", "s2_app_f"] {
        let name = format!("constant embedded speed ({id})");
        match trace(runs, id) {
            Some(t) => {
                let rate = speed_drift_rate(t);
                let dev = great_circle_deviation(t);
                out.push(CheckResult::new(
                    name,
                    rate < OVERLAY_TOLERANCE,
                    format!("speed drift {rate:.3e} per second, great-circle deviation {dev:.3e}"),
                ));
            }
            None => out.push(missing(&name, id)),
        }
    }
    out
}

fn batch<'a>(runs: &'a Runs, id: &str) -> Option<&'a scenarios::BatchReport> {
    match runs.get(id) {
        Some((_, Outcome::Batch(r))) => Some(r),
        _ => None,
    }
}

/// Checks on the arm runs.
pub fn arm_checks(runs: &Runs) -> Vec<CheckResult> {
    let mut out = Vec::new();

    let name = "arm pose run converges safely";
    match runs.get("arm_pose") {
        Some((_, Outcome::Rollout { summary, .. })) => {
            let h = summary.min_h_obs.unwrap_or(f64::NAN);
            out.push(CheckResult::new(
                name,
                summary.converged_at.is_some() && h >= 0.0,
                format!(
                    "converged at {:?} s, goal error {:.3e}, min h_obs {h:.4}",
                    summary.converged_at, summary.final_goal_error
                ),
            ));
        }
        _ => out.push(missing(name, "arm_pose")),
    }

    let name = "arm homotopy classes (plus vs minus)";
    match (
        runs.get("arm_homotopy_plus"),
        runs.get("arm_homotopy_minus"),
    ) {
        (
            Some((_, Outcome::Rollout { summary: p, .. })),
            Some((_, Outcome::Rollout { summary: m, .. })),
        ) => {
            let sp = p.closest_approach.as_ref().and_then(|c| c.side);
            let sm = m.closest_approach.as_ref().and_then(|c| c.side);
            let jp = p.closest_approach.as_ref().map(|c| c.displacement[0]);
            let jm = m.closest_approach.as_ref().map(|c| c.displacement[0]);
            let opposite = matches!((sp, sm), (Some(a), Some(b)) if a * b < 0.0)
                && matches!((jp, jm), (Some(a), Some(b)) if a * b < 0.0);
            let hp = p.min_h_obs.unwrap_or(f64::NAN);
            let hm = m.min_h_obs.unwrap_or(f64::NAN);
            let passed = opposite
                && p.final_goal_error < ARM_POSITION_TOLERANCE
                && m.final_goal_error < ARM_POSITION_TOLERANCE
                && hp >= 0.0
                && hm >= 0.0;
            out.push(CheckResult::new(
                name,
                passed,
                format!(
                    "sides {sp:?} / {sm:?}, joint 1 shift {jp:?} / {jm:?}, position error {:.3e} / {:.3e}, min h_obs {hp:.4} / {hm:.4}",
                    p.final_goal_error, m.final_goal_error
                ),
            ));
        }
        _ => out.push(missing(name, "arm_homotopy_plus, arm_homotopy_minus")),
    }

    let name = "orientation batch (full vs ablation)";
    match (
        batch(runs, "arm_so3_batch"),
        batch(runs, "arm_so3_batch_ablation"),
    ) {
        (Some(full), Some(abl)) => {
            let passed = full.violations == 0
                && abl.violations >= 1
                && full.converged == full.count
                && abl.converged == abl.count;
            out.push(CheckResult::new(
                name,
                passed,
                format!(
                    "violations {} / {}, converged {}/{} and {}/{}, min h_obs {:.4} / {:.4}",
                    full.violations,
                    abl.violations,
                    full.converged,
                    full.count,
                    abl.converged,
                    abl.count,
                    full.min_h_obs,
                    abl.min_h_obs
                ),
            ));
        }
        _ => out.push(missing(name, "arm_so3_batch, arm_so3_batch_ablation")),
    }
    out
}

fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    Vector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Fast randomized checks of derivatives, charts and the QP solver.
pub fn self_checks(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let y = random_vector(&mut rng, 2, 2.0);
        for chart in [ChartId::NorthStereo, ChartId::SouthStereo] {
            let j = geom::embed_jacobian(&chart, &y).expect("stereographic chart");
            let fd = numdiff::jacobian(
                |p| {
                    let x = geom::embed(&chart, p).expect("stereographic chart");
                    Vector::from_column_slice(x.as_slice())
                },
                &y,
                numdiff::JACOBIAN_STEP,
            );
            worst = worst.max(max_abs(&(j - fd)));
        }
    }
    out.push(CheckResult::new(
        "stereographic Jacobian vs finite differences",
        worst < 1e-6,
        format!("max error {worst:.3e}"),
    ));

    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let y = random_vector(&mut rng, 2, 3.0);
        if y.norm() < 1e-3 {
            continue;
        }
        let back = geom::transition(
            &ChartId::SouthStereo,
            &ChartId::NorthStereo,
            &geom::transition(&ChartId::NorthStereo, &ChartId::SouthStereo, &y).expect("nonzero"),
        )
        .expect("nonzero");
        let xn = geom::embed(&ChartId::NorthStereo, &y).expect("north");
        let ys =
            geom::transition(&ChartId::NorthStereo, &ChartId::SouthStereo, &y).expect("nonzero");
        let xs = geom::embed(&ChartId::SouthStereo, &ys).expect("south");
        worst = worst.max((back - &y).norm()).max((xn - xs).norm());
    }
    out.push(CheckResult::new(
        "chart transition consistency",
        worst < 1e-10,
        format!("max error {worst:.3e}"),
    ));

    let mut worst: f64 = 0.0;
    let metric = MetricSpec::RoundStereographic;
    for _ in 0..50 {
        let y = random_vector(&mut rng, 2, 2.0);
        let ge = metric.eval(&y);
        let dg: Vec<Matrix> = (0..2)
            .map(|l| {
                let mut e = Vector::zeros(2);
                e[l] = 1.0;
                numdiff::directional_matrix(
                    |p| metric.metric_matrix(p),
                    &y,
                    &e,
                    numdiff::GRADIENT_STEP,
                )
            })
            .collect();
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut s = 0.0;
                    for l in 0..2 {
                        s += 0.5
                            * ge.g_inv[(k, l)]
                            * (dg[i][(l, j)] + dg[j][(l, i)] - dg[l][(i, j)]);
                    }
                    worst = worst.max((s - ge.christoffel.get(k, i, j)).abs());
                }
            }
        }
    }
    out.push(CheckResult::new(
        "round Christoffel symbols vs Levi-Civita formula",
        worst < 1e-6,
        format!("max error {worst:.3e}"),
    ));

    let chain = std::sync::Arc::new(KinematicChain::panda_like());
    let map = TaskMap::ChainPosition {
        chain: chain.clone(),
        frame: chain.end_effector().clone(),
    };
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let q = chain.home() + random_vector(&mut rng, chain.dof(), 1.0);
        let j = map.jacobian(&q).expect("valid map");
        let fd = numdiff::jacobian(
            |p| map.eval(p).expect("valid map"),
            &q,
            numdiff::JACOBIAN_STEP,
        );
        worst = worst.max(max_abs(&(j - fd)));
    }
    out.push(CheckResult::new(
        "end-effector Jacobian vs finite differences",
        worst < 1e-6,
        format!("max error {worst:.3e}"),
    ));

    let solver = QpSolver::default();
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..=5);
        let m = rng.random_range(0..=8);
        let a = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let h = a.transpose() * a + Matrix::identity(n, n) * 1e-2;
        let f = random_vector(&mut rng, n, 1.0);
        let c = Matrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let x0 = random_vector(&mut rng, n, 1.0);
        let d = &c * &x0 - Vector::from_fn(m, |_, _| rng.random_range(0.0..1.0));
        let p = QpProblem {
            h,
            f,
            c,
            d,
            warm_start: None,
        };
        match solver.solve(&p) {
            Ok(s) => worst = worst.max(s.kkt_residual),
            Err(_) => failures += 1,
        }
    }
    out.push(CheckResult::new(
        "QP KKT residual on feasible random instances",
        failures == 0 && worst < 1e-8,
        format!("max residual {worst:.3e}, {failures} failures"),
    ));

    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let y = random_vector(&mut rng, 2, 1.5);
        let v = random_vector(&mut rng, 2, 1.0);
        let tasks = vec![
            BehaviorTask {
                name: "embedding".into(),
                map: TaskMap::StereoEmbedding {
                    chart: ChartId::NorthStereo,
                },
                metric: MetricSpec::flat(3),
                potential: PotentialSpec::Quadratic {
                    center: vec![0.0, 1.0, 0.0],
                    gain: 4.0,
                },
                dissipation: DissipationSpec::Linear { gain: 4.0 },
                weight: 1.0,
            },
            BehaviorTask {
                name: "chart".into(),
                map: TaskMap::Identity { dim: 2 },
                metric: MetricSpec::RoundStereographic,
                potential: PotentialSpec::None,
                dissipation: DissipationSpec::Linear { gain: 1.0 },
                weight: 0.5,
            },
        ];
        let closed = pbds::closed_form_accel(&tasks, &y, &v).expect("valid tasks");
        let lin: Vec<_> = tasks
            .iter()
            .map(|t| t.linearize(&y, &v).expect("valid tasks"))
            .collect();
        let (h, f) = pbds::normal_equations(&lin, 2);
        let s = solver
            .solve(&QpProblem::unconstrained(h, f))
            .expect("convex");
        worst = worst.max((closed.accel - s.a).norm());
    }
    out.push(CheckResult::new(
        "closed-form blend equals the unconstrained QP",
        worst < 1e-9,
        format!("max difference {worst:.3e}"),
    ));
    out
}
