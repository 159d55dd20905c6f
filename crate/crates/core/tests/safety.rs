mod common;

use std::sync::Arc;

use common::{fd_hessian, fd_jacobian, random_unit3, random_vector, stereo_embed};
use geopolicy::geom::{self, ChartId, MetricSpec};
use geopolicy::kinematics::KinematicChain;
use geopolicy::safety::{
    self, BarrierKind, BcbfTask, EcbfTask, InitialCheck, NominalField, SafetyFunction,
};
use geopolicy::taskmap::TaskMap;
use geopolicy::Vector;
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn obstacle_ecbf(chart: ChartId, center: Vector3<f64>, radius: f64, poles: (f64, f64)) -> EcbfTask {
    EcbfTask {
        name: "obstacle".into(),
        map: TaskMap::StereoEmbedding { chart },
        h0: SafetyFunction::new(BarrierKind::ArcDistS2 {
            center: center.into(),
            radius,
        }),
        poles,
    }
}

fn obstacle_bcbf(chart: ChartId, metric: MetricSpec, center: Vector3<f64>) -> BcbfTask {
    BcbfTask {
        name: "obstacle".into(),
        map: TaskMap::Identity { dim: 2 },
        h0: SafetyFunction::new(BarrierKind::ArcDistS2InChart {
            chart,
            center: center.into(),
            radius: 0.5,
        }),
        metric,
        nominal: NominalField::Zero,
        alpha_gain: 1.0,
        delta: 0.1,
        epsilon: 0.5,
    }
}

/// Scalar oracle `arccos(φ⁻¹(y) · c) − r`.
fn composite(sign: f64, c: Vector3<f64>, r: f64) -> impl Fn(&Vector) -> f64 {
    move |y| stereo_embed(sign, y).dot(&c).clamp(-1.0, 1.0).acos() - r
}

/// Random chart point whose embedding is at least `min_dist` from `c` and
/// away from its antipode.
fn point_away_from(rng: &mut ChaCha8Rng, c: &Vector3<f64>, min_dist: f64) -> Vector {
    loop {
        let y = random_vector(rng, 2, 1.8);
        let d = stereo_embed(1.0, &y).dot(c).clamp(-1.0, 1.0).acos();
        if d > min_dist && d < std::f64::consts::PI - 0.2 {
            return y;
        }
    }
}

#[test]
fn sphere_ecbf_row_matches_finite_difference_assembly() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let poles = (2.0, 4.0);
    let (k1, k2) = (poles.0 * poles.1, poles.0 + poles.1);
    for _ in 0..100 {
        let c = random_unit3(&mut rng);
        let y = point_away_from(&mut rng, &c, 0.2);
        let v = random_vector(&mut rng, 2, 1.0);
        let task = obstacle_ecbf(ChartId::NorthStereo, c, 0.3, poles);
        let eval = task.row(&y, &v).unwrap();
        let row = eval.row.unwrap();
        let h = composite(1.0, c, 0.3);
        let grad = fd_jacobian(|p| Vector::from_element(1, h(p)), &y, 1e-6)
            .row(0)
            .transpose();
        let hess = fd_hessian(&h, &y, 1e-4);
        let h0_dot = grad.dot(&v);
        let rhs = -v.dot(&(&hess * &v)) - k2 * h0_dot - k1 * h(&y);
        assert!((&row.coeffs - &grad).amax() < 1e-4);
        assert!((row.rhs - rhs).abs() < 1e-4 * (1.0 + rhs.abs()));
        assert!((eval.h0 - h(&y)).abs() < 1e-12);
        assert!((eval.h0_dot - h0_dot).abs() < 1e-6);
    }
}

#[test]
fn joint_limit_row_is_affine() {
    let task = EcbfTask {
        name: "q3_lower".into(),
        map: TaskMap::CoordinateProjection { dim: 4, index: 2 },
        h0: SafetyFunction::new(BarrierKind::LowerBound { limit: -1.0 }),
        poles: (3.0, 5.0),
    };
    let s = Vector::from_vec(vec![0.1, 0.2, -0.4, 0.0]);
    let v = Vector::from_vec(vec![1.0, -1.0, -0.7, 2.0]);
    let row = task.row(&s, &v).unwrap().row.unwrap();
    assert_eq!(row.coeffs, Vector::from_vec(vec![0.0, 0.0, 1.0, 0.0]));
    let expected = -8.0 * -0.7 - 15.0 * 0.6;
    assert!((row.rhs - expected).abs() < 1e-12);

    // At rest on the boundary the constraint is c · σ̈ ≥ 0.
    let s = Vector::from_vec(vec![0.0, 0.0, -1.0, 0.0]);
    let row = task.row(&s, &Vector::zeros(4)).unwrap().row.unwrap();
    assert_eq!(row.rhs, 0.0);
}

#[test]
fn arm_capsule_row_matches_finite_differences() {
    let chain = Arc::new(KinematicChain::panda_like());
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for link in 0..chain.capsules().len() {
        let map = TaskMap::CapsuleSphereDistance {
            chain: chain.clone(),
            link,
            center: Vector3::new(0.45, 0.25, 0.45),
            radius: 0.05,
        };
        let task = EcbfTask {
            name: "obs".into(),
            map: map.clone(),
            h0: SafetyFunction::new(BarrierKind::SignedDistanceMargin { margin: 0.01 }),
            poles: (4.0, 8.0),
        };
        for _ in 0..10 {
            let q = chain.home() + random_vector(&mut rng, 7, 0.5);
            let v = random_vector(&mut rng, 7, 1.0);
            let eval = task.row(&q, &v).unwrap();
            let Some(row) = eval.row else { continue };
            let h = |p: &Vector| map.eval(p).unwrap()[0] - 0.01;
            let grad = fd_jacobian(|p| Vector::from_element(1, h(p)), &q, 1e-6)
                .row(0)
                .transpose();
            let hess = fd_hessian(h, &q, 1e-4);
            let rhs = -v.dot(&(&hess * &v)) - 12.0 * grad.dot(&v) - 32.0 * h(&q);
            assert!((&row.coeffs - &grad).amax() < 1e-5);
            assert!(
                (row.rhs - rhs).abs() < 1e-3 * (1.0 + rhs.abs()),
                "link {link}: {} vs {rhs}",
                row.rhs
            );
        }
    }
}

#[test]
fn ecbf_initial_check_cases() {
    assert_eq!(safety::ecbf_initial_check(1.0, 0.5, 0.0), InitialCheck::Ok);
    assert_eq!(
        safety::ecbf_initial_check(1.0, 0.5, -1.0),
        InitialCheck::Warn { required_p1: 2.0 }
    );
    assert_eq!(
        safety::ecbf_initial_check(1.0, -0.1, -1.0),
        InitialCheck::Vacuous
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn envelope_solves_the_comparison_ode(p1 in 0.5f64..5.0, gap in 0.0f64..3.0, h0 in -1.0f64..1.0, h0_dot in -2.0f64..2.0, t in 0.0f64..3.0) {
        let poles = (p1, p1 + gap);
        let (k1, k2) = (poles.0 * poles.1, poles.0 + poles.1);
        let e = |s: f64| safety::ecbf_envelope(poles, h0, h0_dot, s);
        let d = 1e-4;
        prop_assert!((e(0.0) - h0).abs() < 1e-12);
        prop_assert!(((e(d) - e(-d)) / (2.0 * d) - h0_dot).abs() < 1e-5 * (1.0 + h0_dot.abs()));
        let t = t + 2.0 * d;
        let first = (e(t + d) - e(t - d)) / (2.0 * d);
        let second = (e(t + d) - 2.0 * e(t) + e(t - d)) / (d * d);
        prop_assert!((second + k2 * first + k1 * e(t)).abs() < 1e-4 * (1.0 + k1));
    }

    #[test]
    fn half_sontag_matches_the_direct_formula(alpha in -5.0f64..5.0, beta in 1e-3f64..5.0) {
        let direct = (-alpha + (alpha * alpha + beta * beta).sqrt()) / (2.0 * beta);
        let lam = safety::half_sontag_lambda(alpha, beta);
        prop_assert!((lam - direct).abs() < 1e-9 * (1.0 + direct.abs()));
        prop_assert!(lam >= 0.0);
    }
}

#[test]
fn half_sontag_limits() {
    assert_eq!(safety::half_sontag_lambda(3.0, 0.0), 0.0);
    let lam = safety::half_sontag_lambda(100.0, 1.0);
    assert!((lam - 1.0 / 400.0).abs() < 1e-7);
}

#[test]
fn safe_field_deep_inside_is_the_gradient_push() {
    // Far from a small cap the half-Sontag term is negligible.
    let c = Vector3::new(0.0, 0.0, 1.0);
    let task = BcbfTask {
        alpha_gain: 100.0,
        ..obstacle_bcbf(ChartId::NorthStereo, MetricSpec::flat(2), c)
    };
    let y = Vector::from_vec(vec![0.5, 0.3]);
    let sf = task.safe_field(&y).unwrap();
    assert!(sf.alpha > 50.0 * sf.beta);
    assert!((sf.lambda - sf.beta / (4.0 * sf.alpha)).abs() < 1e-3 * sf.lambda);
    let push = &sf.grad_h0 * task.delta;
    assert!((&sf.field - &push).norm() <= (sf.lambda / task.delta) * push.norm() * 1.0001);
}

#[test]
fn bcbf_h_dot_matches_trajectory_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let c = Vector3::new(
        std::f64::consts::FRAC_1_SQRT_2,
        std::f64::consts::FRAC_1_SQRT_2,
        0.0,
    );
    for metric in [MetricSpec::RoundStereographic, MetricSpec::flat(2)] {
        let task = obstacle_bcbf(ChartId::NorthStereo, metric.clone(), c);
        for _ in 0..30 {
            let y = point_away_from(&mut rng, &c, 0.55);
            let v = random_vector(&mut rng, 2, 0.5);
            let a = random_vector(&mut rng, 2, 1.0);
            let h = |t: f64| {
                let s = &y + &v * t + &a * (0.5 * t * t);
                let sd = &v + &a * t;
                task.value(&s, &sd).unwrap().0
            };
            let d = 1e-5;
            let fd = (h(d) - h(-d)) / (2.0 * d);
            let analytic = task.h_dot(&y, &v, &a).unwrap();
            assert!(
                (fd - analytic).abs() < 1e-3 * (1.0 + fd.abs()),
                "{metric:?}: {fd} vs {analytic}"
            );
        }
    }
}

#[test]
fn in_chart_barrier_matches_the_embedded_barrier() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..50 {
        let c = random_unit3(&mut rng);
        let y = point_away_from(&mut rng, &c, 0.1);
        for (chart, sign) in [(ChartId::NorthStereo, 1.0), (ChartId::SouthStereo, -1.0)] {
            let f = SafetyFunction::new(BarrierKind::ArcDistS2InChart {
                chart,
                center: c.into(),
                radius: 0.4,
            });
            let jet = f.jet(&y).unwrap();
            let h = composite(sign, c, 0.4);
            assert!((jet.value - h(&y)).abs() < 1e-12);
            let fd = fd_jacobian(|p| Vector::from_element(1, h(p)), &y, 1e-6)
                .row(0)
                .transpose();
            assert!((&jet.grad - fd).amax() < 1e-5);
            assert!((&jet.hess - fd_hessian(&h, &y, 1e-4)).amax() < 1e-4);
        }
    }
}

#[test]
fn degenerate_gradient_drops_the_row() {
    // At the antipode of the obstacle center the arc distance is not
    // differentiable and its gradient vanishes in the chart.
    let c = Vector3::new(0.0, 0.0, 1.0);
    let task = obstacle_ecbf(ChartId::NorthStereo, c, 0.3, (1.0, 2.0));
    let y = geom::unembed(&ChartId::NorthStereo, &Vector3::new(0.0, 0.0, -1.0)).unwrap();
    let eval = task.row(&y, &Vector::zeros(2)).unwrap();
    assert!(eval.dropped || eval.clamped);
}
