mod common;

use std::sync::Arc;

use common::{fd_jacobian, max_abs, random_vector, sampled_segment_distance};
use geopolicy::geom::ChartId;
use geopolicy::kinematics::{self, KinematicChain};
use geopolicy::scenarios::arm;
use geopolicy::taskmap::TaskMap;
use geopolicy::{Error, Vector};
use nalgebra::{Vector3, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn chain() -> Arc<KinematicChain> {
    Arc::new(KinematicChain::panda_like())
}

fn random_q(rng: &mut ChaCha8Rng, chain: &KinematicChain) -> Vector {
    chain.home() + random_vector(rng, chain.dof(), 0.8)
}

fn all_maps(chain: &Arc<KinematicChain>) -> Vec<TaskMap> {
    let ee = chain.end_effector().clone();
    let reference = Vector4::new(0.3, 0.9, 0.1, -0.2).normalize();
    let mut maps = vec![
        TaskMap::ChainPosition {
            chain: chain.clone(),
            frame: ee.clone(),
        },
        TaskMap::ChainQuaternion {
            chain: chain.clone(),
            frame: ee.clone(),
            reference,
        },
        TaskMap::ChainQuatChordDistance {
            chain: chain.clone(),
            frame: ee,
            goal: reference,
        },
        TaskMap::CoordinateProjection { dim: 7, index: 3 },
        TaskMap::AffineScalar {
            dim: 7,
            index: 5,
            scale: -2.0,
            offset: 0.5,
        },
    ];
    for link in 0..chain.capsules().len() {
        maps.push(TaskMap::CapsuleSphereDistance {
            chain: chain.clone(),
            link,
            center: Vector3::new(0.4, 0.3, 0.5),
            radius: 0.05,
        });
    }
    maps
}

#[test]
fn task_map_jacobians_match_finite_differences() {
    let chain = chain();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for map in all_maps(&chain) {
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let q = random_q(&mut rng, &chain);
            let j = map.jacobian(&q).unwrap();
            let fd = fd_jacobian(|p| map.eval(p).unwrap(), &q, 1e-6);
            worst = worst.max(max_abs(&(&j - fd)) / (1.0 + max_abs(&j)));
        }
        assert!(worst < 1e-5, "{}: relative error {worst:e}", map.kind());
    }
}

#[test]
fn task_map_jdot_matches_jacobian_differences() {
    let chain = chain();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for map in all_maps(&chain) {
        for _ in 0..20 {
            let q = random_q(&mut rng, &chain);
            let v = random_vector(&mut rng, 7, 1.0);
            let h = 1e-5;
            let fd = (map.jacobian(&(&q + &v * h)).unwrap()
                - map.jacobian(&(&q - &v * h)).unwrap())
                / (2.0 * h);
            let jd = map.jdot(&q, &v).unwrap();
            assert!(max_abs(&(jd - fd)) < 1e-4, "{}", map.kind());
            // The curvature term is J̇ σ̇.
            let st = map.state(&q, &v).unwrap();
            assert!(
                (&st.curv - map.jdot(&q, &v).unwrap() * &v).amax() < 1e-10,
                "{}",
                map.kind()
            );
        }
    }
}

#[test]
fn stereo_embedding_jdot_and_state_agree() {
    let map = TaskMap::StereoEmbedding {
        chart: ChartId::NorthStereo,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let y = random_vector(&mut rng, 2, 2.0);
        let v = random_vector(&mut rng, 2, 1.0);
        let h = 1e-6;
        let fd = (map.jacobian(&(&y + &v * h)).unwrap() - map.jacobian(&(&y - &v * h)).unwrap())
            / (2.0 * h);
        assert!(max_abs(&(map.jdot(&y, &v).unwrap() - fd)) < 1e-4);
    }
}

#[test]
fn capsule_distance_matches_dense_sampling() {
    let chain = chain();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let q = random_q(&mut rng, &chain);
        let center = Vector3::from_fn(|i, _| {
            [0.5, 0.0, 0.5][i] + rand::Rng::random_range(&mut rng, -0.4..0.4)
        });
        let radius = 0.07;
        let d = arm::link_distances(&chain, &q, &center, radius);
        let pose = chain.pose(&q);
        for (i, cap) in chain.capsules().iter().enumerate() {
            let (a, b) = chain.capsule_world(&pose, i);
            let oracle = sampled_segment_distance(&a, &b, &center, 10_000) - cap.radius - radius;
            worst = worst.max((d[i] - oracle).abs());
        }
    }
    assert!(worst < 1e-4, "max error {worst:e}");
}

#[test]
fn end_effector_orientation_is_a_unit_quaternion() {
    let chain = chain();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..20 {
        let q = random_q(&mut rng, &chain);
        let (_, r) = chain.ee_pose(&q);
        let w = kinematics::quat_to_wxyz(&r);
        assert!((w.norm() - 1.0).abs() < 1e-12);
        let back = kinematics::quat_from_wxyz([w[0], w[1], w[2], w[3]]);
        assert!(back.angle_to(&r) < 1e-12);
    }
}

#[test]
fn chord_distance_ignores_the_quaternion_sign() {
    let g = Vector4::new(0.5, 0.5, -0.5, 0.5);
    let q = Vector4::new(0.6, 0.0, 0.8, 0.0);
    assert!((arm::chord_distance(&q, &g) - arm::chord_distance(&-q, &g)).abs() < 1e-15);
    assert_eq!(arm::chord_distance(&g, &g), 0.0);
}

#[test]
fn chain_json_round_trip_and_validation() {
    let chain = KinematicChain::panda_like();
    let text = serde_json::to_string(chain.spec()).unwrap();
    let again = KinematicChain::from_json(&text).unwrap();
    let q = chain.home();
    assert_eq!(chain.ee_pose(&q).0, again.ee_pose(&q).0);

    let mut spec: serde_json::Value = serde_json::from_str(&text).unwrap();
    spec["links"][0]["radius"] = serde_json::json!(-0.1);
    let err = KinematicChain::from_json(&spec.to_string()).unwrap_err();
    assert!(matches!(err, Error::Chain(_)), "{err}");
}
