mod common;

use common::{
    conformal_round_metric, fd_christoffel, fd_jacobian, fd_second_directional, max_abs,
    pulled_back_round_metric, random_unit3, random_vector, stereo_embed,
};
use geopolicy::geom::{self, ChartId, MetricSpec};
use geopolicy::taskmap::{self, TaskMap};
use geopolicy::{Matrix, Vector};
use nalgebra::Vector3;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CHARTS: [(ChartId, f64); 2] = [(ChartId::NorthStereo, 1.0), (ChartId::SouthStereo, -1.0)];

fn v3(x: &Vector3<f64>) -> Vector {
    Vector::from_column_slice(x.as_slice())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn chart_transition_round_trip(r in 0.5f64..3.0, angle in 0.0f64..std::f64::consts::TAU, vx in -2.0f64..2.0, vy in -2.0f64..2.0) {
        let (n, s) = (ChartId::NorthStereo, ChartId::SouthStereo);
        let y = Vector::from_vec(vec![r * angle.cos(), r * angle.sin()]);
        let v = Vector::from_vec(vec![vx, vy]);
        let ys = geom::transition(&n, &s, &y).unwrap();
        let vs = geom::transition_velocity(&n, &s, &y, &v).unwrap();
        let back = geom::transition(&s, &n, &ys).unwrap();
        let vback = geom::transition_velocity(&s, &n, &ys, &vs).unwrap();
        prop_assert!((back - &y).amax() < 1e-10);
        prop_assert!((vback - &v).amax() < 1e-10);
        // Same embedded point and velocity from either chart.
        let xn = geom::embed(&n, &y).unwrap();
        let xs = geom::embed(&s, &ys).unwrap();
        prop_assert!((xn - xs).norm() < 1e-12);
        let wn = geom::embed_jacobian(&n, &y).unwrap() * &v;
        let ws = geom::embed_jacobian(&s, &ys).unwrap() * &vs;
        prop_assert!((wn - ws).amax() < 1e-10);
    }

    #[test]
    fn embedding_matches_the_textbook_projection(a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let y = Vector::from_vec(vec![a, b]);
        for (chart, sign) in &CHARTS {
            let x = geom::embed(chart, &y).unwrap();
            prop_assert!((x - stereo_embed(*sign, &y)).norm() < 1e-14);
            prop_assert!((x.norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn sharp_inverts_the_metric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Matrix::from_fn(3, 3, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let g = a.transpose() * a + Matrix::identity(3, 3) * 0.1;
        let alpha = random_vector(&mut rng, 3, 1.0);
        let g_inv = g.clone().try_inverse().unwrap();
        let v = geom::sharp(&g_inv, &alpha);
        prop_assert!((g * v - alpha).amax() < 1e-10);
    }
}

#[test]
fn unembed_inverts_embed_away_from_the_poles() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    while count < 1000 {
        let x = random_unit3(&mut rng);
        if x[2].abs() > 0.95 {
            continue;
        }
        count += 1;
        for (chart, _) in &CHARTS {
            let y = geom::unembed(chart, &x).unwrap();
            worst = worst.max((geom::embed(chart, &y).unwrap() - x).norm());
        }
    }
    assert!(worst < 1e-10, "max error {worst:e}");
}

#[test]
fn unembed_rejects_the_projection_pole() {
    let north = Vector3::new(0.0, 0.0, 1.0);
    assert!(matches!(
        geom::unembed(&ChartId::NorthStereo, &north),
        Err(geopolicy::Error::NearPole { .. })
    ));
    assert!(geom::unembed(&ChartId::SouthStereo, &north).is_ok());
}

#[test]
fn embedding_jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let y = random_vector(&mut rng, 2, 2.5);
        let v = random_vector(&mut rng, 2, 1.0);
        for (chart, sign) in &CHARTS {
            let j = geom::embed_jacobian(chart, &y).unwrap();
            let fd = fd_jacobian(|p| v3(&stereo_embed(*sign, p)), &y, 1e-6);
            assert!(max_abs(&(&j - &fd)) < 1e-5 * (1.0 + max_abs(&j)));
            let jd = geom::embed_jacobian_dot(chart, &y, &v).unwrap();
            let h = 1e-6;
            let fd_dot = (geom::embed_jacobian(chart, &(&y + &v * h)).unwrap()
                - geom::embed_jacobian(chart, &(&y - &v * h)).unwrap())
                / (2.0 * h);
            assert!(max_abs(&(jd - fd_dot)) < 1e-4);
        }
    }
}

#[test]
fn round_metric_is_the_pulled_back_ambient_metric() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let round = MetricSpec::RoundStereographic;
    for _ in 0..50 {
        let y = random_vector(&mut rng, 2, 2.0);
        let g = round.metric_matrix(&y);
        assert!(max_abs(&(&g - pulled_back_round_metric(1.0, &y))) < 1e-8);
        assert!(max_abs(&(&g - conformal_round_metric(&y))) < 1e-14);
        let e = round.eval(&y);
        assert!(max_abs(&(&e.g * &e.g_inv - Matrix::identity(2, 2))) < 1e-12);
    }
}

#[test]
fn round_christoffel_symbols_are_levi_civita() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let round = MetricSpec::RoundStereographic;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let y = random_vector(&mut rng, 2, 2.0);
        let oracle = fd_christoffel(conformal_round_metric, &y, 1e-4);
        let gamma = geom::round_christoffel(&y);
        for (k, plane) in oracle.iter().enumerate() {
            for (i, row) in plane.iter().enumerate() {
                for (j, &val) in row.iter().enumerate() {
                    worst = worst.max((gamma.get(k, i, j) - val).abs());
                }
            }
        }
        // The contraction helper agrees with the symbols.
        let u = random_vector(&mut rng, 2, 1.0);
        let w = random_vector(&mut rng, 2, 1.0);
        let c = round.contract_christoffel(&y, &u, &w);
        for k in 0..2 {
            let mut s = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    s += gamma.get(k, i, j) * u[i] * w[j];
                }
            }
            assert!((c[k] - s).abs() < 1e-12);
        }
    }
    assert!(worst < 1e-6, "max error {worst:e}");
}

#[test]
fn second_fundamental_form_of_the_embedding() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let round = MetricSpec::RoundStereographic;
    let flat = MetricSpec::flat(3);
    for _ in 0..50 {
        let y = random_vector(&mut rng, 2, 1.5);
        let v = random_vector(&mut rng, 2, 1.0);
        let a = random_vector(&mut rng, 2, 1.0);
        for (chart, sign) in &CHARTS {
            let map = TaskMap::StereoEmbedding {
                chart: chart.clone(),
            };
            // Ambient acceleration of x(t) = φ⁻¹(y + t v + t² a / 2).
            let h = 1e-4;
            let at = |t: f64| stereo_embed(*sign, &(&y + &v * t + &a * (0.5 * t * t)));
            let xdd = (at(h) - at(0.0) * 2.0 + at(-h)) / (h * h);
            let j = geom::embed_jacobian(chart, &y).unwrap();
            let cov = &a + round.contract_christoffel(&y, &v, &v);
            let ii = taskmap::second_fundamental_form(&map, &round, &flat, &y, &v).unwrap();
            let lhs = v3(&xdd);
            let rhs = &j * cov + &ii;
            assert!((lhs - rhs).amax() < 1e-4);
            // For the round sphere it is normal to the surface.
            let x = geom::embed(chart, &y).unwrap();
            let tangential = &j.transpose() * &ii;
            assert!(tangential.amax() < 1e-10);
            let speed2 = (&j * &v).norm_squared();
            assert!((ii.dot(&v3(&x)) + speed2).abs() < 1e-10);
        }
    }
}

#[test]
fn arc_distance_matches_arccos() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let a = random_unit3(&mut rng);
        let b = random_unit3(&mut rng);
        let (d, _) = geom::arc_distance(&a, &b);
        assert!((d - a.dot(&b).clamp(-1.0, 1.0).acos()).abs() < 1e-12);
    }
}

#[test]
fn task_curvature_matches_second_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..30 {
        let y = random_vector(&mut rng, 2, 1.5);
        let v = random_vector(&mut rng, 2, 1.0);
        let map = TaskMap::StereoEmbedding {
            chart: ChartId::SouthStereo,
        };
        let st = map.state(&y, &v).unwrap();
        let fd = fd_second_directional(|p| v3(&stereo_embed(-1.0, p)), &y, &v, 1e-4);
        assert!((st.curv - fd).amax() < 1e-5);
    }
}
