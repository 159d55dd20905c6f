mod common;

use common::{qp_enumerate, random_feasible_qp};
use geopolicy::qp::{kkt_residual, QpProblem, QpSolver, QpStatus};
use geopolicy::{Matrix, Vector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn problem(h: Matrix, f: Vector, c: Matrix, d: Vector) -> QpProblem {
    QpProblem {
        h,
        f,
        c,
        d,
        warm_start: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_active_set_enumeration(seed in any::<u64>(), n in 1usize..=5, m in 0usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, f, c, d) = random_feasible_qp(&mut rng, n, m);
        let (a_ref, obj_ref, _) = qp_enumerate(&h, &f, &c, &d).expect("feasible by construction");
        let p = problem(h, f, c, d);
        let s = QpSolver::new().solve(&p).unwrap();
        prop_assert_eq!(s.status, QpStatus::Optimal);
        prop_assert!((p.objective(&s.a) - obj_ref).abs() <= 1e-8 * (1.0 + obj_ref.abs()));
        prop_assert!((&s.a - &a_ref).norm() <= 1e-6 * (1.0 + a_ref.norm()));
        prop_assert!(s.kkt_residual <= 1e-8);
    }

    #[test]
    fn warm_start_does_not_change_the_minimizer(seed in any::<u64>(), n in 1usize..=4, m in 1usize..=6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, f, c, d) = random_feasible_qp(&mut rng, n, m);
        let (a_ref, _, _) = qp_enumerate(&h, &f, &c, &d).unwrap();
        let mut p = problem(h, f, c, d);
        p.warm_start = Some(common::random_vector(&mut rng, n, 3.0));
        let s = QpSolver::new().solve(&p).unwrap();
        prop_assert!((&s.a - &a_ref).norm() <= 1e-6 * (1.0 + a_ref.norm()));
    }

    #[test]
    fn solution_is_feasible_and_duals_nonnegative(seed in any::<u64>(), n in 1usize..=5, m in 0usize..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, f, c, d) = random_feasible_qp(&mut rng, n, m);
        let p = problem(h, f, c, d);
        let s = QpSolver::new().solve(&p).unwrap();
        for i in 0..m {
            prop_assert!(p.c.row(i).dot(&s.a.transpose()) - p.d[i] >= -1e-9);
            prop_assert!(s.duals[i] >= -1e-12);
        }
        prop_assert!(kkt_residual(&p, &s.a, &s.duals, 0.0) <= 1e-8);
    }
}

#[test]
fn unconstrained_solution_solves_the_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (h, f, _, _) = random_feasible_qp(&mut rng, 4, 0);
        let expected = h.clone().lu().solve(&f).unwrap();
        let s = QpSolver::new()
            .solve(&QpProblem::unconstrained(h, f))
            .unwrap();
        assert!((s.a - expected).norm() < 1e-10);
    }
}

#[test]
fn infeasible_rows_are_relaxed_with_a_shared_slack() {
    // a ≥ 1 and −a ≥ 1 cannot both hold; the least slack is 1.
    let p = problem(
        Matrix::identity(1, 1),
        Vector::zeros(1),
        Matrix::from_row_slice(2, 1, &[1.0, -1.0]),
        Vector::from_vec(vec![1.0, 1.0]),
    );
    let s = QpSolver::new().solve(&p).unwrap();
    match s.status {
        QpStatus::Relaxed { max_slack } => assert!((max_slack - 1.0).abs() < 1e-6),
        other => panic!("expected a relaxed solution, got {other:?}"),
    }
    assert!(s.a[0].abs() < 1e-6);
}

#[test]
fn warm_start_at_the_minimizer_is_returned_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let (h, f, c, d) = random_feasible_qp(&mut rng, 3, 4);
        let mut p = problem(h, f, c, d);
        let a = QpSolver::new().solve(&p).unwrap().a;
        p.warm_start = Some(a.clone());
        let again = QpSolver::new().solve(&p).unwrap().a;
        assert!((again - a).norm() <= 1e-12);
    }
}
