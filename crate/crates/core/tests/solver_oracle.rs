mod common;

use fdrsvm::solver::{solve, solve_lp_by_enumeration, SolverConfig, SolverStatus};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn interior_point_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..200 {
        let p = common::random_box_lp(&mut rng);
        let ipm = solve(&p, &SolverConfig::default());
        let exact = solve_lp_by_enumeration(&p).unwrap();
        assert_eq!(ipm.status, SolverStatus::Optimal, "case {case}: {:?}", ipm.message);
        let tol = 1e-6 * (1.0 + exact.objective.abs());
        assert!(
            (ipm.objective - exact.objective).abs() <= tol,
            "case {case}: ipm {} vs oracle {}",
            ipm.objective,
            exact.objective
        );
    }
}

#[test]
fn box_qp_is_a_projected_gradient_fixed_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..100 {
        let qp = common::random_box_qp(&mut rng);
        let sol = solve(&qp.program, &SolverConfig::default());
        assert_eq!(sol.status, SolverStatus::Optimal, "case {case}");
        let r = common::projected_gradient_residual(&qp, &sol.x_star);
        assert!(r <= 1e-6, "case {case}: residual {r}");
    }
}

#[test]
fn optimal_solutions_meet_the_kkt_tolerance() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cfg = SolverConfig::default();
    for _ in 0..50 {
        let sol = solve(&common::random_box_lp(&mut rng), &cfg);
        assert!(sol.kkt_residual <= cfg.eps2);
    }
}
