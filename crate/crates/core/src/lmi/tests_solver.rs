use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::linalg::psd_projection;

#[test]
fn two_by_two_eigenvalue_condition() {
    // minimize t subject to [[t, 1], [1, t]] > 0
    let mut p = LmiProblem::new();
    let t = p.scalar("t");
    p.minimize_trace(t, 1.0);
    let mut b = LmiBuilder::new("psd", &[2]);
    b.scalar(0, 0, t, -DMatrix::identity(2, 2));
    b.constant(0, 0, -DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    p.add_lmi(&b).unwrap();
    let sol = solve(&p, &SolverOptions::default());
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((p.scalar_value(&sol.x, t) - 1.0).abs() <= 1e-6, "t = {}", sol.x[0]);
}

#[test]
fn psd_projection_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let g = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
        let a = (&g + g.transpose()) * 0.5;
        let mut p = LmiProblem::new();
        let x = p.symmetric("X", 4);
        p.minimize_trace(x, 1.0);
        let mut b = LmiBuilder::new("above", &[4]);
        b.var(0, 0, x, -1.0).constant(0, 0, a.clone());
        p.add_lmi(&b).unwrap();
        let mut b = LmiBuilder::new("psd", &[4]);
        b.var(0, 0, x, -1.0);
        p.add_lmi(&b).unwrap();
        let sol = solve(&p, &SolverOptions::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        let oracle = psd_projection(&a).trace();
        assert!((sol.objective - oracle).abs() <= 1e-6, "{} vs {}", sol.objective, oracle);
    }
}

#[test]
fn infeasible_problem_is_reported() {
    // x < -1 and x > 1
    let mut p = LmiProblem::new();
    let x = p.scalar("x");
    let mut b = LmiBuilder::new("a", &[1]);
    b.scalar(0, 0, x, DMatrix::identity(1, 1)).constant(0, 0, DMatrix::from_element(1, 1, 1.0));
    p.add_lmi(&b).unwrap();
    let mut b = LmiBuilder::new("b", &[1]);
    b.scalar(0, 0, x, -DMatrix::identity(1, 1)).constant(0, 0, DMatrix::from_element(1, 1, 1.0));
    p.add_lmi(&b).unwrap();
    assert_eq!(solve(&p, &SolverOptions::default()).status, SolveStatus::Infeasible);
}

fn lyapunov_problem(a: &DMatrix<f64>) -> (LmiProblem, VarId) {
    // a' X a - X < 0, X > I
    let mut p = LmiProblem::new();
    let x = p.symmetric("X", 3);
    let mut b = LmiBuilder::new("lyap", &[3]);
    b.product(0, 0, Some(&a.transpose()), x, Some(a), 1.0).var(0, 0, x, -1.0);
    p.add_lmi(&b).unwrap();
    let mut b = LmiBuilder::new("pos", &[3]);
    b.var(0, 0, x, -1.0).constant(0, 0, DMatrix::identity(3, 3));
    p.add_lmi(&b).unwrap();
    (p, x)
}

#[test]
fn feasibility_only_returns_strict_point() {
    let a = DMatrix::from_row_slice(3, 3, &[0.9, 0.2, 0.0, 0.0, 0.7, 0.3, 0.1, 0.0, 0.5]);
    let (p, x) = lyapunov_problem(&a);
    let sol = solve(&p, &SolverOptions::default());
    assert!(sol.status.is_feasible());
    assert!(p.is_strictly_feasible(&sol.x));
    let xv = p.value(&sol.x, x);
    assert!(crate::linalg::lambda_max(&(a.transpose() * &xv * &a - &xv)) < 0.0);
}

#[test]
fn unstable_matrix_has_no_lyapunov_certificate() {
    let a = DMatrix::from_row_slice(3, 3, &[1.1, 0.2, 0.0, 0.0, 0.7, 0.3, 0.1, 0.0, 0.5]);
    let (p, _) = lyapunov_problem(&a);
    assert_eq!(solve(&p, &SolverOptions::default()).status, SolveStatus::Infeasible);
}

#[test]
fn symmetric_coordinates_round_trip() {
    let mut p = LmiProblem::new();
    let _s = p.scalar("s");
    let x = p.symmetric("X", 4);
    let m = DMatrix::from_fn(4, 4, |i, j| (i + j) as f64 + 0.5 * (i * j) as f64);
    let mut v = vec![0.0; p.n_coords];
    p.set_value(&mut v, x, &m);
    assert_eq!(p.value(&v, x), m);
    assert_eq!(p.n_coords, 11);
}

#[test]
fn off_diagonal_blocks_are_mirrored() {
    let mut p = LmiProblem::new();
    let k = p.full("K", 2, 1);
    let mut b = LmiBuilder::new("m", &[1, 2]);
    let l = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
    b.product(1, 0, None, k, None, 1.0).constant(0, 1, l);
    p.add_lmi(&b).unwrap();
    let f = p.constraints[0].eval(&[3.0, 4.0]);
    let expected = DMatrix::from_row_slice(3, 3, &[0.0, 4.0, 6.0, 4.0, 0.0, 0.0, 6.0, 0.0, 0.0]);
    assert_eq!(f, expected);
}
