use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::lemma::{robust_problem, sampled_worst};
use super::stability::{check_mean_stability, random_contraction};
use super::*;
use crate::estimators::{CompensatedErrorBlocks, LocalErrorBlocks};
use crate::linalg::{diag, lambda_max, spectral_norm};

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn uniform_ball(dim: usize, radius: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let g = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.normalize() * radius * rng.gen::<f64>()
}

fn toy(gamma: f64, scaling: f64) -> LocalErrorBlocks {
    LocalErrorBlocks {
        a: DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.0, 0.8]),
        c: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.4, 1.0]),
        noise_gain: DMatrix::from_row_slice(2, 1, &[0.5, 1.0]),
        d: diag(&[0.3, 0.2]),
        m_f: DMatrix::identity(2, 2) * scaling,
        m_h: DMatrix::identity(2, 2) * scaling,
        alpha: scaling,
        gamma,
        theta: DMatrix::identity(2, 2),
    }
}

fn vehicle_like(gamma: f64) -> LocalErrorBlocks {
    LocalErrorBlocks {
        a: DMatrix::from_row_slice(3, 3, &[1.0, 0.0, -0.5, 0.0, 1.0, 0.7, 0.0, 0.0, 1.0]),
        c: DMatrix::from_row_slice(3, 3, &[0.9, 0.1, 0.0, -0.6, 0.8, 0.0, 0.2, 0.95, 0.0]),
        noise_gain: DMatrix::from_row_slice(3, 2, &[1.0, 0.2, 0.5, -0.3, 0.0, 1.8]),
        d: diag(&[0.7, 0.6, 0.5]),
        m_f: diag(&[0.01, 0.01, 0.02]),
        m_h: diag(&[0.03, 0.03, 0.02]),
        alpha: 0.02,
        gamma,
        theta: DMatrix::identity(3, 3),
    }
}

struct Design {
    gain: DMatrix<f64>,
    psi: DMatrix<f64>,
    phi: DMatrix<f64>,
    upsilon: DMatrix<f64>,
    objective: f64,
}

fn design(blk: &LocalErrorBlocks, opts: &GainProblemOptions) -> Option<Design> {
    let gp = build_gain_problem(blk, opts).unwrap();
    let sol = solve(&gp.problem, &SolverOptions::default());
    sol.status.is_feasible().then(|| Design {
        gain: gp.problem.value(&sol.x, gp.gain),
        psi: gp.problem.value(&sol.x, gp.psi),
        phi: gp.problem.value(&sol.x, gp.phi),
        upsilon: gp.problem.value(&sol.x, gp.upsilon),
        objective: sol.objective,
    })
}

#[test]
fn scalar_lemma_matches_worst_case_analysis() {
    // -1 + 2 s^2 p < 0 for all |p| <= 1 iff s^2 < 1/2
    for i in 0..=24 {
        let s = 0.05 * i as f64;
        if (s * s - 0.5).abs() < 0.01 {
            continue;
        }
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        let (pr, _) = robust_problem(&m(-1.0), &m(s), &m(s));
        let feasible = solve(&pr, &SolverOptions::default()).status.is_feasible();
        assert_eq!(feasible, s * s < 0.5, "s = {s}");
    }
}

#[test]
fn lemma_without_uncertainty_is_plain_negativity() {
    let s2 = DMatrix::from_row_slice(1, 2, &[0.7, -0.3]);
    let s3 = DMatrix::zeros(2, 1);
    for (s1, expect) in [(diag(&[-1.0, -0.5]), true), (diag(&[-1.0, 0.2]), false)] {
        let (pr, _) = robust_problem(&s1, &s2, &s3);
        assert_eq!(solve(&pr, &SolverOptions::default()).status.is_feasible(), expect);
    }
}

#[test]
fn lemma_agrees_with_sampled_contractions() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut feasible, mut infeasible) = (0, 0);
    for _ in 0..40 {
        let d = rng.gen_range(2..=3);
        let (c, r) = (rng.gen_range(1..=2), rng.gen_range(1..=2));
        let b = gaussian(d, d, &mut rng);
        let s1 = -(&b * b.transpose() + DMatrix::identity(d, d) * 0.2);
        let scale = rng.gen_range(0.2..1.2);
        let s2 = gaussian(c, d, &mut rng) * scale;
        let s3 = gaussian(d, r, &mut rng) * scale;
        let (pr, _) = robust_problem(&s1, &s2, &s3);
        let ok = solve(&pr, &SolverOptions::default()).status.is_feasible();
        let worst = sampled_worst(&s1, &s2, &s3, 2000, &mut rng);
        if ok {
            feasible += 1;
            assert!(worst < 0.0, "feasible LMI but sampled eigenvalue {worst}");
        } else {
            infeasible += 1;
        }
        if worst >= 0.0 {
            assert!(!ok);
        }
    }
    assert!(feasible > 5 && infeasible > 5, "{feasible} feasible, {infeasible} infeasible");
}

#[test]
fn gain_problem_block_layout() {
    let gp = build_gain_problem(&vehicle_like(1.0), &GainProblemOptions::default()).unwrap();
    let dims: Vec<usize> = gp.problem.constraints.iter().map(|c| c.dim).collect();
    // border n + center (n + n + p + q) + border n or m
    assert_eq!(dims, vec![17, 17, 17, 3, 1]);
    assert_eq!(gp.problem.constraints[0].blocks, vec![3, 3, 3, 2, 3, 3]);
    let names: Vec<&str> = gp.problem.vars.iter().map(|v| v.name.as_str()).collect();
    assert_eq!(names, ["K", "Psi", "Phi", "Upsilon", "eps1", "eps2", "eps3", "zeta"]);
    // 9 gain entries, 6 + 3 + 6 symmetric entries, four scalars
    assert_eq!(gp.problem.n_coords, 9 + 6 + 3 + 6 + 4);
}

/// Quadratic form whose negativity certifies the one-step bound.
fn bound_form(blk: &LocalErrorBlocks, d: &Design, e: &DVector<f64>, w: &DVector<f64>, v: &DVector<f64>, n_f: &DMatrix<f64>, n_h: &DMatrix<f64>) -> f64 {
    let next = blk.a_k_perturbed(&d.gain, n_f, n_h) * e + blk.gamma_k(&d.gain) * w + blk.d_k(&d.gain) * v;
    next.norm_squared() - e.dot(&(&d.psi * e)) - w.dot(&(&d.phi * w)) - v.dot(&(&d.upsilon * v))
}

#[test]
fn designed_gain_certifies_one_step_bound_on_linear_toy() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for scaling in [1e-9, 0.05] {
        let blk = toy(1.0, scaling);
        let d = design(&blk, &GainProblemOptions::default()).expect("toy design is feasible");
        for _ in 0..10_000 {
            let e = uniform_ball(2, 3.0, &mut rng);
            let w = uniform_ball(1, 1.0, &mut rng);
            let v = uniform_ball(2, 1.0, &mut rng);
            let n_f = random_contraction(2, 2, &mut rng);
            let n_h = random_contraction(2, 2, &mut rng);
            let j = bound_form(&blk, &d, &e, &w, &v, &n_f, &n_h);
            assert!(j <= 1e-12, "scaling {scaling}: J = {j}");
            // the scalar form used by the run diagnostics
            let next = blk.a_k_perturbed(&d.gain, &n_f, &n_h) * &e + blk.gamma_k(&d.gain) * &w + blk.d_k(&d.gain) * &v;
            let bound = lambda_max(&d.psi) * e.norm_squared()
                + lambda_max(&d.phi) * w.norm_squared()
                + lambda_max(&d.upsilon) * v.norm_squared();
            assert!(next.norm_squared() <= bound * (1.0 + 1e-9));
        }
    }
}

#[test]
fn untriggered_step_remains_feasible_on_stable_toy() {
    let blk = toy(0.0, 0.01);
    let d = design(&blk, &GainProblemOptions::default()).expect("pure prediction bound exists");
    assert!(d.upsilon.iter().all(|v| v.abs() < 1e-3), "measurement channel is absent: {}", d.upsilon);
}

#[test]
fn contractive_form_is_no_cheaper() {
    let blk = toy(1.0, 0.02);
    let literal = design(&blk, &GainProblemOptions::default()).unwrap();
    let contractive = design(&blk, &GainProblemOptions { zeta: ZetaForm::Contractive, ..Default::default() }).unwrap();
    assert!(contractive.objective >= literal.objective - 1e-5 * (1.0 + literal.objective.abs()));
}

#[test]
fn tightening_a_constraint_never_lowers_the_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..10 {
        let a = gaussian(3, 3, &mut rng);
        let a = (&a + a.transpose()) * 0.5;
        let b = gaussian(3, 3, &mut rng);
        let b = (&b + b.transpose()) * 0.5;
        let build = |with_b: bool| {
            let mut pr = LmiProblem::new();
            let x = pr.symmetric("X", 3);
            pr.minimize_trace(x, 1.0);
            for m in std::iter::once(&a).chain(with_b.then_some(&b)) {
                let mut lb = LmiBuilder::new("lower bound", &[3]);
                lb.var(0, 0, x, -1.0).constant(0, 0, m.clone());
                pr.add_lmi(&lb).unwrap();
            }
            solve(&pr, &SolverOptions::default())
        };
        let loose = build(false);
        let tight = build(true);
        assert_eq!(loose.status, SolveStatus::Optimal);
        assert!(tight.objective >= loose.objective - 1e-6, "{} < {}", tight.objective, loose.objective);
    }
}

fn identical_pair() -> (Vec<LocalErrorBlocks>, Vec<DMatrix<f64>>) {
    let blk = vehicle_like(1.0);
    let gain = design(&blk, &GainProblemOptions::default()).expect("feasible").gain;
    (vec![blk.clone(), blk], vec![gain.clone(), gain])
}

fn weight_of(fp: &FusionProblem, x: &[f64]) -> DMatrix<f64> {
    fp.problem.value(x, fp.weights[0])
}

#[test]
fn identical_sensors_share_the_weight_equally() {
    let (blocks, gains) = identical_pair();
    let fp = build_fusion_problem(&blocks, &gains, None).unwrap();
    let sol = solve_from(&fp.problem, &SolverOptions::default(), Some(&fp.start));
    assert!(sol.status.is_feasible());
    let w = weight_of(&fp, &sol.x);
    assert!((w - DMatrix::identity(3, 3) * 0.5).abs().max() < 1e-3);
}

/// Restricts every entry of a full matrix variable to `value ± delta`.
fn pin(pr: &mut LmiProblem, var: VarId, value: &DMatrix<f64>, delta: f64) {
    let (rows, cols) = pr.var(var).shape();
    for i in 0..rows {
        for j in 0..cols {
            let left = DMatrix::from_fn(1, rows, |_, c| f64::from(u8::from(c == i)));
            let right = DMatrix::from_fn(cols, 1, |r, _| f64::from(u8::from(r == j)));
            for sign in [1.0, -1.0] {
                let mut b = LmiBuilder::new("pin", &[1]);
                b.product(0, 0, Some(&left), var, Some(&right), sign)
                    .constant(0, 0, DMatrix::from_element(1, 1, -sign * value[(i, j)] - delta));
                pr.add_lmi(&b).unwrap();
            }
        }
    }
}

#[test]
fn optimized_fusion_beats_single_sensor_weighting() {
    let blocks = vec![vehicle_like(1.0), {
        let mut b = vehicle_like(1.0);
        b.d = diag(&[1.4, 1.2, 1.0]);
        b
    }];
    let gains: Vec<_> = blocks.iter().map(|b| design(b, &GainProblemOptions::default()).unwrap().gain).collect();
    let fixed_w = DMatrix::identity(3, 3);
    let free = build_fusion_problem(&blocks, &gains, None).unwrap();
    let sol = solve_from(&free.problem, &SolverOptions::default(), Some(&free.start));
    assert!(sol.status.is_feasible());

    let mut pinned = build_fusion_problem(&blocks, &gains, Some(std::slice::from_ref(&fixed_w))).unwrap();
    pin(&mut pinned.problem, pinned.weights[0], &fixed_w, 1e-6);
    let fixed = solve_from(&pinned.problem, &SolverOptions::default(), Some(&pinned.start));
    assert!(fixed.status.is_feasible());
    assert!(sol.objective <= fixed.objective * (1.0 + 1e-4), "{} > {}", sol.objective, fixed.objective);
}

#[test]
fn single_sensor_fusion_has_no_weights() {
    let (blocks, gains) = identical_pair();
    let fp = build_fusion_problem(&blocks[..1], &gains[..1], None).unwrap();
    assert!(fp.weights.is_empty());
    assert!(fp.problem.is_strictly_feasible(&fp.start));
    assert!(solve_from(&fp.problem, &SolverOptions::default(), Some(&fp.start)).status.is_feasible());
}

fn compensated_pair() -> Vec<CompensatedErrorBlocks> {
    let (blocks, gains) = identical_pair();
    blocks
        .into_iter()
        .zip(gains)
        .map(|(local, gain)| CompensatedErrorBlocks {
            a_c: local.a.clone(),
            local,
            gain,
            l_c: diag(&[0.01, 0.01, 0.02]),
            gamma: 1.0,
            theta: DMatrix::identity(3, 3),
        })
        .collect()
}

#[test]
fn compensated_fusion_of_identical_sensors_is_symmetric() {
    let blocks = compensated_pair();
    let fp = build_compensated_fusion_problem(&blocks, None).unwrap();
    let sol = solve_from(&fp.problem, &SolverOptions::default(), Some(&fp.start));
    assert!(sol.status.is_feasible());
    let w = weight_of(&fp, &sol.x);
    assert!((w - DMatrix::identity(3, 3) * 0.5).abs().max() < 1e-3);
}

#[test]
fn compensated_fusion_center_carries_quarter_scaling() {
    let blocks = compensated_pair();
    let fp = build_compensated_fusion_problem(&blocks, None).unwrap();
    let pr = &fp.problem;
    assert_eq!(pr.constraints.len(), 4);
    let zero = vec![0.0; pr.n_coords];
    let xi = pr.var(fp.center.diag[0]);
    let mut unit = zero.clone();
    unit[xi.offset] = 1.0;
    for lmi in &pr.constraints {
        // blocks: border Ln, identity n, center 2Ln + p + q, border
        assert_eq!(&lmi.blocks[..5], &[6, 3, 12, 2, 6]);
        let f0 = lmi.eval(&zero);
        for i in 6..9 {
            assert_eq!(f0[(i, i)], -0.25);
        }
        let f1 = lmi.eval(&unit);
        assert_eq!(f1[(9, 9)] - f0[(9, 9)], -0.25);
    }
}

#[test]
fn single_compensated_estimate_needs_no_weights() {
    let blocks = compensated_pair();
    let fp = build_compensated_fusion_problem(&blocks[..1], None).unwrap();
    assert!(fp.weights.is_empty());
    assert!(solve_from(&fp.problem, &SolverOptions::default(), Some(&fp.start)).status.is_feasible());
}

#[test]
fn mean_condition_matches_sampled_worst_case() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut certified = 0;
    for _ in 0..30 {
        let a = gaussian(3, 3, &mut rng) * rng.gen_range(0.2..0.8);
        let l = gaussian(3, 3, &mut rng) * 0.1;
        let theta = diag(&[rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]);
        let r = check_mean_stability(&a, &l, &theta, 2000, &mut rng);
        if r.holds {
            certified += 1;
            assert!(r.sampled_max < 1.0, "certified but sampled {}", r.sampled_max);
        }
        if r.sampled_max >= 1.0 {
            assert!(!r.holds);
        }
        // the triangle bound proves robust contraction, so the LMI must hold
        if spectral_norm(&(&theta * &a)) + spectral_norm(&(&theta * &l)) < 1.0 {
            assert!(r.holds);
        }
    }
    assert!(certified > 0 && certified < 30, "{certified} of 30 certified");
}
