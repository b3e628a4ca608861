//! Stability conditions for the compensated estimates under random
//! component selection.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::problem::{LmiBuilder, LmiProblem};
use super::solver::{solve, SolveStatus, SolverOptions};
use crate::channels::ReductionPattern;
use crate::linalg::spectral_norm;

/// Random matrix with unit spectral norm: orthogonal for square shapes,
/// a normalized Gaussian matrix otherwise.
pub fn random_contraction<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(rows, cols, |_, _| rng.sample(StandardNormal));
    if rows == cols {
        let qr = g.qr();
        let mut q = qr.q();
        let r = qr.r();
        for j in 0..cols {
            if r[(j, j)] < 0.0 {
                let mut c = q.column_mut(j);
                c.neg_mut();
            }
        }
        q
    } else {
        let s = spectral_norm(&g).max(1e-300);
        g / s
    }
}

/// `E{I - gamma Theta}` for a trigger probability and a pattern
/// distribution.
pub fn expected_complement(distribution: &[(f64, ReductionPattern)], trigger_rate: f64, n: usize) -> DMatrix<f64> {
    let mut e_theta = DMatrix::zeros(n, n);
    for (w, p) in distribution {
        e_theta += p.matrix() * *w;
    }
    DMatrix::identity(n, n) - e_theta * trigger_rate
}

#[derive(Clone, Debug)]
pub struct MeanStabilityReport {
    pub holds: bool,
    pub status: SolveStatus,
    /// Certificate scalar when the LMI is feasible.
    pub rho: Option<f64>,
    /// `||Theta_I A_c||` without uncertainty.
    pub nominal_norm: f64,
    /// Largest `||Theta_I (A_c + L_c P)||` over the sampled contractions.
    pub sampled_max: f64,
}

/// LMI in `rho` equivalent to `||Theta_I (A_c + L_c P)|| < 1` for every
/// contraction `P`:
///
/// ```text
/// [ -rho I   0          rho I        0           ]
/// [  *      -I          Theta_I A_c  Theta_I L_c ]  < 0
/// [  *       *         -I            0           ]
/// [  *       *          *           -rho I       ]
/// ```
pub fn mean_stability_problem(a_c: &DMatrix<f64>, l_c: &DMatrix<f64>, theta_i: &DMatrix<f64>) -> (LmiProblem, super::VarId) {
    let n = a_c.nrows();
    let mut pr = LmiProblem::new();
    let rho = pr.scalar("rho");
    let id = DMatrix::identity(n, n);
    let mut b = LmiBuilder::new("mean contraction", &[n, n, n, l_c.ncols()]);
    b.scalar(0, 0, rho, -id.clone())
        .scalar(0, 2, rho, id.clone())
        .constant(1, 1, -id.clone())
        .constant(1, 2, theta_i * a_c)
        .constant(1, 3, theta_i * l_c)
        .constant(2, 2, -id)
        .scalar(3, 3, rho, -DMatrix::identity(l_c.ncols(), l_c.ncols()));
    pr.add_lmi(&b).expect("block shapes are consistent");
    (pr, rho)
}

pub fn check_mean_stability<R: Rng + ?Sized>(
    a_c: &DMatrix<f64>,
    l_c: &DMatrix<f64>,
    theta_i: &DMatrix<f64>,
    samples: usize,
    rng: &mut R,
) -> MeanStabilityReport {
    let (pr, rho) = mean_stability_problem(a_c, l_c, theta_i);
    let sol = solve(&pr, &SolverOptions::default());
    let holds = sol.status.is_feasible();
    let mut sampled_max: f64 = 0.0;
    for _ in 0..samples {
        let p = random_contraction(l_c.ncols(), a_c.ncols(), rng);
        sampled_max = sampled_max.max(spectral_norm(&(theta_i * (a_c + l_c * p))));
    }
    MeanStabilityReport {
        holds,
        status: sol.status,
        rho: holds.then(|| pr.scalar_value(&sol.x, rho)),
        nominal_norm: spectral_norm(&(theta_i * a_c)),
        sampled_max,
    }
}

/// `E{(I - gamma Theta) Q (I - gamma Theta)}` with `gamma ~ Bernoulli(g)`
/// independent of the pattern.
pub fn expected_congruence(q: &DMatrix<f64>, distribution: &[(f64, ReductionPattern)], trigger_rate: f64) -> DMatrix<f64> {
    let n = q.nrows();
    let mut acc = q * (1.0 - trigger_rate);
    for (w, p) in distribution {
        let c = DMatrix::identity(n, n) - p.matrix();
        acc += (&c * q * &c) * (trigger_rate * w);
    }
    acc
}

#[derive(Clone, Debug)]
pub struct WindowStabilityReport {
    pub holds: bool,
    /// Norm of the nested expectation without uncertainty.
    pub nominal: f64,
    /// `prod_j (||A_j|| + ||L_j||)^2 * ||E{(I - gamma Theta)^2}||`, an
    /// upper envelope over all contractions.
    pub envelope: f64,
    /// Largest norm over the sampled contraction sequences.
    pub sampled_max: f64,
}

/// Nested expected recursion over a window. `a_seq[j]` and `l_seq[j]` are
/// the transition Jacobian and remainder scaling `j` steps back from the
/// newest step; the recursion starts at `Q = I` with the newest factor.
pub fn check_window_stability<R: Rng + ?Sized>(
    a_seq: &[DMatrix<f64>],
    l_seq: &[DMatrix<f64>],
    distribution: &[(f64, ReductionPattern)],
    trigger_rate: f64,
    samples: usize,
    rng: &mut R,
) -> WindowStabilityReport {
    assert_eq!(a_seq.len(), l_seq.len(), "one remainder scaling per Jacobian");
    let n = a_seq.first().map_or(0, |a| a.nrows());
    let nested = |perturb: &mut dyn FnMut(usize) -> DMatrix<f64>| {
        let mut q = DMatrix::identity(n, n);
        for j in 0..a_seq.len() {
            let a = &a_seq[j] + perturb(j);
            q = a.transpose() * expected_congruence(&q, distribution, trigger_rate) * a;
        }
        spectral_norm(&q)
    };
    let nominal = nested(&mut |_| DMatrix::zeros(n, n));
    let mut sampled_max = nominal;
    for _ in 0..samples {
        sampled_max = sampled_max.max(nested(&mut |j| {
            let l = &l_seq[j];
            l * random_contraction(l.ncols(), n, rng)
        }));
    }
    let contraction = spectral_norm(&expected_congruence(&DMatrix::identity(n, n), distribution, trigger_rate));
    let envelope = a_seq
        .iter()
        .zip(l_seq)
        .map(|(a, l)| (spectral_norm(a) + spectral_norm(l)).powi(2) * contraction)
        .product();
    WindowStabilityReport {
        holds: sampled_max < 1.0,
        nominal,
        envelope,
        sampled_max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn zero_complement_always_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 0.0, 2.5]);
        let r = check_mean_stability(&a, &DMatrix::identity(2, 2), &DMatrix::zeros(2, 2), 50, &mut rng);
        assert!(r.holds);
    }

    #[test]
    fn scalar_mean_condition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ok = check_mean_stability(&m1(1.8), &m1(0.0), &m1(0.5), 10, &mut rng);
        assert!(ok.holds && (ok.nominal_norm - 0.9).abs() < 1e-12);
        let bad = check_mean_stability(&m1(2.2), &m1(0.0), &m1(0.5), 10, &mut rng);
        assert!(!bad.holds);
    }

    #[test]
    fn scalar_window_recursion() {
        // Full pattern sent half the time: E{(1 - gamma theta)^2} = 0.5, and
        // a^2 = 1.28 gives 0.64.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dist = vec![(1.0, ReductionPattern::full(1))];
        let r = check_window_stability(&[m1(1.28f64.sqrt())], &[m1(0.0)], &dist, 0.5, 0, &mut rng);
        assert!((r.nominal - 0.64).abs() < 1e-12);
        assert!(r.holds);
    }

    #[test]
    fn full_transmission_window_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = DMatrix::from_row_slice(2, 2, &[1.5, 0.3, 0.0, 1.2]);
        let dist = vec![(1.0, ReductionPattern::full(2))];
        let r = check_window_stability(&[a.clone(), a], &vec![DMatrix::identity(2, 2) * 0.1; 2], &dist, 1.0, 100, &mut rng);
        assert!(r.holds && r.nominal == 0.0 && r.sampled_max == 0.0);
    }
}
