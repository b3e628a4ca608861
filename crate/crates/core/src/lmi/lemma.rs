//! Bordered-matrix form of the uncertainty-removal lemma:
//! `S1 + eps S2' S2 + S3 S3' / eps < 0` holds for some `eps > 0` iff
//!
//! ```text
//! [ -eps I   eps S2   0      ]
//! [  *       S1       S3     ]  < 0
//! [  *       *       -eps I  ]
//! ```
//!
//! which is affine in `eps` and in anything `S1`, `S3` depend on affinely.

use nalgebra::DMatrix;
use rand::Rng;

use super::problem::{LmiBuilder, LmiProblem, VarId};
use super::stability::random_contraction;
use crate::linalg::lambda_max;

/// Numeric bordered matrix for a given `eps`.
pub fn bordered(s1: &DMatrix<f64>, s2: &DMatrix<f64>, s3: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let (c, d, r) = (s2.nrows(), s1.nrows(), s3.ncols());
    assert_eq!(s2.ncols(), d);
    assert_eq!(s3.nrows(), d);
    let mut m = DMatrix::zeros(c + d + r, c + d + r);
    m.view_mut((0, 0), (c, c)).fill_with_identity();
    m.view_mut((0, 0), (c, c)).scale_mut(-eps);
    m.view_mut((0, c), (c, d)).copy_from(&(s2 * eps));
    m.view_mut((c, 0), (d, c)).copy_from(&(s2.transpose() * eps));
    m.view_mut((c, c), (d, d)).copy_from(s1);
    m.view_mut((c, c + d), (d, r)).copy_from(s3);
    m.view_mut((c + d, c), (r, d)).copy_from(&s3.transpose());
    for i in 0..r {
        m[(c + d + i, c + d + i)] = -eps;
    }
    m
}

/// The Schur-complement form `S1 + eps S2' S2 + S3 S3' / eps`.
pub fn schur_form(s1: &DMatrix<f64>, s2: &DMatrix<f64>, s3: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    s1 + s2.transpose() * s2 * eps + s3 * s3.transpose() / eps
}

/// Adds the `-eps I` corner blocks of a bordered LMI whose border blocks are
/// the first and last entries of the builder's block list.
pub fn add_border_corners(b: &mut LmiBuilder, first: usize, last: usize, top: usize, bottom: usize, eps: VarId) {
    b.scalar(first, first, eps, -DMatrix::identity(top, top));
    b.scalar(last, last, eps, -DMatrix::identity(bottom, bottom));
}

/// Feasibility problem in `eps` for the robust condition
/// `S1 + S3 P S2 + (S3 P S2)' < 0` for every contraction `P`.
pub fn robust_problem(s1: &DMatrix<f64>, s2: &DMatrix<f64>, s3: &DMatrix<f64>) -> (LmiProblem, VarId) {
    let (c, d, r) = (s2.nrows(), s1.nrows(), s3.ncols());
    let mut pr = LmiProblem::new();
    let eps = pr.scalar("eps");
    let mut b = LmiBuilder::new("robust negativity", &[c, d, r]);
    add_border_corners(&mut b, 0, 2, c, r, eps);
    b.scalar(0, 1, eps, s2.clone()).constant(1, 1, s1.clone()).constant(1, 2, s3.clone());
    pr.add_lmi(&b).expect("conformable blocks");
    (pr, eps)
}

/// Largest eigenvalue of `S1 + S3 P S2 + (S3 P S2)'` over `samples`
/// random unit-norm contractions.
pub fn sampled_worst<R: Rng + ?Sized>(s1: &DMatrix<f64>, s2: &DMatrix<f64>, s3: &DMatrix<f64>, samples: usize, rng: &mut R) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let p = random_contraction(s3.ncols(), s2.nrows(), rng);
        let t = s3 * p * s2;
        worst = worst.max(lambda_max(&(s1 + &t + t.transpose())));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bordered_and_schur_agree_in_sign() {
        let s1 = DMatrix::from_row_slice(2, 2, &[-3.0, 0.5, 0.5, -2.0]);
        let s2 = DMatrix::from_row_slice(1, 2, &[0.4, 0.1]);
        let s3 = DMatrix::from_row_slice(2, 1, &[0.3, -0.2]);
        for eps in [0.05, 0.5, 1.0, 5.0, 50.0] {
            let a = lambda_max(&bordered(&s1, &s2, &s3, eps)) < 0.0;
            let b = lambda_max(&schur_form(&s1, &s2, &s3, eps)) < 0.0;
            assert_eq!(a, b, "eps = {eps}");
        }
    }
}
