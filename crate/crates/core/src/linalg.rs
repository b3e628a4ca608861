//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn diag(d: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(d))
}

/// Largest eigenvalue of the symmetric part of `m`.
pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    sym(m).symmetric_eigenvalues().max()
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    sym(m).symmetric_eigenvalues().min()
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let g = if m.nrows() <= m.ncols() {
        m * m.transpose()
    } else {
        m.transpose() * m
    };
    g.symmetric_eigenvalues().max().max(0.0).sqrt()
}

pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let r: usize = blocks.iter().map(|b| b.nrows()).sum();
    let c: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(r, c);
    let (mut i, mut j) = (0, 0);
    for b in blocks {
        out.view_mut((i, j), b.shape()).copy_from(b);
        i += b.nrows();
        j += b.ncols();
    }
    out
}

pub fn vstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let c = blocks.first().map_or(0, |b| b.ncols());
    let r: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(r, c);
    let mut i = 0;
    for b in blocks {
        assert_eq!(b.ncols(), c, "vstack column mismatch");
        out.view_mut((i, 0), b.shape()).copy_from(b);
        i += b.nrows();
    }
    out
}

pub fn hstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let r = blocks.first().map_or(0, |b| b.nrows());
    let c: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(r, c);
    let mut j = 0;
    for b in blocks {
        assert_eq!(b.nrows(), r, "hstack row mismatch");
        out.view_mut((0, j), b.shape()).copy_from(b);
        j += b.ncols();
    }
    out
}

pub fn stack_vectors(vs: &[DVector<f64>]) -> DVector<f64> {
    let n: usize = vs.iter().map(|v| v.len()).sum();
    let mut out = DVector::zeros(n);
    let mut i = 0;
    for v in vs {
        out.rows_mut(i, v.len()).copy_from(v);
        i += v.len();
    }
    out
}

pub fn check_finite_vec(v: &DVector<f64>, what: &str) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            what: what.to_string(),
            index,
        }),
        None => Ok(()),
    }
}

pub fn check_finite_mat(m: &DMatrix<f64>, what: &str) -> Result<()> {
    match m.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            what: what.to_string(),
            index,
        }),
        None => Ok(()),
    }
}

/// Cholesky factor of a symmetric matrix, repairing small negative
/// eigenvalues by flooring them at `floor`. Returns the factor and whether a
/// repair was needed.
pub fn robust_cholesky(p: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, bool) {
    let s = sym(p);
    if let Some(c) = s.clone().cholesky() {
        return (c.l(), false);
    }
    let eig = s.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let repaired = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    let l = sym(&repaired)
        .cholesky()
        .map(|c| c.l())
        .unwrap_or_else(|| DMatrix::from_diagonal(&vals.map(f64::sqrt)));
    (l, true)
}

/// Projection of a symmetric matrix onto the positive semidefinite cone.
pub fn psd_projection(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = sym(m).symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    sym(&(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()))
}
