//! Gain and fusion-weight problems for the remote estimators.

use nalgebra::DMatrix;

use super::lemma::add_border_corners;
use super::problem::{LmiBuilder, LmiProblem, VarId};
use crate::error::Result;
use crate::estimators::LocalErrorBlocks;
use crate::linalg::{block_diag, spectral_norm, vstack};

/// How the contraction bound on the error-weight matrix is posed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZetaForm {
    /// `Psi - zeta I < I`, `zeta < 1`.
    #[default]
    Literal,
    /// `Psi - zeta I < 0`, `zeta < 1`.
    Contractive,
}

/// Right border of the second-order remainder LMI.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaBorder {
    /// `-gamma K Theta M_h`, the same border as the measurement remainder.
    #[default]
    Scaled,
    /// `-gamma K Theta` without the measurement scaling.
    Unscaled,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct GainProblemOptions {
    pub zeta: ZetaForm,
    pub alpha_border: AlphaBorder,
}

/// Assembled gain-design problem with handles to its variables.
pub struct GainProblem {
    pub problem: LmiProblem,
    pub gain: VarId,
    pub psi: VarId,
    pub phi: VarId,
    pub upsilon: VarId,
    pub eps: [VarId; 3],
    pub zeta: VarId,
}

/// Adds `coef * (A - gamma K B)` at block (bi, bj).
fn add_affine_in_gain(b: &mut LmiBuilder, bi: usize, bj: usize, a: Option<&DMatrix<f64>>, k: VarId, gamma: f64, right: &DMatrix<f64>, coef: f64) {
    if let Some(a) = a {
        b.constant(bi, bj, a * coef);
    }
    if gamma != 0.0 {
        b.product(bi, bj, None, k, Some(right), -gamma * coef);
    }
}

pub fn build_gain_problem(blk: &LocalErrorBlocks, opts: &GainProblemOptions) -> Result<GainProblem> {
    let (n, m, p, q) = (blk.n(), blk.m(), blk.p(), blk.q());
    let g = blk.gamma;
    let mut pr = LmiProblem::new();
    let gain = pr.full("K", n, m);
    let psi = pr.symmetric("Psi", n);
    let phi = pr.symmetric("Phi", p);
    let upsilon = pr.symmetric("Upsilon", q);
    let eps = [pr.scalar("eps1"), pr.scalar("eps2"), pr.scalar("eps3")];
    let zeta = pr.scalar("zeta");
    pr.minimize_trace(phi, 1.0);
    pr.minimize_trace(upsilon, 1.0);

    let theta_c = &blk.theta * &blk.c;
    let s = 1.0 / 3.0;
    // Shared center: (1/3)[-I, K_C A, K_C Gamma, D_K; *, -Psi, 0, 0; *, *, -Phi, 0; *, *, *, -Upsilon]
    let center = |b: &mut LmiBuilder| {
        b.constant(1, 1, -DMatrix::identity(n, n) * s);
        add_affine_in_gain(b, 1, 2, Some(&blk.a), gain, g, &(&theta_c * &blk.a), s);
        add_affine_in_gain(b, 1, 3, Some(&blk.noise_gain), gain, g, &(&theta_c * &blk.noise_gain), s);
        add_affine_in_gain(b, 1, 4, None, gain, g, &(&blk.theta * &blk.d), s);
        b.var(2, 2, psi, -s);
        b.var(3, 3, phi, -s);
        b.var(4, 4, upsilon, -s);
    };

    // Transition remainder: border rows pick the previous error.
    let mut b = LmiBuilder::new("transition remainder", &[n, n, n, p, q, n]);
    center(&mut b);
    add_border_corners(&mut b, 0, 5, n, n, eps[0]);
    b.scalar(0, 2, eps[0], DMatrix::identity(n, n));
    add_affine_in_gain(&mut b, 1, 5, Some(&blk.m_f), gain, g, &(&theta_c * &blk.m_f), 1.0);
    pr.add_lmi(&b)?;

    // Measurement remainder: border rows see the predicted error.
    let mut b = LmiBuilder::new("measurement remainder", &[n, n, n, p, q, m]);
    center(&mut b);
    add_border_corners(&mut b, 0, 5, n, m, eps[1]);
    b.scalar(0, 2, eps[1], blk.a.clone());
    b.scalar(0, 3, eps[1], blk.noise_gain.clone());
    add_affine_in_gain(&mut b, 1, 5, None, gain, g, &(&blk.theta * &blk.m_h), 1.0);
    pr.add_lmi(&b)?;

    // Second-order remainder coupling through alpha.
    let mut b = LmiBuilder::new("coupled remainder", &[n, n, n, p, q, m]);
    center(&mut b);
    add_border_corners(&mut b, 0, 5, n, m, eps[2]);
    b.scalar(0, 2, eps[2], DMatrix::identity(n, n) * blk.alpha);
    let right = match opts.alpha_border {
        AlphaBorder::Scaled => &blk.theta * &blk.m_h,
        AlphaBorder::Unscaled => blk.theta.clone(),
    };
    add_affine_in_gain(&mut b, 1, 5, None, gain, g, &right, 1.0);
    pr.add_lmi(&b)?;

    let mut b = LmiBuilder::new("error weight bound", &[n]);
    b.var(0, 0, psi, 1.0).scalar(0, 0, zeta, -DMatrix::identity(n, n));
    if opts.zeta == ZetaForm::Literal {
        b.constant(0, 0, -DMatrix::identity(n, n));
    }
    pr.add_lmi(&b)?;
    let mut b = LmiBuilder::new("zeta below one", &[1]);
    b.scalar(0, 0, zeta, DMatrix::identity(1, 1))
        .constant(0, 0, -DMatrix::identity(1, 1))
        .margin(1e-8);
    pr.add_lmi(&b)?;

    Ok(GainProblem {
        problem: pr,
        gain,
        psi,
        phi,
        upsilon,
        eps,
        zeta,
    })
}

/// Adds `coef * (sum_{i<L} W_i (Y_i - Y_L) + Y_L)` at block (bi, bj); the
/// last weight is `I - sum W_i`.
pub(crate) fn add_weighted(b: &mut LmiBuilder, bi: usize, bj: usize, w: &[VarId], ys: &[DMatrix<f64>], coef: f64) {
    let last = ys.last().expect("at least one sensor");
    b.constant(bi, bj, last * coef);
    for (wi, yi) in w.iter().zip(ys) {
        b.product(bi, bj, None, *wi, Some(&(yi - last)), coef);
    }
}

/// Places per-sensor `n × cols_i` blocks into column block i of an
/// `n × sum(cols)` matrix.
pub(crate) fn column_placed(blocks: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let total: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut off = 0;
    blocks
        .iter()
        .map(|b| {
            let mut m = DMatrix::zeros(b.nrows(), total);
            m.view_mut((0, off), b.shape()).copy_from(b);
            off += b.ncols();
            m
        })
        .collect()
}

/// Symmetric lower-right block of a fusion center, split into the blocks of
/// the stacked error, the process noise and the stacked measurement noise.
pub struct CenterVars {
    pub diag: [VarId; 3],
    /// (0,1), (0,2), (1,2) coupling blocks.
    pub cross: [VarId; 3],
}

pub(crate) fn center_vars(pr: &mut LmiProblem, names: [&str; 6], sizes: [usize; 3]) -> CenterVars {
    let d0 = pr.symmetric(names[0], sizes[0]);
    let c01 = pr.full(names[1], sizes[0], sizes[1]);
    let c02 = pr.full(names[2], sizes[0], sizes[2]);
    let d1 = pr.symmetric(names[3], sizes[1]);
    let c12 = pr.full(names[4], sizes[1], sizes[2]);
    let d2 = pr.symmetric(names[5], sizes[2]);
    CenterVars {
        diag: [d0, d1, d2],
        cross: [c01, c02, c12],
    }
}

impl CenterVars {
    /// `-scale * [D0 C01 C02; * D1 C12; * * D2]` at blocks `first..first+3`.
    pub(crate) fn place(&self, b: &mut LmiBuilder, first: usize, scale: f64) {
        for (i, v) in self.diag.iter().enumerate() {
            b.var(first + i, first + i, *v, -scale);
        }
        b.var(first, first + 1, self.cross[0], -scale);
        b.var(first, first + 2, self.cross[1], -scale);
        b.var(first + 1, first + 2, self.cross[2], -scale);
    }

    pub(crate) fn set_scaled_identity(&self, pr: &LmiProblem, x: &mut [f64], c: f64) {
        for v in self.diag {
            let d = pr.var(v).shape().0;
            pr.set_value(x, v, &(DMatrix::identity(d, d) * c));
        }
        for v in self.cross {
            let (r, cc) = pr.var(v).shape();
            pr.set_value(x, v, &DMatrix::zeros(r, cc));
        }
    }
}

/// One bordered LMI of a fusion problem in numeric form for a fixed weight,
/// used to build a strictly feasible starting point.
pub(crate) struct BorderNumeric {
    /// Norm of the top border block (rows selecting the center).
    pub s2_norm: f64,
    /// Norm of the right border column at the fixed weight.
    pub s3_norm: f64,
}

/// Scalars and center size that make every bordered LMI strictly feasible
/// for a fixed weight: with `eps >= 2 |S3|^2 / s` the corner is at most
/// `-s/2 I`, and a center `c I` with `c > (eps |S2|^2 + 2 s |R|^2) / s`
/// dominates the rest.
pub(crate) fn feasible_center(scale: f64, row_norm: f64, borders: &[BorderNumeric]) -> (Vec<f64>, f64) {
    let mut eps = Vec::new();
    let mut c: f64 = 1.0;
    for bd in borders {
        let e = (2.0 * bd.s3_norm.powi(2) / scale).max(1e-3);
        c = c.max((e * bd.s2_norm.powi(2) + 2.0 * scale * row_norm.powi(2)) / scale);
        eps.push(e);
    }
    (eps, 2.0 * c + 1.0)
}

/// Assembled fusion-weight problem for the remote estimates.
pub struct FusionProblem {
    pub problem: LmiProblem,
    /// Free weights `W_1..W_{L-1}`; the last one is `I - sum`.
    pub weights: Vec<VarId>,
    pub center: CenterVars,
    pub eps: Vec<VarId>,
    /// Strictly feasible point at the equal-weight (or supplied) fusion.
    pub start: Vec<f64>,
}

/// Fusion-weight problem for remote estimates with designed gains
/// `gains[i]`. `start_weights` (L-1 matrices) seeds the feasible start.
pub fn build_fusion_problem(
    blocks: &[LocalErrorBlocks],
    gains: &[DMatrix<f64>],
    start_weights: Option<&[DMatrix<f64>]>,
) -> Result<FusionProblem> {
    let l = blocks.len();
    assert_eq!(gains.len(), l, "one gain per sensor");
    let n = blocks[0].n();
    let p = blocks[0].p();
    let ln = l * n;
    let qs: usize = blocks.iter().map(|b| b.q()).sum();
    let ms: usize = blocks.iter().map(|b| b.m()).sum();
    let s = 1.0 / 3.0;

    let mut pr = LmiProblem::new();
    let weights: Vec<VarId> = (0..l.saturating_sub(1)).map(|i| pr.full(&format!("W{}", i + 1), n, n)).collect();
    let center = center_vars(&mut pr, ["Psi", "Psi1", "Psi2", "Phi", "Phi1", "Upsilon"], [ln, p, qs]);
    let eps: Vec<VarId> = (1..=3).map(|i| pr.scalar(&format!("eps{i}"))).collect();
    for v in center.diag {
        pr.minimize_trace(v, 1.0);
    }

    let ya = column_placed(&blocks.iter().zip(gains).map(|(b, k)| b.a_k(k)).collect::<Vec<_>>());
    let yg: Vec<DMatrix<f64>> = blocks.iter().zip(gains).map(|(b, k)| b.gamma_k(k)).collect();
    let yd = column_placed(&blocks.iter().zip(gains).map(|(b, k)| b.d_k(k)).collect::<Vec<_>>());
    let yf = column_placed(&blocks.iter().zip(gains).map(|(b, k)| b.k_c_scaled(k)).collect::<Vec<_>>());
    let yh = column_placed(&blocks.iter().zip(gains).map(|(b, k)| b.k_theta_scaled(k)).collect::<Vec<_>>());
    let a_f = block_diag(&blocks.iter().map(|b| b.a.clone()).collect::<Vec<_>>());
    let gamma_l = vstack(&blocks.iter().map(|b| b.noise_gain.clone()).collect::<Vec<_>>());
    let alpha_l = block_diag(&blocks.iter().map(|b| DMatrix::identity(n, n) * b.alpha).collect::<Vec<_>>());

    let center_fn = |b: &mut LmiBuilder| {
        b.constant(1, 1, -DMatrix::identity(n, n) * s);
        add_weighted(b, 1, 2, &weights, &ya, s);
        add_weighted(b, 1, 3, &weights, &yg, s);
        add_weighted(b, 1, 4, &weights, &yd, s);
        center.place(b, 2, s);
    };

    let mut b = LmiBuilder::new("fusion transition remainder", &[ln, n, ln, p, qs, ln]);
    center_fn(&mut b);
    add_border_corners(&mut b, 0, 5, ln, ln, eps[0]);
    b.scalar(0, 2, eps[0], DMatrix::identity(ln, ln));
    add_weighted(&mut b, 1, 5, &weights, &yf, 1.0);
    pr.add_lmi(&b)?;

    let mut b = LmiBuilder::new("fusion measurement remainder", &[ln, n, ln, p, qs, ms]);
    center_fn(&mut b);
    add_border_corners(&mut b, 0, 5, ln, ms, eps[1]);
    b.scalar(0, 2, eps[1], a_f.clone());
    b.scalar(0, 3, eps[1], gamma_l.clone());
    add_weighted(&mut b, 1, 5, &weights, &yh, 1.0);
    pr.add_lmi(&b)?;

    let mut b = LmiBuilder::new("fusion coupled remainder", &[ln, n, ln, p, qs, ms]);
    center_fn(&mut b);
    add_border_corners(&mut b, 0, 5, ln, ms, eps[2]);
    b.scalar(0, 2, eps[2], alpha_l.clone());
    add_weighted(&mut b, 1, 5, &weights, &yh, 1.0);
    pr.add_lmi(&b)?;

    // Starting point at fixed weights.
    let w0: Vec<DMatrix<f64>> = match start_weights {
        Some(w) if w.len() == weights.len() => w.to_vec(),
        _ => vec![DMatrix::identity(n, n) / l as f64; weights.len()],
    };
    let combine = |ys: &[DMatrix<f64>]| {
        let last = ys.last().unwrap();
        let mut acc = last.clone();
        for (wi, yi) in w0.iter().zip(ys) {
            acc += wi * (yi - last);
        }
        acc
    };
    let row = crate::linalg::hstack(&[combine(&ya), combine(&yg), combine(&yd)]);
    let row_norm = spectral_norm(&row);
    let (eps0, c0) = feasible_center(
        s,
        row_norm,
        &[
            BorderNumeric { s2_norm: 1.0, s3_norm: spectral_norm(&combine(&yf)) },
            BorderNumeric { s2_norm: spectral_norm(&crate::linalg::hstack(&[a_f, gamma_l])), s3_norm: spectral_norm(&combine(&yh)) },
            BorderNumeric { s2_norm: spectral_norm(&alpha_l), s3_norm: spectral_norm(&combine(&yh)) },
        ],
    );
    let mut start = vec![0.0; pr.n_coords];
    for (v, w) in weights.iter().zip(&w0) {
        pr.set_value(&mut start, *v, w);
    }
    center.set_scaled_identity(&pr, &mut start, c0);
    for (v, e) in eps.iter().zip(eps0) {
        start[pr.var(*v).offset] = e;
    }

    Ok(FusionProblem {
        problem: pr,
        weights,
        center,
        eps,
        start,
    })
}
