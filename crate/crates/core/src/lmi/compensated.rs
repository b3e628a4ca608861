//! Fusion-weight problem for compensated estimates.

use nalgebra::DMatrix;

use super::design::{add_weighted, center_vars, column_placed, feasible_center, BorderNumeric, FusionProblem};
use super::lemma::add_border_corners;
use super::problem::{LmiBuilder, LmiProblem};
use crate::error::Result;
use crate::estimators::CompensatedErrorBlocks;
use crate::linalg::{block_diag, hstack, spectral_norm, vstack};

/// Per-sensor pieces of the fused compensated error, before weighting.
struct SensorRows {
    /// n × 2Ln: the local-error and compensated-error transitions.
    state: DMatrix<f64>,
    process: DMatrix<f64>,
    /// n × sum(q).
    measurement: DMatrix<f64>,
    /// n × Ln, transition remainder of the local estimator.
    transition_border: DMatrix<f64>,
    /// n × sum(m), measurement remainder of the local estimator.
    measurement_border: DMatrix<f64>,
    /// n × Ln, remainder of the compensation prediction.
    compensation_border: DMatrix<f64>,
}

fn sensor_rows(blocks: &[CompensatedErrorBlocks]) -> Vec<SensorRows> {
    let state_local = column_placed(&blocks.iter().map(|b| b.theta_gamma() * b.a_s()).collect::<Vec<_>>());
    let state_comp = column_placed(&blocks.iter().map(|b| b.a_theta()).collect::<Vec<_>>());
    let meas = column_placed(&blocks.iter().map(|b| b.theta_gamma() * b.d_s()).collect::<Vec<_>>());
    let tb = column_placed(
        &blocks
            .iter()
            .map(|b| b.theta_gamma() * b.k_c() * &b.local.m_f)
            .collect::<Vec<_>>(),
    );
    let mb = column_placed(
        &blocks
            .iter()
            .map(|b| -(b.theta_gamma() * &b.gain * &b.local.m_h))
            .collect::<Vec<_>>(),
    );
    let cb = column_placed(
        &blocks
            .iter()
            .map(|b| -(b.theta_gamma_complement() * &b.l_c))
            .collect::<Vec<_>>(),
    );
    (0..blocks.len())
        .map(|i| SensorRows {
            state: hstack(&[state_local[i].clone(), state_comp[i].clone()]),
            process: blocks[i].gamma_c(),
            measurement: meas[i].clone(),
            transition_border: tb[i].clone(),
            measurement_border: mb[i].clone(),
            compensation_border: cb[i].clone(),
        })
        .collect()
}

/// Fusion-weight problem over the compensated estimates. The center is
/// scaled by 1/4 and shared by four bordered LMIs: local transition
/// remainder, local measurement remainder, the coupled second-order term,
/// and the compensation-prediction remainder.
pub fn build_compensated_fusion_problem(
    blocks: &[CompensatedErrorBlocks],
    start_weights: Option<&[DMatrix<f64>]>,
) -> Result<FusionProblem> {
    let l = blocks.len();
    let n = blocks[0].n();
    let p = blocks[0].local.p();
    let ln = l * n;
    let qs: usize = blocks.iter().map(|b| b.local.q()).sum();
    let ms: usize = blocks.iter().map(|b| b.local.m()).sum();
    let s = 0.25;

    let mut pr = LmiProblem::new();
    let weights: Vec<_> = (0..l.saturating_sub(1)).map(|i| pr.full(&format!("W{}", i + 1), n, n)).collect();
    let center = center_vars(&mut pr, ["Xi", "Xi1", "Xi2", "Lambda", "Lambda1", "Sigma"], [2 * ln, p, qs]);
    let eps: Vec<_> = (1..=4).map(|i| pr.scalar(&format!("rho{i}"))).collect();
    for v in center.diag {
        pr.minimize_trace(v, 1.0);
    }

    let rows = sensor_rows(blocks);
    let pick = |f: fn(&SensorRows) -> &DMatrix<f64>| rows.iter().map(|r| f(r).clone()).collect::<Vec<_>>();
    let y_state = pick(|r| &r.state);
    let y_proc = pick(|r| &r.process);
    let y_meas = pick(|r| &r.measurement);
    let y_tb = pick(|r| &r.transition_border);
    let y_mb = pick(|r| &r.measurement_border);
    let y_cb = pick(|r| &r.compensation_border);

    let a_f = block_diag(&blocks.iter().map(|b| b.local.a.clone()).collect::<Vec<_>>());
    let gamma_l = vstack(&blocks.iter().map(|b| b.local.noise_gain.clone()).collect::<Vec<_>>());
    let alpha_l = block_diag(&blocks.iter().map(|b| DMatrix::identity(n, n) * b.local.alpha).collect::<Vec<_>>());
    let local_part = |m: &DMatrix<f64>| hstack(&[m.clone(), DMatrix::zeros(ln, ln)]);
    let comp_part = hstack(&[DMatrix::zeros(ln, ln), DMatrix::identity(ln, ln)]);

    let center_fn = |b: &mut LmiBuilder| {
        b.constant(1, 1, -DMatrix::identity(n, n) * s);
        add_weighted(b, 1, 2, &weights, &y_state, s);
        add_weighted(b, 1, 3, &weights, &y_proc, s);
        add_weighted(b, 1, 4, &weights, &y_meas, s);
        center.place(b, 2, s);
    };

    let mut b = LmiBuilder::new("local transition remainder", &[ln, n, 2 * ln, p, qs, ln]);
    center_fn(&mut b);
    add_border_corners(&mut b, 0, 5, ln, ln, eps[0]);
    b.scalar(0, 2, eps[0], local_part(&DMatrix::identity(ln, ln)));
    add_weighted(&mut b, 1, 5, &weights, &y_tb, 1.0);
    pr.add_lmi(&b)?;

    let mut b = LmiBuilder::new("local measurement remainder", &[ln, n, 2 * ln, p, qs, ms]);
    center_fn(&mut b);
    add_border_corners(&mut b, 0, 5, ln, ms, eps[1]);
    b.scalar(0, 2, eps[1], local_part(&a_f));
    b.scalar(0, 3, eps[1], gamma_l.clone());
    add_weighted(&mut b, 1, 5, &weights, &y_mb, 1.0);
    pr.add_lmi(&b)?;

    let mut b = LmiBuilder::new("local coupled remainder", &[ln, n, 2 * ln, p, qs, ms]);
    center_fn(&mut b);
    add_border_corners(&mut b, 0, 5, ln, ms, eps[2]);
    b.scalar(0, 2, eps[2], local_part(&alpha_l));
    add_weighted(&mut b, 1, 5, &weights, &y_mb, 1.0);
    pr.add_lmi(&b)?;

    let mut b = LmiBuilder::new("compensation remainder", &[ln, n, 2 * ln, p, qs, ln]);
    center_fn(&mut b);
    add_border_corners(&mut b, 0, 5, ln, ln, eps[3]);
    b.scalar(0, 2, eps[3], comp_part.clone());
    add_weighted(&mut b, 1, 5, &weights, &y_cb, 1.0);
    pr.add_lmi(&b)?;

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
    let row_norm = spectral_norm(&hstack(&[combine(&y_state), combine(&y_proc), combine(&y_meas)]));
    let mb_norm = spectral_norm(&combine(&y_mb));
    let (eps0, c0) = feasible_center(
        s,
        row_norm,
        &[
            BorderNumeric { s2_norm: 1.0, s3_norm: spectral_norm(&combine(&y_tb)) },
            BorderNumeric { s2_norm: spectral_norm(&hstack(&[a_f, gamma_l])), s3_norm: mb_norm },
            BorderNumeric { s2_norm: spectral_norm(&alpha_l), s3_norm: mb_norm },
            BorderNumeric { s2_norm: 1.0, s3_norm: spectral_norm(&combine(&y_cb)) },
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
