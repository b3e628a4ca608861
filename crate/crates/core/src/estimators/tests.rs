use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::*;
use crate::channels::{transmit, ReductionPattern};
use crate::models::{make_vehicle_scenario, LinearDynamics, LinearMeasurement, SystemModel, VehicleParams};

fn linear_2x2() -> SystemModel {
    SystemModel::new(
        Arc::new(LinearDynamics {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 0.9]),
            gamma: DMatrix::identity(2, 2),
        }),
        vec![Arc::new(LinearMeasurement {
            c: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.3, 1.0]),
            d: DMatrix::identity(2, 2),
        })],
    )
}

fn state(x: &[f64], gain: DMatrix<f64>) -> LocalEstimatorState {
    let mut s = LocalEstimatorState::new(EstimatorKind::Local, DVector::from_row_slice(x), gain.nrows());
    s.gain = gain;
    s
}

#[test]
fn zero_gain_is_pure_prediction() {
    let model = linear_2x2();
    let mut s = state(&[1.0, -2.0], DMatrix::zeros(2, 2));
    lne_step(&mut s, &model, 0, &DVector::from_row_slice(&[10.0, 10.0]), 1).unwrap();
    assert_eq!(s.estimate, DVector::from_row_slice(&[0.0, -1.8]));
}

#[test]
fn zero_innovation_keeps_prediction() {
    let model = linear_2x2();
    let mut s = state(&[1.0, -2.0], DMatrix::from_element(2, 2, 0.7));
    let pred = model.predict(&s.estimate);
    let y = model.sensors[0].output(&pred);
    lne_step(&mut s, &model, 0, &y, 1).unwrap();
    assert_eq!(s.estimate, pred);
}

#[test]
fn linear_step_by_hand() {
    // x- = (1 + 0.5*2, 0.9*2) = (2, 1.8); h(x-) = (2, 0.6 + 1.8) = (2, 2.4)
    // innovation = (3, 2) - (2, 2.4) = (1, -0.4)
    // K = [0.5 0; 0.1 0.2] -> correction (0.5, 0.02)
    let model = linear_2x2();
    let mut s = state(&[1.0, 2.0], DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.1, 0.2]));
    lne_step(&mut s, &model, 0, &DVector::from_row_slice(&[3.0, 2.0]), 1).unwrap();
    assert!((s.estimate[0] - 2.5).abs() < 1e-14);
    assert!((s.estimate[1] - 1.82).abs() < 1e-14);
}

#[test]
fn non_finite_estimate_is_an_error() {
    let model = linear_2x2();
    let mut s = state(&[1.0, 2.0], DMatrix::identity(2, 2));
    let err = lne_step(&mut s, &model, 0, &DVector::from_row_slice(&[f64::NAN, 0.0]), 7).unwrap_err();
    assert!(matches!(err, Error::Diverged { step: 7, .. }));
}

#[test]
fn untriggered_remote_step_is_pure_prediction() {
    let model = linear_2x2();
    let mut s = state(&[1.0, 2.0], DMatrix::from_element(2, 2, 0.3));
    let out = transmit(1, false, ReductionPattern::full(2), &DVector::from_row_slice(&[50.0, -50.0]));
    lre_step(&mut s, &model, 0, &out, 1).unwrap();
    assert_eq!(s.estimate, model.predict(&DVector::from_row_slice(&[1.0, 2.0])));
}

#[test]
fn full_transmission_matches_local_step() {
    let model = linear_2x2();
    let gain = DMatrix::from_row_slice(2, 2, &[0.4, -0.1, 0.2, 0.6]);
    let y = DVector::from_row_slice(&[3.0, -1.0]);
    let mut local = state(&[0.5, 1.5], gain.clone());
    let mut remote = state(&[0.5, 1.5], gain);
    lne_step(&mut local, &model, 0, &y, 1).unwrap();
    lre_step(&mut remote, &model, 0, &transmit(1, true, ReductionPattern::full(2), &y), 1).unwrap();
    assert_eq!(local.estimate, remote.estimate);
}

#[test]
fn partial_transmission_innovates_only_on_sent_components() {
    let model = linear_2x2();
    // identity gain exposes the innovation directly
    let mut s = state(&[0.5, 1.5], DMatrix::identity(2, 2));
    let y = DVector::from_row_slice(&[3.0, -1.0]);
    let out = transmit(1, true, ReductionPattern::new(2, &[1]).unwrap(), &y);
    lre_step(&mut s, &model, 0, &out, 1).unwrap();
    let pred = &s.prediction;
    let h = model.sensors[0].output(pred);
    let innovation = &s.estimate - pred;
    assert_eq!(innovation[0], 0.0);
    assert!((innovation[1] - (y[1] - h[1])).abs() < 1e-14);
}

#[test]
fn compensated_estimate_recursion() {
    let model = linear_2x2();
    let x0 = DVector::from_row_slice(&[1.0, 1.0]);
    let sent = [
        (true, vec![0, 1], [4.0, 5.0]),
        (false, vec![], [0.0, 0.0]),
        (true, vec![1], [7.0, -3.0]),
        (true, vec![0], [2.0, 9.0]),
    ];
    let mut c = x0.clone();
    let mut oracle = x0;
    for (k, (trig, idx, xs)) in sent.iter().enumerate() {
        let xs = DVector::from_row_slice(xs);
        let pattern = if idx.is_empty() {
            ReductionPattern::full(2)
        } else {
            ReductionPattern::new(2, idx).unwrap()
        };
        c = cse_step(&c, &model, &transmit(k + 1, *trig, pattern, &xs));
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 0.9]);
        let pred = &a * &oracle;
        for j in 0..2 {
            oracle[j] = if *trig && idx.contains(&j) { xs[j] } else { pred[j] };
        }
        assert_eq!(c, oracle, "step {}", k + 1);
    }
}

#[test]
fn always_full_transmission_tracks_the_local_estimate() {
    let model = linear_2x2();
    let mut c = DVector::from_row_slice(&[9.0, 9.0]);
    for k in 1..5 {
        let xs = DVector::from_row_slice(&[k as f64, -(k as f64)]);
        c = cse_step(&c, &model, &transmit(k, true, ReductionPattern::full(2), &xs));
        assert_eq!(c, xs);
    }
}

#[test]
fn never_transmitting_is_open_loop_prediction() {
    let model = linear_2x2();
    let mut c = DVector::from_row_slice(&[1.0, 2.0]);
    let mut open = c.clone();
    for k in 1..6 {
        c = cse_step(&c, &model, &transmit(k, false, ReductionPattern::full(2), &DVector::zeros(2)));
        open = model.predict(&open);
    }
    assert_eq!(c, open);
}

#[test]
fn fusion_arithmetic() {
    let a = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
    let b = DVector::from_row_slice(&[-1.0, 0.0, 5.0]);
    assert_eq!(fuse(&FusionWeights::equal(1, 3), std::slice::from_ref(&a)), a);

    let w = FusionWeights::from_free(vec![DMatrix::from_fn(3, 3, |i, j| 0.1 * (i + 2 * j) as f64)], 3);
    let fused = fuse(&w, &[a.clone(), a.clone()]);
    assert!((fused - &a).abs().max() < 1e-14);

    let w = FusionWeights::from_free(vec![DMatrix::identity(3, 3) * 0.3], 3);
    let fused = fuse(&w, &[a.clone(), b.clone()]);
    assert!((fused - (a * 0.3 + b * 0.7)).abs().max() < 1e-14);
}

#[test]
fn weights_sum_to_identity() {
    let free = vec![
        DMatrix::from_fn(3, 3, |i, j| (i as f64 - j as f64) * 0.37),
        DMatrix::from_fn(3, 3, |i, j| 0.11 * (i * j) as f64),
    ];
    let w = FusionWeights::from_free(free, 3);
    let total = w.weights().iter().fold(DMatrix::zeros(3, 3), |acc, m| acc + m);
    assert_eq!(total, DMatrix::identity(3, 3));
    assert_eq!(w.free().len(), 2);
}

/// True one-step error of a fully transmitting estimator on the vehicle
/// model against the propagated linear error blocks, with `w = v = 0`.
fn linearization_gap(dir: &[f64], scale: f64) -> (f64, f64) {
    let sc = make_vehicle_scenario(&VehicleParams::reference()).unwrap();
    let model = &sc.model;
    let x_prev = DVector::from_row_slice(&[3.0, -2.0, 0.4]);
    let dir = DVector::from_row_slice(dir);
    let xhat_prev = &x_prev - &dir * scale;
    let gain = DMatrix::from_row_slice(3, 3, &[0.3, 0.1, 0.0, -0.2, 0.25, 0.05, 0.02, -0.04, 0.03]);

    let x = model.predict(&x_prev);
    let y = model.sensors[0].output(&x);
    let mut s = LocalEstimatorState::new(EstimatorKind::Remote, xhat_prev.clone(), 3);
    s.gain = gain.clone();
    lre_step(&mut s, model, 0, &transmit(1, true, ReductionPattern::full(3), &y), 1).unwrap();
    let err = &x - &s.estimate;

    let blocks = build_lre_error_blocks(model, 0, &sc.uncertainty[0], 1.0, &DMatrix::identity(3, 3), 1, &xhat_prev, &s.prediction).unwrap();
    let e_prev = &x_prev - &xhat_prev;
    let linear = blocks.a_k(&gain) * &e_prev;

    // exact recursion with the realized remainders
    let r_f = &x - &s.prediction - &blocks.a * &e_prev;
    let r_h = &y - model.sensors[0].output(&s.prediction) - &blocks.c * (&x - &s.prediction);
    let exact = &linear + blocks.k_c(&gain) * &r_f - blocks.k_theta(&gain) * &r_h;
    ((&err - &linear).norm(), (&err - exact).norm())
}

const DIRECTIONS: [[f64; 3]; 4] = [[0.6, -0.8, 0.3], [-0.6, 0.8, -0.3], [1.0, 0.0, 0.0], [0.1, 0.2, -1.0]];

#[test]
fn error_recursion_is_first_order_accurate() {
    // halving the initial error divides the linearization gap by 4 up to
    // third-order terms
    for dir in DIRECTIONS {
        let (big, _) = linearization_gap(&dir, 1e-2);
        let (small, _) = linearization_gap(&dir, 5e-3);
        assert!(big > 0.0);
        let ratio = big / small;
        assert!((ratio - 4.0).abs() < 0.05, "{dir:?}: ratio {ratio}");
    }
}

#[test]
fn error_recursion_with_realized_remainders_is_exact() {
    for dir in DIRECTIONS {
        for scale in [1e-2, 0.3, 1.5] {
            let (_, exact_gap) = linearization_gap(&dir, scale);
            assert!(exact_gap < 1e-12, "scale {scale}: {exact_gap}");
        }
    }
}

#[test]
fn error_blocks_of_vehicle_have_table_shapes() {
    let sc = make_vehicle_scenario(&VehicleParams::reference()).unwrap();
    let x = DVector::from_row_slice(&[1.0, 2.0, 0.3]);
    let theta = ReductionPattern::new(3, &[0, 2]).unwrap().matrix();
    let b = build_lre_error_blocks(&sc.model, 1, &sc.uncertainty[1], 1.0, &theta, 4, &x, &sc.model.predict(&x)).unwrap();
    let k = DMatrix::zeros(3, 3);
    assert_eq!((b.n(), b.m(), b.p(), b.q()), (3, 3, 2, 3));
    assert_eq!(b.a_k(&k).shape(), (3, 3));
    assert_eq!(b.gamma_k(&k).shape(), (3, 2));
    assert_eq!(b.d_k(&k).shape(), (3, 3));
    assert_eq!(b.k_c_scaled(&k).shape(), (3, 3));
    assert_eq!(b.k_theta_scaled(&k).shape(), (3, 3));
}

#[test]
fn vehicle_gain_design_is_finite() {
    let sc = make_vehicle_scenario(&VehicleParams::reference()).unwrap();
    let x = sc.xhat0.clone();
    let b = build_lne_error_blocks(&sc.model, 0, &sc.uncertainty[0], 1, &x, &sc.model.predict(&x)).unwrap();
    let d = design_gain(&b, &GainProblemOptions::default(), &SolverOptions::default()).expect("feasible design");
    assert!(d.gain.iter().all(|v| v.is_finite()));
    assert!(d.zeta < 1.0);
}
