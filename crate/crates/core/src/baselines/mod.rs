//! Classical nonlinear filters used as comparison baselines: EKF, UKF and
//! cubature Kalman filter, all with additive noise.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{check_finite_vec, robust_cholesky, sym};
use crate::models::SystemModel;

/// Unscented transform parameters.
pub const UT_ALPHA: f64 = 1e-3;
pub const UT_BETA: f64 = 2.0;
pub const UT_KAPPA: f64 = 0.0;

const INNOVATION_REG: f64 = 1e-9;
const EIGEN_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Ekf,
    Ukf,
    Ckf,
}

impl FilterKind {
    pub const ALL: [FilterKind; 3] = [FilterKind::Ekf, FilterKind::Ukf, FilterKind::Ckf];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Ekf => "ekf",
            FilterKind::Ukf => "ukf",
            FilterKind::Ckf => "ckf",
        }
    }
}

#[derive(Clone, Debug)]
pub struct GaussianFilterState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Assumed covariance of the process noise `w`.
    pub q_w: DMatrix<f64>,
    /// Assumed covariance of the sensor noise `v`.
    pub q_v: DMatrix<f64>,
    /// Number of covariance square roots that needed an eigenvalue floor.
    pub repairs: usize,
    /// Number of innovation covariances that needed regularization.
    pub regularizations: usize,
}

impl GaussianFilterState {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, q_w: DMatrix<f64>, q_v: DMatrix<f64>) -> Self {
        GaussianFilterState {
            mean,
            cov,
            q_w,
            q_v,
            repairs: 0,
            regularizations: 0,
        }
    }
}

/// Sigma points as columns with mean and covariance weights.
struct SigmaSet {
    points: Vec<DVector<f64>>,
    wm: Vec<f64>,
    wc: Vec<f64>,
}

fn sqrt_factor(state: &mut GaussianFilterState, p: &DMatrix<f64>) -> DMatrix<f64> {
    let (l, repaired) = robust_cholesky(p, EIGEN_FLOOR);
    if repaired {
        state.repairs += 1;
        warn!("covariance square root repaired with eigenvalue floor {EIGEN_FLOOR}");
    }
    l
}

fn sigma_points(kind: FilterKind, state: &mut GaussianFilterState, mean: &DVector<f64>, p: &DMatrix<f64>) -> SigmaSet {
    let n = mean.len();
    let nf = n as f64;
    let l = sqrt_factor(state, p);
    match kind {
        FilterKind::Ukf => {
            let lambda = UT_ALPHA * UT_ALPHA * (nf + UT_KAPPA) - nf;
            let c = (nf + lambda).sqrt();
            let mut points = vec![mean.clone()];
            for sign in [1.0, -1.0] {
                for j in 0..n {
                    points.push(mean + l.column(j) * (sign * c));
                }
            }
            let w = 1.0 / (2.0 * (nf + lambda));
            let mut wm = vec![w; 2 * n + 1];
            let mut wc = wm.clone();
            wm[0] = lambda / (nf + lambda);
            wc[0] = wm[0] + 1.0 - UT_ALPHA * UT_ALPHA + UT_BETA;
            SigmaSet { points, wm, wc }
        }
        FilterKind::Ckf => {
            let c = nf.sqrt();
            let mut points = Vec::with_capacity(2 * n);
            for sign in [1.0, -1.0] {
                for j in 0..n {
                    points.push(mean + l.column(j) * (sign * c));
                }
            }
            let w = vec![1.0 / (2.0 * nf); 2 * n];
            SigmaSet {
                points,
                wm: w.clone(),
                wc: w,
            }
        }
        FilterKind::Ekf => unreachable!("EKF uses Jacobians"),
    }
}

/// Weighted mean, accumulated as offsets from the first point so the large
/// opposite-signed unscented weights do not cancel catastrophically.
fn weighted_mean(ys: &[DVector<f64>], w: &[f64]) -> DVector<f64> {
    let base = &ys[0];
    let mut acc = base.clone();
    for (y, wi) in ys.iter().zip(w).skip(1) {
        acc += (y - base) * *wi;
    }
    debug_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    acc
}

fn weighted_cross(a: &[DVector<f64>], am: &DVector<f64>, b: &[DVector<f64>], bm: &DVector<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(am.len(), bm.len());
    for ((x, y), wi) in a.iter().zip(b).zip(w) {
        acc += (x - am) * (y - bm).transpose() * *wi;
    }
    acc
}

/// Measurement update shared by all filters.
fn update(
    state: &mut GaussianFilterState,
    x_pred: DVector<f64>,
    p_pred: DMatrix<f64>,
    y_pred: DVector<f64>,
    s: DMatrix<f64>,
    cross: DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<()> {
    let m = s.nrows();
    let mut s = sym(&s);
    let chol = match s.clone().cholesky() {
        Some(c) => c,
        None => {
            state.regularizations += 1;
            warn!("innovation covariance singular, adding {INNOVATION_REG} I");
            s += DMatrix::identity(m, m) * INNOVATION_REG;
            s.clone()
                .cholesky()
                .ok_or_else(|| Error::Numerical("innovation covariance is not positive definite".into()))?
        }
    };
    // K = cross S^-1
    let gain = chol.solve(&cross.transpose()).transpose();
    let mean = x_pred + &gain * (y - y_pred);
    check_finite_vec(&mean, "filter mean")?;
    let cov = p_pred - &gain * s * gain.transpose();
    state.mean = mean;
    state.cov = sym(&cov);
    Ok(())
}

fn process_cov(state: &GaussianFilterState, model: &SystemModel, k: usize, x: &DVector<f64>) -> DMatrix<f64> {
    let g = model.dynamics.noise_gain(k.saturating_sub(1), x);
    &g * &state.q_w * g.transpose()
}

fn measurement_cov(state: &GaussianFilterState, model: &SystemModel, sensor: usize, k: usize) -> DMatrix<f64> {
    let d = model.sensors[sensor].noise_gain(k);
    &d * &state.q_v * d.transpose()
}

pub fn ekf_step(state: &mut GaussianFilterState, model: &SystemModel, sensor: usize, y: &DVector<f64>, k: usize) -> Result<()> {
    let a = model.dynamics_jacobian(&state.mean)?;
    let x_pred = model.predict(&state.mean);
    let p_pred = sym(&(&a * &state.cov * a.transpose() + process_cov(state, model, k, &state.mean)));
    let c = model.measurement_jacobian(sensor, &x_pred)?;
    let y_pred = model.sensors[sensor].output(&x_pred);
    let s = &c * &p_pred * c.transpose() + measurement_cov(state, model, sensor, k);
    let cross = &p_pred * c.transpose();
    update(state, x_pred, p_pred, y_pred, s, cross, y)
}

fn sigma_step(kind: FilterKind, state: &mut GaussianFilterState, model: &SystemModel, sensor: usize, y: &DVector<f64>, k: usize) -> Result<()> {
    let mean = state.mean.clone();
    let cov = state.cov.clone();
    let set = sigma_points(kind, state, &mean, &cov);
    let props: Vec<_> = set.points.iter().map(|x| model.predict(x)).collect();
    let x_pred = weighted_mean(&props, &set.wm);
    let p_pred = sym(&(weighted_cross(&props, &x_pred, &props, &x_pred, &set.wc) + process_cov(state, model, k, &mean)));

    let set = sigma_points(kind, state, &x_pred, &p_pred);
    let outs: Vec<_> = set.points.iter().map(|x| model.sensors[sensor].output(x)).collect();
    let y_pred = weighted_mean(&outs, &set.wm);
    let s = weighted_cross(&outs, &y_pred, &outs, &y_pred, &set.wc) + measurement_cov(state, model, sensor, k);
    let cross = weighted_cross(&set.points, &x_pred, &outs, &y_pred, &set.wc);
    update(state, x_pred, p_pred, y_pred, s, cross, y)
}

pub fn ukf_step(state: &mut GaussianFilterState, model: &SystemModel, sensor: usize, y: &DVector<f64>, k: usize) -> Result<()> {
    sigma_step(FilterKind::Ukf, state, model, sensor, y, k)
}

pub fn ckf_step(state: &mut GaussianFilterState, model: &SystemModel, sensor: usize, y: &DVector<f64>, k: usize) -> Result<()> {
    sigma_step(FilterKind::Ckf, state, model, sensor, y, k)
}

pub fn filter_step(kind: FilterKind, state: &mut GaussianFilterState, model: &SystemModel, sensor: usize, y: &DVector<f64>, k: usize) -> Result<()> {
    match kind {
        FilterKind::Ekf => ekf_step(state, model, sensor, y, k),
        FilterKind::Ukf => ukf_step(state, model, sensor, y, k),
        FilterKind::Ckf => ckf_step(state, model, sensor, y, k),
    }
}

/// Mean of `h(x)` for `x ~ N(mean, cov)` under the unscented transform.
pub fn unscented_mean(h: impl Fn(&DVector<f64>) -> DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> DVector<f64> {
    let mut scratch = GaussianFilterState::new(mean.clone(), cov.clone(), DMatrix::zeros(0, 0), DMatrix::zeros(0, 0));
    let set = sigma_points(FilterKind::Ukf, &mut scratch, mean, cov);
    let ys: Vec<_> = set.points.iter().map(h).collect();
    weighted_mean(&ys, &set.wm)
}
