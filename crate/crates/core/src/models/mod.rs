//! Plant and sensor models, bounded-noise sources and uncertainty scalings.

mod noise;
mod uncertainty;
mod vehicle;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{check_finite_mat, check_finite_vec};

pub use noise::{stream_rng, GaussianNoise, NoiseSource, UniformAffineNoise};
pub use uncertainty::{Scaling, SensorUncertainty};
pub use vehicle::{
    make_vehicle_scenario, NoiseEntry, RangeSensors, Scenario, VehicleDynamics, VehicleNoise,
    VehicleParams,
};

/// State transition `x(k+1) = f(x(k)) + Gamma(k) w(k)`.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    /// Noise-free transition `f(x)`.
    fn transition(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Process-noise gain used by the estimators, linearized at `x`.
    fn noise_gain(&self, k: usize, x: &DVector<f64>) -> DMatrix<f64>;
    /// Realized transition driven by the noise sample `w`.
    fn step(&self, x: &DVector<f64>, w: &DVector<f64>, k: usize) -> DVector<f64> {
        self.transition(x) + self.noise_gain(k, x) * w
    }
    /// Analytic Jacobian of `f`, when available.
    fn jacobian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

/// Sensor output `y(k) = h(x(k)) + D(k) v(k)`.
pub trait Measurement: Send + Sync {
    fn output_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn output(&self, x: &DVector<f64>) -> DVector<f64>;
    fn noise_gain(&self, k: usize) -> DMatrix<f64>;
    fn jacobian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

/// Linear time-invariant dynamics.
#[derive(Clone, Debug)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

impl Dynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn noise_dim(&self) -> usize {
        self.gamma.ncols()
    }
    fn transition(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x
    }
    fn noise_gain(&self, _k: usize, _x: &DVector<f64>) -> DMatrix<f64> {
        self.gamma.clone()
    }
    fn jacobian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.a.clone())
    }
}

#[derive(Clone, Debug)]
pub struct LinearMeasurement {
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl Measurement for LinearMeasurement {
    fn output_dim(&self) -> usize {
        self.c.nrows()
    }
    fn noise_dim(&self) -> usize {
        self.d.ncols()
    }
    fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x
    }
    fn noise_gain(&self, _k: usize) -> DMatrix<f64> {
        self.d.clone()
    }
    fn jacobian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.c.clone())
    }
}

/// Central-difference Jacobian with step `1e-6 * max(1, |x_j|)`.
pub fn numerical_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>) -> DMatrix<f64> {
    let f0 = f(x);
    let mut jac = DMatrix::zeros(f0.len(), x.len());
    for j in 0..x.len() {
        let h = 1e-6 * x[j].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

/// A plant together with its sensor network.
#[derive(Clone)]
pub struct SystemModel {
    pub dynamics: Arc<dyn Dynamics>,
    pub sensors: Vec<Arc<dyn Measurement>>,
}

impl SystemModel {
    pub fn new(dynamics: Arc<dyn Dynamics>, sensors: Vec<Arc<dyn Measurement>>) -> Self {
        SystemModel { dynamics, sensors }
    }

    pub fn n(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn p(&self) -> usize {
        self.dynamics.noise_dim()
    }

    pub fn sensor_count(&self) -> usize {
        self.sensors.len()
    }

    pub fn m(&self, i: usize) -> usize {
        self.sensors[i].output_dim()
    }

    pub fn q(&self, i: usize) -> usize {
        self.sensors[i].noise_dim()
    }

    pub fn step_truth(&self, x: &DVector<f64>, w: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
        if x.len() != self.n() {
            return Err(Error::dim("state", self.n(), x.len()));
        }
        if w.len() != self.p() {
            return Err(Error::dim("process noise", self.p(), w.len()));
        }
        let next = self.dynamics.step(x, w, k);
        check_finite_vec(&next, "propagated state")?;
        Ok(next)
    }

    pub fn measure(&self, i: usize, x: &DVector<f64>, v: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
        let s = &self.sensors[i];
        if x.len() != self.n() {
            return Err(Error::dim("state", self.n(), x.len()));
        }
        if v.len() != s.noise_dim() {
            return Err(Error::dim(format!("measurement noise of sensor {i}"), s.noise_dim(), v.len()));
        }
        let y = s.output(x) + s.noise_gain(k) * v;
        check_finite_vec(&y, "measurement")?;
        Ok(y)
    }

    pub fn predict(&self, x: &DVector<f64>) -> DVector<f64> {
        self.dynamics.transition(x)
    }

    pub fn dynamics_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let j = self
            .dynamics
            .jacobian(x)
            .unwrap_or_else(|| numerical_jacobian(|z| self.dynamics.transition(z), x));
        check_finite_mat(&j, "dynamics Jacobian")?;
        Ok(j)
    }

    pub fn measurement_jacobian(&self, i: usize, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let s = &self.sensors[i];
        let j = s
            .jacobian(x)
            .unwrap_or_else(|| numerical_jacobian(|z| s.output(z), x));
        check_finite_mat(&j, &format!("measurement Jacobian of sensor {i}"))?;
        Ok(j)
    }
}
