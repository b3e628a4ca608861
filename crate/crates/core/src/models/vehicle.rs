//! Planar vehicle localized by two groups of range sensors.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{
    Dynamics, GaussianNoise, Measurement, NoiseSource, Scaling, SensorUncertainty, SystemModel,
    UniformAffineNoise,
};
use crate::error::{Error, Result};
use crate::linalg::diag;

/// How process noise enters the vehicle model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseEntry {
    /// Noise perturbs the speed and turn-rate commands (two components).
    Commands,
    /// Noise is added to the three state components.
    Additive,
}

/// `x = (p_x, p_y, theta)` driven by forward speed `c_t` and turn rate `c_r`.
#[derive(Clone, Debug)]
pub struct VehicleDynamics {
    pub sample_time: f64,
    pub speed: f64,
    pub turn_rate: f64,
    pub entry: NoiseEntry,
}

impl VehicleDynamics {
    fn advance(&self, x: &DVector<f64>, ct: f64, cr: f64) -> DVector<f64> {
        if cr.abs() < 1e-6 {
            // Turn rate too close to zero for the arc formula.
            return DVector::from_element(3, f64::NAN);
        }
        let heading = x[2] + self.sample_time * cr / 2.0;
        let radius = ct / cr;
        DVector::from_vec(vec![
            x[0] + radius * heading.cos(),
            x[1] + radius * heading.sin(),
            x[2] + self.sample_time * cr,
        ])
    }
}

impl Dynamics for VehicleDynamics {
    fn state_dim(&self) -> usize {
        3
    }

    fn noise_dim(&self) -> usize {
        match self.entry {
            NoiseEntry::Commands => 2,
            NoiseEntry::Additive => 3,
        }
    }

    fn transition(&self, x: &DVector<f64>) -> DVector<f64> {
        self.advance(x, self.speed, self.turn_rate)
    }

    fn step(&self, x: &DVector<f64>, w: &DVector<f64>, _k: usize) -> DVector<f64> {
        match self.entry {
            NoiseEntry::Commands => self.advance(x, self.speed + w[0], self.turn_rate + w[1]),
            NoiseEntry::Additive => self.transition(x) + w,
        }
    }

    /// Derivative of the step with respect to the command perturbations at
    /// nominal commands and the heading of `x`.
    fn noise_gain(&self, _k: usize, x: &DVector<f64>) -> DMatrix<f64> {
        match self.entry {
            NoiseEntry::Additive => DMatrix::identity(3, 3),
            NoiseEntry::Commands => {
                let (t0, ct, cr) = (self.sample_time, self.speed, self.turn_rate);
                let heading = x[2] + t0 * cr / 2.0;
                let (s, c) = heading.sin_cos();
                let r = ct / cr;
                DMatrix::from_row_slice(
                    3,
                    2,
                    &[
                        c / cr,
                        -r / cr * c - r * t0 / 2.0 * s,
                        s / cr,
                        -r / cr * s + r * t0 / 2.0 * c,
                        0.0,
                        t0,
                    ],
                )
            }
        }
    }

    fn jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let heading = x[2] + self.sample_time * self.turn_rate / 2.0;
        let r = self.speed / self.turn_rate;
        let (s, c) = heading.sin_cos();
        Some(DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.0, -r * s, 0.0, 1.0, r * c, 0.0, 0.0, 1.0],
        ))
    }
}

/// Distances from the vehicle position to a set of anchors.
#[derive(Clone, Debug)]
pub struct RangeSensors {
    pub anchors: Vec<[f64; 2]>,
    pub noise_gain: DMatrix<f64>,
}

impl Measurement for RangeSensors {
    fn output_dim(&self) -> usize {
        self.anchors.len()
    }

    fn noise_dim(&self) -> usize {
        self.noise_gain.ncols()
    }

    fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.anchors.len(),
            self.anchors
                .iter()
                .map(|a| ((x[0] - a[0]).powi(2) + (x[1] - a[1]).powi(2)).sqrt()),
        )
    }

    fn noise_gain(&self, _k: usize) -> DMatrix<f64> {
        self.noise_gain.clone()
    }

    fn jacobian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>> {
        let mut j = DMatrix::zeros(self.anchors.len(), 3);
        for (i, a) in self.anchors.iter().enumerate() {
            let (dx, dy) = (x[0] - a[0], x[1] - a[1]);
            let r = (dx * dx + dy * dy).sqrt();
            j[(i, 0)] = dx / r;
            j[(i, 1)] = dy / r;
        }
        Some(j)
    }
}

/// Noise specification of the vehicle scenario.
#[derive(Clone, Debug)]
pub enum VehicleNoise {
    /// Uniform bounded noises `scale * beta + offset`, per command and per
    /// sensor component.
    Bounded {
        command_scale: Vec<f64>,
        command_offset: Vec<f64>,
        sensor_scale: Vec<Vec<f64>>,
        sensor_offset: Vec<Vec<f64>>,
    },
    /// Zero-mean Gaussian noise added to the state, and Gaussian sensor
    /// noise, with the given per-component variances.
    Gaussian {
        process_variance: Vec<f64>,
        sensor_variance: Vec<f64>,
    },
}

#[derive(Clone, Debug)]
pub struct VehicleParams {
    pub sample_time: f64,
    pub speed: f64,
    pub turn_rate: f64,
    /// Anchor positions for each sensor group.
    pub anchors: Vec<Vec<[f64; 2]>>,
    /// Diagonal of each group's noise gain.
    pub noise_gains: Vec<Vec<f64>>,
    pub noise: VehicleNoise,
    pub uncertainty: Vec<SensorUncertainty>,
    pub x0: Vec<f64>,
    pub xhat0: Vec<f64>,
    /// Diagonal of the initial covariance handed to the baseline filters.
    pub p0: Vec<f64>,
}

impl VehicleParams {
    /// The reference localization setup.
    pub fn reference() -> Self {
        let group = |m_f: &[f64], m_h: &[f64], l_f: &[f64], l_h: &[f64]| SensorUncertainty {
            m_f: Scaling::constant(m_f),
            m_h: Scaling::constant(m_h),
            alpha_m: Some(1.0),
            l_f: Scaling::constant(l_f),
            l_h: Scaling::constant(l_h),
            l_c: Scaling::constant(l_f),
            alpha_s: Some(1.0),
        };
        VehicleParams {
            sample_time: 1.8,
            speed: 0.7,
            turn_rate: 0.8,
            anchors: vec![
                vec![[-25.0, -5.0], [-30.0, 15.0], [-25.0, 35.0]],
                vec![[25.0, -5.0], [30.0, 15.0], [25.0, 35.0]],
            ],
            noise_gains: vec![vec![0.7, 0.6, 0.5], vec![0.6, 0.7, 0.8]],
            noise: VehicleNoise::reference_bounded(),
            uncertainty: vec![
                group(&[0.02, 0.01, 0.03], &[0.03, 0.03, 0.02], &[0.03, 0.01, 0.02], &[0.03, 0.03, 0.02]),
                group(&[0.03, 0.01, 0.02], &[0.03, 0.02, 0.02], &[0.03, 0.01, 0.02], &[0.03, 0.03, 0.02]),
            ],
            x0: vec![0.0, 0.0, 0.0],
            xhat0: vec![0.5, -0.5, 0.05],
            p0: vec![0.5, 0.5, 0.01],
        }
    }
}

impl VehicleNoise {
    pub fn reference_bounded() -> Self {
        VehicleNoise::Bounded {
            command_scale: vec![0.3, 0.2],
            command_offset: vec![-0.1, -0.1],
            sensor_scale: vec![vec![0.3, 0.2, 0.4], vec![0.2, 0.5, 0.4]],
            sensor_offset: vec![vec![-0.2, -0.1, -0.1], vec![-0.1, -0.3, -0.2]],
        }
    }

    pub fn reference_gaussian() -> Self {
        VehicleNoise::Gaussian {
            process_variance: vec![1e-3; 3],
            sensor_variance: vec![1e-2; 3],
        }
    }
}

/// Everything a simulation needs about the plant and its sensors.
#[derive(Clone)]
pub struct Scenario {
    pub model: SystemModel,
    pub process_noise: Arc<dyn NoiseSource>,
    pub measurement_noise: Vec<Arc<dyn NoiseSource>>,
    pub uncertainty: Vec<SensorUncertainty>,
    pub x0: DVector<f64>,
    pub xhat0: DVector<f64>,
    pub p0: DMatrix<f64>,
}

pub fn make_vehicle_scenario(p: &VehicleParams) -> Result<Scenario> {
    for (name, v) in [("sample_time", p.sample_time), ("speed", p.speed), ("turn_rate", p.turn_rate)] {
        if !v.is_finite() {
            return Err(Error::Config(format!("{name} must be finite")));
        }
    }
    if p.turn_rate.abs() < 1e-6 {
        return Err(Error::Config("turn_rate must be bounded away from zero".into()));
    }
    let groups = p.anchors.len();
    if groups == 0 {
        return Err(Error::Config("at least one sensor group is required".into()));
    }
    if p.noise_gains.len() != groups {
        return Err(Error::dim("sensor noise gains", groups, p.noise_gains.len()));
    }
    if p.uncertainty.len() != groups {
        return Err(Error::dim("sensor uncertainty entries", groups, p.uncertainty.len()));
    }
    for (name, v) in [("x0", &p.x0), ("xhat0", &p.xhat0), ("p0", &p.p0)] {
        if v.len() != 3 {
            return Err(Error::dim(name.to_string(), 3, v.len()));
        }
    }

    let entry = match p.noise {
        VehicleNoise::Bounded { .. } => NoiseEntry::Commands,
        VehicleNoise::Gaussian { .. } => NoiseEntry::Additive,
    };
    let dynamics = VehicleDynamics {
        sample_time: p.sample_time,
        speed: p.speed,
        turn_rate: p.turn_rate,
        entry,
    };
    let mut sensors: Vec<Arc<dyn Measurement>> = Vec::new();
    for (i, (anchors, gains)) in p.anchors.iter().zip(&p.noise_gains).enumerate() {
        if anchors.is_empty() {
            return Err(Error::Config(format!("sensor group {i} has no anchors")));
        }
        if gains.len() != anchors.len() {
            return Err(Error::dim(format!("noise gain of sensor group {i}"), anchors.len(), gains.len()));
        }
        sensors.push(Arc::new(RangeSensors {
            anchors: anchors.clone(),
            noise_gain: diag(gains),
        }));
        p.uncertainty[i].validate(3, anchors.len())?;
    }

    let (process_noise, measurement_noise): (Arc<dyn NoiseSource>, Vec<Arc<dyn NoiseSource>>) = match &p.noise {
        VehicleNoise::Bounded {
            command_scale,
            command_offset,
            sensor_scale,
            sensor_offset,
        } => {
            if command_scale.len() != 2 {
                return Err(Error::dim("command noise coefficients", 2, command_scale.len()));
            }
            if sensor_scale.len() != groups || sensor_offset.len() != groups {
                return Err(Error::dim("sensor noise tables", groups, sensor_scale.len().min(sensor_offset.len())));
            }
            let w = Arc::new(UniformAffineNoise::new(command_scale.clone(), command_offset.clone())?);
            let mut vs: Vec<Arc<dyn NoiseSource>> = Vec::new();
            for i in 0..groups {
                if sensor_scale[i].len() != p.anchors[i].len() {
                    return Err(Error::dim(format!("noise table of sensor group {i}"), p.anchors[i].len(), sensor_scale[i].len()));
                }
                vs.push(Arc::new(UniformAffineNoise::new(sensor_scale[i].clone(), sensor_offset[i].clone())?));
            }
            (w, vs)
        }
        VehicleNoise::Gaussian {
            process_variance,
            sensor_variance,
        } => {
            if process_variance.len() != 3 {
                return Err(Error::dim("process noise variances", 3, process_variance.len()));
            }
            let mut vs: Vec<Arc<dyn NoiseSource>> = Vec::new();
            for (i, a) in p.anchors.iter().enumerate() {
                if sensor_variance.len() != a.len() {
                    return Err(Error::dim(format!("noise variances of sensor group {i}"), a.len(), sensor_variance.len()));
                }
                vs.push(Arc::new(GaussianNoise {
                    variance: sensor_variance.clone(),
                }));
            }
            (
                Arc::new(GaussianNoise {
                    variance: process_variance.clone(),
                }),
                vs,
            )
        }
    };

    Ok(Scenario {
        model: SystemModel::new(Arc::new(dynamics), sensors),
        process_noise,
        measurement_noise,
        uncertainty: p.uncertainty.clone(),
        x0: DVector::from_column_slice(&p.x0),
        xhat0: DVector::from_column_slice(&p.xhat0),
        p0: diag(&p.p0),
    })
}
