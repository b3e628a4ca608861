//! Local, remote and compensated estimators and their fusion.

mod blocks;

use nalgebra::{DMatrix, DVector};

pub use blocks::{
    build_lne_error_blocks, build_lre_error_blocks, stack_compensated, CompensatedErrorBlocks, LocalErrorBlocks,
    StackedCompensatedBlocks,
};

use crate::channels::{compensate_estimate, ChannelOutput};
use crate::error::{Error, Result};
use crate::linalg::check_finite_vec;
use crate::lmi::{
    build_gain_problem, solve, GainProblemOptions, SolveStatus, SolverOptions,
};
use crate::models::SystemModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorKind {
    /// Runs on every raw measurement.
    Local,
    /// Runs on compensated, possibly reduced measurements.
    Remote,
}

#[derive(Clone, Debug)]
pub struct LocalEstimatorState {
    pub kind: EstimatorKind,
    pub estimate: DVector<f64>,
    pub prediction: DVector<f64>,
    pub gain: DMatrix<f64>,
}

impl LocalEstimatorState {
    pub fn new(kind: EstimatorKind, x0: DVector<f64>, m: usize) -> Self {
        let n = x0.len();
        LocalEstimatorState {
            kind,
            prediction: x0.clone(),
            estimate: x0,
            gain: DMatrix::zeros(n, m),
        }
    }

    /// Sets `prediction = f(estimate)` and returns it.
    pub fn predict(&mut self, model: &SystemModel) -> &DVector<f64> {
        self.prediction = model.predict(&self.estimate);
        &self.prediction
    }

    /// Correction with the current gain; `z` is the raw or compensated
    /// measurement.
    pub fn correct(&mut self, model: &SystemModel, sensor: usize, z: &DVector<f64>, k: usize) -> Result<()> {
        let innovation = z - model.sensors[sensor].output(&self.prediction);
        let x = &self.prediction + &self.gain * innovation;
        check_finite_vec(&x, "local estimate").map_err(|_| Error::Diverged {
            run: 0,
            step: k,
            what: format!("estimate of sensor {sensor}"),
        })?;
        self.estimate = x;
        Ok(())
    }
}

/// One step of a local estimator on the raw measurement `y` with the gain
/// already designed for step k.
pub fn lne_step(state: &mut LocalEstimatorState, model: &SystemModel, sensor: usize, y: &DVector<f64>, k: usize) -> Result<()> {
    state.predict(model);
    state.correct(model, sensor, y, k)
}

/// One step of a remote estimator. `out` is what arrived over the link; the
/// missing components are filled with `h(prediction)` before correction, so
/// an untriggered step is a pure prediction.
pub fn lre_step(state: &mut LocalEstimatorState, model: &SystemModel, sensor: usize, out: &ChannelOutput, k: usize) -> Result<()> {
    state.predict(model);
    let predicted = model.sensors[sensor].output(&state.prediction);
    let z = crate::channels::compensate_measurement(out, &predicted);
    state.correct(model, sensor, &z, k)
}

/// Compensated estimate from the link output and the previous compensated
/// estimate.
pub fn cse_step(previous: &DVector<f64>, model: &SystemModel, out: &ChannelOutput) -> DVector<f64> {
    compensate_estimate(out, &model.predict(previous))
}

/// Fusion weights `W_1..W_L` with `W_L = I - sum_{i<L} W_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionWeights {
    weights: Vec<DMatrix<f64>>,
}

impl FusionWeights {
    /// Completes `free` (L-1 matrices) with the last weight.
    pub fn from_free(free: Vec<DMatrix<f64>>, n: usize) -> Self {
        let mut last = DMatrix::identity(n, n);
        for w in &free {
            last -= w;
        }
        let mut weights = free;
        weights.push(last);
        FusionWeights { weights }
    }

    pub fn equal(l: usize, n: usize) -> Self {
        Self::from_free(vec![DMatrix::identity(n, n) / l as f64; l - 1], n)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    /// The L-1 free weights.
    pub fn free(&self) -> &[DMatrix<f64>] {
        &self.weights[..self.weights.len() - 1]
    }
}

pub fn fuse(weights: &FusionWeights, locals: &[DVector<f64>]) -> DVector<f64> {
    assert_eq!(weights.len(), locals.len(), "one weight per local estimate");
    let mut acc = DVector::zeros(locals[0].len());
    for (w, x) in weights.weights().iter().zip(locals) {
        acc += w * x;
    }
    acc
}

/// Result of one gain design.
#[derive(Clone, Debug)]
pub struct GainDesign {
    pub gain: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub upsilon: DMatrix<f64>,
    pub zeta: f64,
    pub status: SolveStatus,
    pub objective: f64,
}

/// Designs a gain for the given error system. Returns `None` when the solver
/// finds no strictly feasible point.
pub fn design_gain(blocks: &LocalErrorBlocks, opts: &GainProblemOptions, solver: &SolverOptions) -> Option<GainDesign> {
    let gp = build_gain_problem(blocks, opts).ok()?;
    let sol = solve(&gp.problem, solver);
    if !sol.status.is_feasible() {
        return None;
    }
    let pr = &gp.problem;
    Some(GainDesign {
        gain: pr.value(&sol.x, gp.gain),
        psi: pr.value(&sol.x, gp.psi),
        phi: pr.value(&sol.x, gp.phi),
        upsilon: pr.value(&sol.x, gp.upsilon),
        zeta: pr.scalar_value(&sol.x, gp.zeta),
        status: sol.status,
        objective: sol.objective,
    })
}

#[cfg(test)]
mod tests;
