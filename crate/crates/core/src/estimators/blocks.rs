//! Linearized error systems of the local estimators.
//!
//! The unknown contractions multiplying the remainder scalings never get a
//! value here; they are eliminated inside the LMI builders. Only the scaling
//! matrices and the gain-dependent nominal blocks are represented.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg::{block_diag, vstack};
use crate::models::{SensorUncertainty, SystemModel};

/// Error system of one remote (or local, with full transmission) estimator
/// at step k.
#[derive(Clone, Debug)]
pub struct LocalErrorBlocks {
    /// Dynamics Jacobian at the previous estimate.
    pub a: DMatrix<f64>,
    /// Measurement Jacobian at the current prediction.
    pub c: DMatrix<f64>,
    /// Process-noise gain.
    pub noise_gain: DMatrix<f64>,
    /// Measurement-noise gain.
    pub d: DMatrix<f64>,
    /// Transition remainder scaling.
    pub m_f: DMatrix<f64>,
    /// Measurement remainder scaling.
    pub m_h: DMatrix<f64>,
    /// Coupling scalar of the second-order remainder channel.
    pub alpha: f64,
    /// Trigger flag (0 or 1).
    pub gamma: f64,
    /// Selection matrix of the transmitted components.
    pub theta: DMatrix<f64>,
}

impl LocalErrorBlocks {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.c.nrows()
    }
    pub fn p(&self) -> usize {
        self.noise_gain.ncols()
    }
    pub fn q(&self) -> usize {
        self.d.ncols()
    }

    /// `I - gamma K Theta C`.
    pub fn k_c(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.n(), self.n()) - k * &self.theta * &self.c * self.gamma
    }

    /// `gamma K Theta`.
    pub fn k_theta(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        k * &self.theta * self.gamma
    }

    /// Nominal error transition `K_C A`.
    pub fn a_k(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        self.k_c(k) * &self.a
    }

    /// Nominal process-noise channel `K_C Gamma`.
    pub fn gamma_k(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        self.k_c(k) * &self.noise_gain
    }

    /// Measurement-noise channel `-gamma K Theta D`.
    pub fn d_k(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        -self.k_theta(k) * &self.d
    }

    /// `K_C M_f`, the border of the transition remainder.
    pub fn k_c_scaled(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        self.k_c(k) * &self.m_f
    }

    /// `-gamma K Theta M_h`, the border of the measurement remainders.
    pub fn k_theta_scaled(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        -self.k_theta(k) * &self.m_h
    }

    /// Error transition for given contractions `n_f` (n×n) and `n_h` (m×n),
    /// with the second-order channel `n_m = n_h m_f n_f / alpha`.
    pub fn a_k_perturbed(&self, k: &DMatrix<f64>, n_f: &DMatrix<f64>, n_h: &DMatrix<f64>) -> DMatrix<f64> {
        let n_m = n_h * &self.m_f * n_f / self.alpha;
        self.a_k(k) + self.k_c_scaled(k) * n_f + self.k_theta_scaled(k) * (n_h * &self.a + &n_m * self.alpha)
    }
}

/// Error blocks of a remote estimator: dynamics linearized at `x_prev`,
/// measurement at `x_pred`.
#[allow(clippy::too_many_arguments)]
pub fn build_lre_error_blocks(
    model: &SystemModel,
    sensor: usize,
    uncertainty: &SensorUncertainty,
    gamma: f64,
    theta: &DMatrix<f64>,
    k: usize,
    x_prev: &DVector<f64>,
    x_pred: &DVector<f64>,
) -> Result<LocalErrorBlocks> {
    Ok(LocalErrorBlocks {
        a: model.dynamics_jacobian(x_prev)?,
        c: model.measurement_jacobian(sensor, x_pred)?,
        noise_gain: model.dynamics.noise_gain(k.saturating_sub(1), x_prev),
        d: model.sensors[sensor].noise_gain(k),
        m_f: uncertainty.m_f.matrix_at(x_prev),
        m_h: uncertainty.m_h.matrix_at(x_pred),
        alpha: uncertainty.alpha_m_at(x_prev),
        gamma,
        theta: theta.clone(),
    })
}

/// Error blocks of a local estimator (every measurement used), with the
/// local-side remainder scalings.
pub fn build_lne_error_blocks(
    model: &SystemModel,
    sensor: usize,
    uncertainty: &SensorUncertainty,
    k: usize,
    x_prev: &DVector<f64>,
    x_pred: &DVector<f64>,
) -> Result<LocalErrorBlocks> {
    let m = model.m(sensor);
    Ok(LocalErrorBlocks {
        a: model.dynamics_jacobian(x_prev)?,
        c: model.measurement_jacobian(sensor, x_pred)?,
        noise_gain: model.dynamics.noise_gain(k.saturating_sub(1), x_prev),
        d: model.sensors[sensor].noise_gain(k),
        m_f: uncertainty.l_f.matrix_at(x_prev),
        m_h: uncertainty.l_h.matrix_at(x_pred),
        alpha: uncertainty.alpha_s_at(x_prev),
        gamma: 1.0,
        theta: DMatrix::identity(m, m),
    })
}

/// Error system of one compensated estimate at step k: the local estimator
/// part (with its designed gain) and the compensation part.
#[derive(Clone, Debug)]
pub struct CompensatedErrorBlocks {
    pub local: LocalErrorBlocks,
    /// Local estimator gain at step k.
    pub gain: DMatrix<f64>,
    /// Dynamics Jacobian at the previous compensated estimate.
    pub a_c: DMatrix<f64>,
    /// Remainder scaling of the compensation prediction.
    pub l_c: DMatrix<f64>,
    pub gamma: f64,
    pub theta: DMatrix<f64>,
}

impl CompensatedErrorBlocks {
    pub fn n(&self) -> usize {
        self.local.n()
    }

    /// `gamma Theta`.
    pub fn theta_gamma(&self) -> DMatrix<f64> {
        &self.theta * self.gamma
    }

    /// `I - gamma Theta`.
    pub fn theta_gamma_complement(&self) -> DMatrix<f64> {
        DMatrix::identity(self.n(), self.n()) - self.theta_gamma()
    }

    /// `I - K C` of the local estimator.
    pub fn k_c(&self) -> DMatrix<f64> {
        self.local.k_c(&self.gain)
    }

    /// Nominal local error transition.
    pub fn a_s(&self) -> DMatrix<f64> {
        self.local.a_k(&self.gain)
    }

    /// Nominal compensation transition `(I - gamma Theta) A_c`.
    pub fn a_theta(&self) -> DMatrix<f64> {
        self.theta_gamma_complement() * &self.a_c
    }

    pub fn gamma_s(&self) -> DMatrix<f64> {
        self.local.gamma_k(&self.gain)
    }

    /// Process-noise channel of the compensated error,
    /// `(I - gamma Theta K C) Gamma`.
    pub fn gamma_c(&self) -> DMatrix<f64> {
        (DMatrix::identity(self.n(), self.n()) - self.theta_gamma() * &self.gain * &self.local.c) * &self.local.noise_gain
    }

    /// Measurement-noise channel of the local error, `-K D`.
    pub fn d_s(&self) -> DMatrix<f64> {
        self.local.d_k(&self.gain)
    }
}

/// Stacked blocks of all compensated estimates: the joint transition of
/// (local errors, compensated errors) and its noise channels.
#[derive(Clone, Debug)]
pub struct StackedCompensatedBlocks {
    /// `[A_s 0; Theta_g A_s A_theta]`, size 2Ln.
    pub a_o: DMatrix<f64>,
    /// `[Gamma_s; Gamma_c]`, 2Ln × p.
    pub gamma_o: DMatrix<f64>,
    /// `[D_s; Theta_g D_s]`, 2Ln × sum(q).
    pub d_o: DMatrix<f64>,
}

pub fn stack_compensated(blocks: &[CompensatedErrorBlocks]) -> StackedCompensatedBlocks {
    let a_s = block_diag(&blocks.iter().map(|b| b.a_s()).collect::<Vec<_>>());
    let a_t = block_diag(&blocks.iter().map(|b| b.a_theta()).collect::<Vec<_>>());
    let th = block_diag(&blocks.iter().map(|b| b.theta_gamma()).collect::<Vec<_>>());
    let d_s = block_diag(&blocks.iter().map(|b| b.d_s()).collect::<Vec<_>>());
    let ln = a_s.nrows();
    let mut a_o = DMatrix::zeros(2 * ln, 2 * ln);
    a_o.view_mut((0, 0), (ln, ln)).copy_from(&a_s);
    a_o.view_mut((ln, 0), (ln, ln)).copy_from(&(&th * &a_s));
    a_o.view_mut((ln, ln), (ln, ln)).copy_from(&a_t);
    let gamma_o = vstack(&[
        vstack(&blocks.iter().map(|b| b.gamma_s()).collect::<Vec<_>>()),
        vstack(&blocks.iter().map(|b| b.gamma_c()).collect::<Vec<_>>()),
    ]);
    let d_o = vstack(&[d_s.clone(), &th * &d_s]);
    StackedCompensatedBlocks { a_o, gamma_o, d_o }
}
