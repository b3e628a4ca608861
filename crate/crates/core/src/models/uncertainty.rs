use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Diagonal scaling of a linearization remainder, constant or state-dependent.
#[derive(Clone)]
pub enum Scaling {
    Constant(DVector<f64>),
    StateDependent(Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>),
}

impl fmt::Debug for Scaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scaling::Constant(d) => write!(f, "Constant({:?})", d.as_slice()),
            Scaling::StateDependent(_) => write!(f, "StateDependent(..)"),
        }
    }
}

impl Scaling {
    pub fn constant(d: &[f64]) -> Self {
        Scaling::Constant(DVector::from_column_slice(d))
    }

    pub fn diagonal_at(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Scaling::Constant(d) => d.clone(),
            Scaling::StateDependent(f) => f(x),
        }
    }

    pub fn matrix_at(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.diagonal_at(x))
    }

    fn validate(&self, what: &str, dim: usize) -> Result<()> {
        if let Scaling::Constant(d) = self {
            if d.len() != dim {
                return Err(Error::dim(what.to_string(), dim, d.len()));
            }
            if d.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::Config(format!("{what} must have positive diagonal entries")));
            }
        }
        Ok(())
    }
}

/// Remainder scalings for one sensor: `m_*` for the remote estimator and
/// `l_*` for the local estimator and compensated predictor.
#[derive(Clone, Debug)]
pub struct SensorUncertainty {
    pub m_f: Scaling,
    pub m_h: Scaling,
    /// Coupling scalar for the remote estimator; `None` uses `max diag(m_f)`.
    pub alpha_m: Option<f64>,
    pub l_f: Scaling,
    pub l_h: Scaling,
    pub l_c: Scaling,
    pub alpha_s: Option<f64>,
}

impl SensorUncertainty {
    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        self.m_f.validate("M_f scaling", n)?;
        self.m_h.validate("M_h scaling", m)?;
        self.l_f.validate("L_f scaling", n)?;
        self.l_h.validate("L_h scaling", m)?;
        self.l_c.validate("L_c scaling", n)?;
        for (alpha, scale, name) in [(self.alpha_m, &self.m_f, "alpha_m"), (self.alpha_s, &self.l_f, "alpha_s")] {
            if let (Some(a), Scaling::Constant(d)) = (alpha, scale) {
                let floor = d.max();
                if !(a.is_finite() && a >= floor) {
                    return Err(Error::Config(format!(
                        "{name} = {a} is below the largest transition scaling {floor}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Effective coupling scalar at `x` for the remote estimator.
    pub fn alpha_m_at(&self, x: &DVector<f64>) -> f64 {
        let floor = self.m_f.diagonal_at(x).max();
        self.alpha_m.map_or(floor, |a| a.max(floor))
    }

    pub fn alpha_s_at(&self, x: &DVector<f64>) -> f64 {
        let floor = self.l_f.diagonal_at(x).max();
        self.alpha_s.map_or(floor, |a| a.max(floor))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> SensorUncertainty {
        SensorUncertainty {
            m_f: Scaling::constant(&[0.02, 0.01, 0.03]),
            m_h: Scaling::constant(&[0.03, 0.03, 0.02]),
            alpha_m: Some(1.0),
            l_f: Scaling::constant(&[0.03, 0.01, 0.02]),
            l_h: Scaling::constant(&[0.03, 0.03, 0.02]),
            l_c: Scaling::constant(&[0.03, 0.01, 0.02]),
            alpha_s: None,
        }
    }

    #[test]
    fn alpha_defaults_to_largest_scaling() {
        let u = reference();
        u.validate(3, 3).unwrap();
        let x = DVector::zeros(3);
        assert_eq!(u.alpha_m_at(&x), 1.0);
        assert!((u.alpha_s_at(&x) - 0.03).abs() < 1e-15);
    }

    #[test]
    fn alpha_below_scaling_is_rejected() {
        let mut u = reference();
        u.alpha_m = Some(0.01);
        assert!(u.validate(3, 3).is_err());
        let mut u = reference();
        u.m_h = Scaling::constant(&[0.03, -0.01, 0.02]);
        assert!(u.validate(3, 3).is_err());
    }
}
