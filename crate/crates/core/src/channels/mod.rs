//! Resource-constrained links: send-on-delta triggering, component
//! selection under a bandwidth budget, and receiver-side compensation.

mod pattern;
mod selection;
mod trigger;

use nalgebra::{DMatrix, DVector};

pub use pattern::{binomial, enumerate_patterns, ReductionPattern};
pub use selection::{SelectionPolicy, Selector};
pub use trigger::TriggerState;

/// What the receiver gets at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelOutput {
    pub k: usize,
    pub triggered: bool,
    pub pattern: Option<ReductionPattern>,
    /// Selected components in ascending index order.
    pub payload: Vec<f64>,
    pub dim: usize,
}

impl ChannelOutput {
    pub fn gamma(&self) -> f64 {
        if self.triggered {
            1.0
        } else {
            0.0
        }
    }

    /// The reduced signal embedded back into full length, zeros elsewhere.
    pub fn expanded(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim);
        if let Some(p) = &self.pattern {
            for (idx, v) in p.indices().into_iter().zip(&self.payload) {
                out[idx] = *v;
            }
        }
        out
    }

    /// `gamma * Theta` as a diagonal matrix.
    pub fn selection_matrix(&self) -> DMatrix<f64> {
        match &self.pattern {
            Some(p) => p.matrix(),
            None => DMatrix::zeros(self.dim, self.dim),
        }
    }

    /// Integer encoding of the transmitted mask (0 when nothing was sent).
    pub fn mask_bits(&self) -> u64 {
        self.pattern.map_or(0, |p| p.mask())
    }
}

/// Builds the channel output; nothing is sent when `triggered` is false.
pub fn transmit(k: usize, triggered: bool, pattern: ReductionPattern, signal: &DVector<f64>) -> ChannelOutput {
    assert_eq!(pattern.dim(), signal.len(), "pattern and signal dimensions differ");
    if !triggered {
        return ChannelOutput {
            k,
            triggered: false,
            pattern: None,
            payload: Vec::new(),
            dim: signal.len(),
        };
    }
    ChannelOutput {
        k,
        triggered: true,
        pattern: Some(pattern),
        payload: pattern.indices().into_iter().map(|i| signal[i]).collect(),
        dim: signal.len(),
    }
}

/// Received components where available, the prediction elsewhere.
pub fn compensate(out: &ChannelOutput, prediction: &DVector<f64>) -> DVector<f64> {
    assert_eq!(out.dim, prediction.len(), "prediction dimension differs from channel");
    let mut z = prediction.clone();
    if let Some(p) = &out.pattern {
        for (idx, v) in p.indices().into_iter().zip(&out.payload) {
            z[idx] = *v;
        }
    }
    z
}

/// Measurement-side compensation with the predicted output `h(x^-)`.
pub fn compensate_measurement(out: &ChannelOutput, predicted_measurement: &DVector<f64>) -> DVector<f64> {
    compensate(out, predicted_measurement)
}

/// Estimate-side compensation with the one-step prediction of the previous
/// compensated estimate.
pub fn compensate_estimate(out: &ChannelOutput, predicted_estimate: &DVector<f64>) -> DVector<f64> {
    compensate(out, predicted_estimate)
}

/// True iff every budget is positive and the budgets sum to the global one.
pub fn check_bandwidth(budgets: &[usize], global: usize) -> bool {
    budgets.iter().all(|&b| b >= 1) && budgets.iter().sum::<usize>() == global
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn untriggered_sends_nothing() {
        let p = ReductionPattern::new(3, &[0, 2]).unwrap();
        let out = transmit(4, false, p, &v(&[1.0, 2.0, 3.0]));
        assert!(out.pattern.is_none() && out.payload.is_empty());
        assert_eq!(compensate_measurement(&out, &v(&[7.0, 8.0, 9.0])), v(&[7.0, 8.0, 9.0]));
    }

    #[test]
    fn reduced_payload_matches_selection_product() {
        let p = ReductionPattern::new(3, &[0, 2]).unwrap();
        let y = v(&[1.0, 2.0, 3.0]);
        let out = transmit(0, true, p, &y);
        assert_eq!(out.payload, vec![1.0, 3.0]);
        assert_eq!(out.expanded(), p.matrix() * &y);
        let full = transmit(0, true, ReductionPattern::full(3), &y);
        assert_eq!(full.expanded(), y);
        assert_eq!(compensate_measurement(&full, &v(&[0.0, 0.0, 0.0])), y);
    }

    #[test]
    fn compensation_fills_suppressed_components() {
        let out = transmit(0, true, ReductionPattern::new(2, &[0]).unwrap(), &v(&[5.0, 7.0]));
        assert_eq!(compensate_measurement(&out, &v(&[4.0, 6.0])), v(&[5.0, 6.0]));
        let out = transmit(0, true, ReductionPattern::new(3, &[1]).unwrap(), &v(&[1.0, 2.0, 3.0]));
        assert_eq!(compensate_estimate(&out, &v(&[9.0, 9.0, 9.0])), v(&[9.0, 2.0, 9.0]));
    }

    #[test]
    fn bandwidth_budgets() {
        assert!(check_bandwidth(&[2, 2], 4));
        assert!(check_bandwidth(&[1, 3], 4));
        assert!(check_bandwidth(&[3, 1], 4));
        assert!(!check_bandwidth(&[3, 3], 4));
        assert!(!check_bandwidth(&[0, 4], 4));
    }
}
