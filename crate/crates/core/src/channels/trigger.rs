use nalgebra::DVector;

use crate::error::{Error, Result};

/// Send-on-delta trigger: fires when the signal moved more than the
/// threshold (strictly) from the last transmitted value.
#[derive(Clone, Debug)]
pub struct TriggerState {
    /// `None` means every step triggers.
    threshold: Option<f64>,
    last_sent: Option<DVector<f64>>,
}

impl TriggerState {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0) {
            return Err(Error::Config(format!("trigger threshold must be positive, got {threshold}")));
        }
        Ok(TriggerState {
            threshold: Some(threshold),
            last_sent: None,
        })
    }

    /// A trigger that fires on every step.
    pub fn always() -> Self {
        TriggerState {
            threshold: None,
            last_sent: None,
        }
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn last_sent(&self) -> Option<&DVector<f64>> {
        self.last_sent.as_ref()
    }

    /// Seeds the memory with the initial signal without transmitting.
    pub fn initialize(&mut self, signal: &DVector<f64>) {
        self.last_sent = Some(signal.clone());
    }

    /// Returns whether the step triggers, updating the memory if it does. The
    /// first call on an uninitialized trigger only seeds the memory.
    pub fn evaluate(&mut self, signal: &DVector<f64>) -> bool {
        let Some(last) = &self.last_sent else {
            self.initialize(signal);
            return self.threshold.is_none();
        };
        assert_eq!(last.len(), signal.len(), "trigger signal dimension changed");
        let fire = match self.threshold {
            None => true,
            Some(delta) => (signal - last).norm() > delta,
        };
        if fire {
            self.last_sent = Some(signal.clone());
        }
        fire
    }
}
