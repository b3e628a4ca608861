pub mod baselines;
pub mod channels;
pub mod estimators;
pub mod harness;
pub mod error;
pub mod linalg;
pub mod lmi;
pub mod models;

pub use error::{Error, Result};
