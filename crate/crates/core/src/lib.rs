//! Post-hoc recalibration of classifier logits.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod kmeans;
pub mod loss;
pub mod maps;
pub mod metrics;
pub mod optim;
pub mod synthetic;

pub use error::{HcalError, Result};
