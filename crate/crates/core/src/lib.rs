//! Ridge regression and multi-step self-distillation for linear models.

pub mod data;
pub mod error;
pub mod serial;
pub mod solver;
pub mod estimators;
pub mod experiments;
pub mod risk;
pub mod spectral;
pub mod tuner;

pub use error::{Error, Result};
