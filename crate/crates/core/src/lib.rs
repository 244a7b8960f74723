//! CLF/CBF quadratic-program control with a safety-triggered batch
//! least-squares parameter identifier, and an adaptive cruise control
//! benchmark that exercises it.

pub mod acc;
pub mod baselines;
pub mod cli;
pub mod error;
pub mod identifier;
pub mod model;
pub mod qp;
pub mod sim;
pub mod trigger;

pub use error::{Error, Result};
