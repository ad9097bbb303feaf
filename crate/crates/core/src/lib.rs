//! Design-based estimation for blocked, cluster-randomized experiments with
//! unit-level weights.

pub mod asymptotics;
pub mod bias_exact;
pub mod cli;
pub mod collinearity;
pub mod error;
pub mod estimators;
pub mod numeric;
pub mod population;
pub mod randomize;
pub mod report;
pub mod simlab;
pub mod variance;
pub mod wls;

pub use error::{Error, ErrorKind, Result};
