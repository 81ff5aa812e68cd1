//! Descriptor models of lossless power grids, matrix-pencil analysis and
//! data-driven predictive frequency control.

pub mod behavior;
pub mod control;
pub mod deepc;
pub mod droop;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod pencil;
pub mod qp;
pub mod schedule;
pub mod setpoint;
pub mod simulator;

pub use error::{Error, Result};
