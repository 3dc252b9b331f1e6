//! Second-order bath error estimates for analog quantum simulators.
//!
//! The crate evaluates the lowest-order correction that a weakly coupled bath
//! adds to a simulator observable, from three-time system correlators and a
//! bath correlation function, and turns it into a reliability verdict. A
//! brute-force oracle evolves the full system plus a discretized bath to check
//! the estimate.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bath;
pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod hilbert;
pub mod model;
pub mod oracle;
pub mod protocol;
pub mod quadrature;
pub mod scenario;

pub use error::{Error, Result};
