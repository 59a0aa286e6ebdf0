//! Finite-volume solver and linear-stability tools for the Aw-Rascle-Zhang
//! traffic model with non-local look-ahead relaxation, in single-class and
//! mixed HDV/CAV form, on a periodic ring road.

// `!(a > b)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod grid;
pub mod model;
pub mod nonlocal;
pub mod riemann;
pub mod run;
pub mod scenarios;
pub mod stability;
pub mod stepper;

pub use error::{GridError, ModelError, SolverError, StabilityError};
