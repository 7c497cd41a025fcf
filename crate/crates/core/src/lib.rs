//! Simulator for an age-structured swarmer/swimmer model with degenerate
//! diffusion and drift, built on the age-binned regularized approximation.

pub mod age_discretization;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod model_spec;
pub mod quadrature;
pub mod reduced;
pub mod solver;
pub mod spatial_grid;
pub mod table;

pub use error::{Result, SimError};
