//! Dyadic machinery for two-weight local Tb estimates of fractional singular
//! integrals on finite atomic measure pairs.

pub mod bfamily;
pub mod corona;
pub mod energy;
pub mod grid;
pub mod harness;
pub mod measure;
pub mod operator;
pub mod poisson_a2;
