//! Measure-pair generators, run configuration, the verification driver and
//! report serialization.

pub mod config;
pub mod generators;
pub mod report;
pub mod verify;

pub use config::{ConfigError, GeneratorSpec, RunConfig};
pub use generators::{generate_pair, GeneratorError};
pub use report::{Check, ConstantsReport, CoronaSummary};
pub use verify::verify_theorem;
