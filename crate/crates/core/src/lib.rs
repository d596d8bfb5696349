//! Spin-dynamics simulation of twist-and-turn squeezing in a collective spin.

pub mod analysis;
pub mod error;
pub mod hamiltonian;
pub mod mcwf;
pub mod pipeline;
pub mod meanfield;
pub mod sequence;
pub mod spin;
pub mod tridiag;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
