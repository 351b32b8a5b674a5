//! Simulation core for a dissipatively stabilized cat-state qubit.

extern crate blas_src;

pub mod error;
pub mod fock;
pub mod linalg;
pub mod lindblad;
pub mod models;
pub mod observables;
pub mod ode;
pub mod plot;
pub mod reduction;

pub use error::{Error, Result};
pub use linalg::C64;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
