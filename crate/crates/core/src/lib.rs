//! Numerical toolkit for inverse quantum simulation on small systems.
//!
//! Every routine works on exactly diagonalisable Hilbert spaces so that each
//! variational or learned quantity has an exact reference.

pub mod cphl;
pub mod error;
pub mod exact;
pub mod hamlearn;
pub mod linalg;
pub mod opalg;
pub mod optim;
pub mod qp;
pub mod shl;
pub mod staircase;
pub mod studies;
pub mod varcirc;

pub use error::{Error, Result};
pub use linalg::C64;

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
