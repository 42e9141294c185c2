//! Schrödinger dynamics on metric graphs with quasi-δ vertex conditions.
//!
//! The crate discretizes the magnetic Laplacian of a quantum graph with P1
//! finite elements, builds the associated Hilbert scale, propagates
//! form-linear time-dependent Hamiltonians and implements boundary control
//! through the gauge-equivalent induction system.

use ndarray_linalg as _;

pub mod assembly;
pub mod boundary;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod quadrature;
pub mod scales;
pub mod stability;

pub use error::{Error, Result};
