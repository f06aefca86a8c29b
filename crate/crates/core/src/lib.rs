//! Boundary control of the viscous Cahn-Hilliard equation with dynamic boundary conditions.

pub mod adjoint;
pub mod error;
pub mod geometry;
pub mod linear;
pub mod optimizer;
pub mod potentials;
pub mod reduced;
pub mod sensitivity;
pub mod sparse;
pub mod state;
pub mod trajectory;

pub use error::{Error, Result};
