//! Two-scale homogenized model of the 1D wave equation in a periodic medium.
//!
//! The crate computes Bloch cell spectra and coupling coefficients, solves
//! the macroscopic envelope transport system, reconstructs the two-scale
//! approximation and compares it with a direct fine-grid wave solver.

pub mod cell;
pub mod direct;
pub mod envelope;
pub mod error;
pub mod grid;
pub mod harness;
pub mod macro_solver;
pub mod spectrum;
pub mod two_scale;

pub use cell::CellCoefficients;
pub use error::{Error, Result};
