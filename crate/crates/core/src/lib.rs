//! Time-dependent BCS / Bogoliubov-de Gennes dynamics of a translation
//! invariant one-dimensional Fermi gas with attractive contact interaction.
//!
//! * [`model`]: parameters, momentum grid, state and per-mode quantities
//! * [`equilibrium`]: critical temperature, gap and initial data
//! * [`dynamics`]: full, reduced and linearized equations and their steppers
//! * [`diagnostics`]: order parameter, free energy and series checks
//! * [`runner`]: experiment commands with CSV and SVG output

pub mod collocation;
pub mod diagnostics;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod model;
pub mod runner;
pub mod summation;

pub use error::{BdgError, Result};
